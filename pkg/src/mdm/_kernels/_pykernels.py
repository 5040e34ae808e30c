"""Pure numpy implementations of the hot loops.

These mirror ``_ckernels.pyx`` one-for-one and are used whenever the compiled
module is unavailable (or ``MDM_PURE_PYTHON=1`` is set).
"""

from __future__ import annotations

import numpy as np

# rows of the (candidates x n) modular table processed per block
_CBC_BLOCK = 256


def cbc_criteria(n: int, base: np.ndarray) -> np.ndarray:
    """Shift-averaged squared-error criterion for every candidate component.

    For each ``z`` in ``1..n-1`` returns ``mean_k base[k] * (1 + 6 B2({k z / n}))``
    where ``B2(t) = t^2 - t + 1/6``.  ``base`` holds the running product over
    the components already fixed.
    """
    base = np.ascontiguousarray(base, dtype=np.float64)
    if base.shape != (n,):
        raise ValueError(f"base must have shape ({n},), got {base.shape}")
    t = np.arange(n, dtype=np.float64) / n
    table = 1.0 + 6.0 * (t * t - t + 1.0 / 6.0)
    k = np.arange(n, dtype=np.int64)
    out = np.empty(n - 1, dtype=np.float64)
    for lo in range(1, n, _CBC_BLOCK):
        hi = min(n, lo + _CBC_BLOCK)
        z = np.arange(lo, hi, dtype=np.int64)
        idx = np.multiply.outer(z, k) % n
        out[lo - 1:hi - 1] = (table[idx] * base).sum(axis=1) / n
    return out


def compensated_add(s: np.ndarray, c: np.ndarray, x: np.ndarray) -> None:
    """Add ``x`` into the Neumaier accumulator ``(s, c)`` in place.

    The compensated total is ``s + c`` once every term has been added.
    """
    x = np.asarray(x, dtype=np.float64)
    if s.shape != x.shape or c.shape != x.shape:
        raise ValueError("s, c and x must share one shape")
    t = s + x
    big = np.abs(s) >= np.abs(x)
    c += np.where(big, (s - t) + x, (x - t) + s)
    s[...] = t


def lattice_points(n: int, z: np.ndarray, shift: np.ndarray) -> np.ndarray:
    """Points ``{i z / n + shift} - 1/2`` for ``i = 1..n`` as an ``(n, d)`` array."""
    z = np.asarray(z, dtype=np.int64) % n
    shift = np.asarray(shift, dtype=np.float64)
    if n >= 2**31:
        raise ValueError("lattice size must be below 2**31")
    i = np.arange(1, n + 1, dtype=np.int64) % n
    # i, z < n < 2**31 keeps the product inside int64
    r = np.multiply.outer(i, z) % n
    x = r / n + shift
    x -= np.floor(x)
    return x - 0.5
