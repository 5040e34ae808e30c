"""Randomly shifted rank-1 lattice rules on ``[-1/2, 1/2]^d``.

The ``i``-th point of a rule with generating vector ``z`` and shift ``Delta``
is ``{i z / n + Delta} - 1/2``.  Generating vectors come from a plain
component-by-component (CBC) search that minimises the shift-averaged squared
worst-case error in the anchored Sobolev space (all weights one)::

    e^2(z) = 12^(-d) * [ (1/n) sum_k prod_j (1 + 6 B2({k z_j / n})) - 1 ],

with ``B2(t) = t^2 - t + 1/6``.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import zeta

from mdm import _kernels
from mdm.allocation import is_prime

DEFAULT_SHIFTS = 8
#: Largest ``n * n * d`` accepted by the plain CBC search.
CBC_WORK_BUDGET = 4 * 10**10
# relative tolerance under which two CBC criterion values count as a tie
_TIE_RTOL = 1e-12


class LatticeError(ValueError):
    """Invalid lattice parameters."""


class CbcBudgetError(RuntimeError):
    """The plain CBC search would take too long."""


def bernoulli2(t):
    t = np.asarray(t, dtype=np.float64)
    return t * t - t + 1.0 / 6.0


def _check_n(n: int) -> None:
    if n < 3 or not is_prime(n):
        raise LatticeError(f"lattice size must be a prime >= 3, got {n}")


def _table(n: int) -> np.ndarray:
    t = np.arange(n, dtype=np.float64) / n
    return 1.0 + 6.0 * bernoulli2(t)


def _argmin_tie(crit: np.ndarray) -> int:
    """Index of the minimum; near-ties (rounding-level) go to the smallest index."""
    best = float(crit.min())
    tol = _TIE_RTOL * max(abs(best), 1e-300)
    return int(np.flatnonzero(crit <= best + tol)[0])


_cbc_cache: dict = {}
_cbc_lock = threading.Lock()


def cbc_construct(n: int, d: int, *, budget: int = CBC_WORK_BUDGET) -> np.ndarray:
    """Generating vector of length ``d`` for the prime ``n`` (plain CBC).

    Components are chosen greedily; ties go to the smallest candidate.  The
    greedy choice for ``d`` dimensions is a prefix of that for ``d + 1``, so
    vectors are cached per ``n`` and extended on demand.
    """
    _check_n(n)
    if d < 1:
        raise LatticeError(f"dimension must be >= 1, got {d}")
    with _cbc_lock:
        z, base = _cbc_cache.get(n, ((), None))
    if len(z) >= d:
        return np.array(z[:d], dtype=np.int64)
    if n * n * (d - len(z)) > budget:
        raise CbcBudgetError(f"CBC for n={n}, d={d} exceeds the work budget {budget}")
    table = _table(n)
    k = np.arange(n, dtype=np.int64)
    base = np.ones(n) if base is None else base.copy()
    z = list(z)
    while len(z) < d:
        crit = _kernels.cbc_criteria(n, base)
        zs = _argmin_tie(crit) + 1
        z.append(zs)
        base *= table[(k * zs) % n]
    with _cbc_lock:
        old = _cbc_cache.get(n, ((), None))[0]
        if len(old) < len(z):
            _cbc_cache[n] = (tuple(z), base)
    return np.array(z[:d], dtype=np.int64)


def cbc_criterion(n: int, z) -> float:
    """Shift-averaged squared worst-case error ``e^2(z)`` (product form)."""
    z = np.asarray(z, dtype=np.int64)
    k = np.arange(n, dtype=np.int64)
    table = _table(n)
    prod = np.ones(n)
    for zj in z:
        prod *= table[(k * zj) % n]
    return 12.0 ** (-len(z)) * (math.fsum(prod) / n - 1.0)


def shift_averaged_kernel(x, y):
    """Shift-averaged anchored kernel ``prod_j (1/12 + B2({x_j - y_j}) / 2)``."""
    diff = np.mod(np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64), 1.0)
    return np.prod(1.0 / 12.0 + 0.5 * bernoulli2(diff), axis=-1)


@dataclass(frozen=True)
class LatticeRule:
    """Rank-1 lattice rule with ``M`` random shifts drawn from ``rng_seed``."""

    n: int
    z: tuple
    shifts: np.ndarray = field(repr=False)
    rng_seed: int = 0
    antithetic: bool = False

    def __post_init__(self):
        _check_n(self.n)
        z = tuple(int(v) for v in self.z)
        for v in z:
            if math.gcd(v, self.n) != 1 or not 1 <= v <= self.n - 1:
                raise LatticeError(f"generating vector entries must lie in 1..n-1, got {v}")
        object.__setattr__(self, "z", z)
        shifts = np.asarray(self.shifts, dtype=np.float64).reshape(-1, len(z))
        if shifts.shape[0] < 1 or np.any((shifts < 0) | (shifts >= 1)):
            raise LatticeError("shifts must lie in [0, 1)")
        object.__setattr__(self, "shifts", shifts)

    @property
    def d(self) -> int:
        return len(self.z)

    @property
    def m_shifts(self) -> int:
        return self.shifts.shape[0]


def make_rule(n: int, d: int, *, m_shifts: int = DEFAULT_SHIFTS, seed: int = 0,
              z=None, antithetic: bool = False) -> LatticeRule:
    """CBC rule (or one with the given ``z``) with ``m_shifts`` seeded shifts.

    With ``antithetic`` the shifts come in pairs ``Delta, 1 - Delta``, which
    makes the estimate of any odd integrand vanish.
    """
    z = cbc_construct(n, d) if z is None else np.asarray(z, dtype=np.int64)
    rng = np.random.default_rng(seed)
    if antithetic:
        if m_shifts % 2:
            raise LatticeError("antithetic mode needs an even number of shifts")
        half = rng.random((m_shifts // 2, d))
        mirror = np.mod(1.0 - half, 1.0)
        shifts = np.empty((m_shifts, d))
        shifts[0::2] = half
        shifts[1::2] = mirror
    else:
        shifts = rng.random((m_shifts, d))
    return LatticeRule(n, tuple(z), shifts, seed, antithetic)


def lattice_points(rule: LatticeRule, shift_index: int | None = None) -> np.ndarray:
    """Points of one shift ``(n, d)``, or of all shifts ``(M, n, d)``."""
    z = np.asarray(rule.z, dtype=np.int64)
    if shift_index is not None:
        return _kernels.lattice_points(rule.n, z, rule.shifts[shift_index])
    return np.stack([_kernels.lattice_points(rule.n, z, s) for s in rule.shifts])


def lattice_integrate(rule: LatticeRule, g) -> tuple:
    """``(estimate, rms)``: mean over shifts and its standard error.

    ``g`` maps an ``(n, d)`` point array to ``n`` values.  The standard error is
    the sample standard deviation of the per-shift means divided by ``sqrt(M)``
    (NaN for a single shift).
    """
    per_shift = shift_means(rule, g)
    M = per_shift.shape[0]
    est = math.fsum(per_shift) / M
    if M < 2:
        return est, math.nan
    dev = per_shift - est
    rms = math.sqrt(math.fsum(dev * dev) / (M - 1) / M)
    return est, rms


def shift_means(rule: LatticeRule, g) -> np.ndarray:
    out = np.empty(rule.m_shifts)
    for m in range(rule.m_shifts):
        vals = np.asarray(g(lattice_points(rule, m)), dtype=np.float64)
        out[m] = math.fsum(vals) / rule.n
    return out


def g_constant_ratio(q: float) -> float:
    """Per-coordinate growth factor ``(2 zeta(1/q) / (2 pi^2)^(1/(2q)) + 12^(-1/(2q)))^q``."""
    _check_q(q)
    base = 2.0 * zeta(1.0 / q) / (2.0 * math.pi**2) ** (1.0 / (2.0 * q)) + 12.0 ** (-1.0 / (2.0 * q))
    return base**q


def g_lattice(card: int, q: float) -> float:
    """``G_{u,q}`` of the lattice error model for ``|u| = card``."""
    return 2.0**q * g_constant_ratio(q) ** card


def _check_q(q: float) -> None:
    if not 0.5 <= q < 1.0:
        raise LatticeError(f"lattice rules need q in [1/2, 1), got {q}")


def write_generating_vector(path, n: int, z) -> None:
    """Write ``"n d z_1 ... z_d"`` to ``path``."""
    z = [int(v) for v in z]
    Path(path).write_text(" ".join(str(v) for v in [n, len(z), *z]) + "\n")


def read_generating_vector(path) -> tuple:
    """Read ``(n, z)`` written by :func:`write_generating_vector`."""
    toks = Path(path).read_text().split()
    if len(toks) < 2:
        raise LatticeError("generating vector file must start with 'n d'")
    n, d = int(toks[0]), int(toks[1])
    z = [int(t) for t in toks[2:]]
    if len(z) != d:
        raise LatticeError(f"expected {d} components, found {len(z)}")
    _check_n(n)
    return n, np.array(z, dtype=np.int64)
