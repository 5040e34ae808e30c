"""Hot inner loops with a compiled core and a numpy fallback.

The Cython extension ``_ckernels`` is preferred.  When it is missing (no
compiler at install time) or ``MDM_PURE_PYTHON`` is set to a non-empty value
other than ``0``, the pure numpy module ``_pykernels`` is used instead.  Both
expose the same three functions.
"""

from __future__ import annotations

import os

from mdm._kernels import _pykernels

_force_pure = os.environ.get("MDM_PURE_PYTHON", "") not in ("", "0")

try:
    if _force_pure:
        raise ImportError("pure python kernels requested")
    from mdm._kernels import _ckernels as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"

cbc_criteria = _impl.cbc_criteria
compensated_add = _impl.compensated_add
lattice_points = _impl.lattice_points


def implementations():
    """Return ``{name: module}`` for every kernel implementation importable here."""
    found = {"python": _pykernels}
    try:
        from mdm._kernels import _ckernels
    except ImportError:
        pass
    else:
        found["cython"] = _ckernels
    return found


__all__ = ["BACKEND", "cbc_criteria", "compensated_add", "lattice_points", "implementations"]
