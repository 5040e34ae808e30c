"""Anchored decomposition terms of a black-box integrand.

An integrand of infinitely many variables is only ever sampled at *anchored*
points: finitely many labelled coordinates carry values and every other
coordinate sits at the anchor ``0``.  Integrand callbacks therefore use the
batch signature::

    f(indices: tuple[int, ...], x: ndarray of shape (m, len(indices))) -> ndarray (m,)

where ``indices`` are the (1-based, strictly increasing) coordinate labels and
row ``i`` of ``x`` gives their values for the ``i``-th point.

The anchored term ``f_u`` is recovered by inclusion-exclusion over all
``v`` contained in ``u``::

    f_u(x_u) = sum_{v <= u} (-1)^{|u|-|v|} f(x_v; 0)
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from mdm import _kernels

ANCHOR = 0.0
MAX_CARDINALITY = 30


class DecompositionError(ValueError):
    """Base class for invalid requests to the decomposition layer."""


class DomainError(DecompositionError):
    """A coordinate lies outside the integration domain."""


class CardinalityError(DecompositionError):
    """Inclusion-exclusion over ``2^|u|`` terms was refused."""


class EvaluationError(ArithmeticError):
    """The integrand returned a non-finite value."""


class Subset(tuple):
    """Finite set of coordinate labels, stored as a strictly increasing tuple.

    ``Subset()`` is the empty set.  Subsets compare and hash like the plain
    tuple of their labels.
    """

    __slots__ = ()

    def __new__(cls, indices: Sequence[int] = ()):
        labels = []
        for i in indices:
            if isinstance(i, (bool, np.bool_)) or int(i) != i:
                raise DecompositionError(f"subset labels must be integers, got {i!r}")
            labels.append(int(i))
        for a, b in zip(labels, labels[1:]):
            if b <= a:
                raise DecompositionError(f"subset labels must be strictly increasing: {labels}")
        if labels and labels[0] < 1:
            raise DecompositionError(f"subset labels must be >= 1: {labels}")
        return super().__new__(cls, labels)

    @property
    def cardinality(self) -> int:
        return len(self)

    @property
    def truncation_dimension(self) -> int:
        """Largest label, 0 for the empty set."""
        return self[-1] if self else 0

    def sort_key(self) -> tuple:
        """Canonical order: truncation dimension, then cardinality, then lexicographic."""
        return (self.truncation_dimension, len(self), tuple(self))

    def subsets(self) -> Iterator["Subset"]:
        """All ``v`` contained in ``self``, by increasing cardinality then lexicographically."""
        for k in range(len(self) + 1):
            for combo in itertools.combinations(self, k):
                yield Subset(combo)

    def __repr__(self) -> str:
        return "Subset(" + repr(tuple(self)) + ")"


class Domain(enum.Enum):
    """Univariate integration domain together with its density."""

    SYMMETRIC_UNIT = "symmetric-unit"  # [-1/2, 1/2], density 1
    HALF_LINE = "half-line"  # [0, inf), density exp(-x)

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self is Domain.SYMMETRIC_UNIT:
            return (x >= -0.5) & (x <= 0.5)
        return (x >= 0.0) & np.isfinite(x)

    def check(self, x) -> None:
        x = np.asarray(x, dtype=np.float64)
        if x.size and not np.all(self.contains(x)):
            bad = x[~self.contains(x)].ravel()[0]
            raise DomainError(f"coordinate {bad!r} lies outside the {self.value} domain")


@dataclass(frozen=True)
class AnchoredPoint:
    """Point whose coordinates listed in ``subset`` are ``coords``; all others are 0."""

    subset: Subset
    coords: tuple

    def __post_init__(self):
        object.__setattr__(self, "subset", Subset(self.subset))
        object.__setattr__(self, "coords", tuple(float(c) for c in self.coords))
        if len(self.coords) != len(self.subset):
            raise DecompositionError(
                f"{len(self.coords)} coordinates given for a subset of size {len(self.subset)}"
            )


@dataclass(frozen=True)
class CostModel:
    """Cost ``$(k)`` of one anchored evaluation with ``k`` active coordinates.

    ``kind`` selects ``constant`` (``$(k) = a``), ``linear`` (``a + b k``) or
    ``exponential`` (``a * b**k``).  A custom non-decreasing callable can be
    passed as ``dollar_fn``; it then takes precedence over ``kind``.
    """

    kind: str = "constant"
    a: float = 1.0
    b: float = 0.0
    dollar_fn: Callable[[int], float] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.dollar_fn is None and self.kind not in ("constant", "linear", "exponential"):
            raise ValueError(f"unknown cost model kind {self.kind!r}")
        if self.kind == "exponential" and self.dollar_fn is None and self.b < 1.0:
            raise ValueError("exponential cost needs base b >= 1")
        prev = 0.0
        for k in range(MAX_CARDINALITY + 1):
            cur = self.dollar(k)
            if not (cur > 0.0 and math.isfinite(cur)):
                raise ValueError(f"$({k}) = {cur} must be positive and finite")
            if cur < prev:
                raise ValueError(f"$ must be non-decreasing, but $({k}) < $({k - 1})")
            prev = cur

    def dollar(self, k: int) -> float:
        if self.dollar_fn is not None:
            return float(self.dollar_fn(k))
        if self.kind == "constant":
            return self.a
        if self.kind == "linear":
            return self.a + self.b * k
        return self.a * self.b**k

    def pound(self, k: int) -> float:
        """Cost of one value of ``f_u`` with ``|u| = k``: ``sum_j C(k, j) $(j)``."""
        return math.fsum(math.comb(k, j) * self.dollar(j) for j in range(k + 1))

    def to_dict(self) -> dict:
        if self.dollar_fn is not None:
            raise ValueError("a callable cost model cannot be serialized")
        return {"kind": self.kind, "a": self.a, "b": self.b}

    @classmethod
    def from_dict(cls, data: dict) -> "CostModel":
        return cls(kind=data.get("kind", "constant"), a=float(data.get("a", 1.0)),
                   b=float(data.get("b", 0.0)))


@dataclass
class Tally:
    """Per-run cost counters.

    ``model_cost`` follows the ``$``/``£`` model without any caching;
    ``raw_calls`` counts integrand values actually computed.
    """

    cost: CostModel = field(default_factory=CostModel)
    model_cost: float = 0.0
    raw_calls: int = 0

    def merge(self, other: "Tally") -> None:
        self.model_cost += other.model_cost
        self.raw_calls += other.raw_calls

    def fresh(self) -> "Tally":
        return Tally(self.cost)


def _call(f, indices: Subset, x: np.ndarray) -> np.ndarray:
    out = np.asarray(f(tuple(indices), x), dtype=np.float64).reshape(-1)
    if out.shape[0] != x.shape[0]:
        raise EvaluationError(
            f"integrand returned {out.shape[0]} values for {x.shape[0]} points"
        )
    if not np.all(np.isfinite(out)):
        raise EvaluationError(f"integrand returned a non-finite value on subset {tuple(indices)}")
    return out


def evaluate_anchored(f, point: AnchoredPoint, *, domain: Domain | None = None,
                      tally: Tally | None = None) -> float:
    """Evaluate ``f`` at one anchored point, charging ``$(|u|)`` to ``tally``."""
    x = np.asarray(point.coords, dtype=np.float64).reshape(1, -1)
    if domain is not None:
        domain.check(x)
    value = float(_call(f, point.subset, x)[0])
    if tally is not None:
        tally.model_cost += tally.cost.dollar(len(point.subset))
        tally.raw_calls += 1
    return value


def _row_codes(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(first_index, inverse)`` identifying equal rows of ``x``."""
    m, k = x.shape
    if k == 0:
        return np.zeros(1, dtype=np.int64), np.zeros(m, dtype=np.int64)
    code = np.zeros(m, dtype=np.int64)
    radix = 1
    for j in range(k):
        _, inv = np.unique(x[:, j], return_inverse=True)
        size = int(inv.max()) + 1 if m else 1
        if radix * size >= 2**62:
            _, first, inverse = np.unique(x, axis=0, return_index=True, return_inverse=True)
            return first, inverse.reshape(-1)
        code += inv.reshape(-1).astype(np.int64) * radix
        radix *= size
    _, first, inverse = np.unique(code, return_index=True, return_inverse=True)
    return first, inverse.reshape(-1)


def decomposition_term(f, u, x, *, domain: Domain | None = None, tally: Tally | None = None,
                       memo: bool = True, cap: int = MAX_CARDINALITY):
    """Evaluate the anchored term ``f_u`` at one point or a batch of points.

    Parameters
    ----------
    f : callable
        Batch integrand, see the module docstring.
    u : Subset or sequence of int
        Active coordinate labels.
    x : array_like
        Coordinates over ``u``; shape ``(|u|,)`` for one point or ``(m, |u|)``.
    domain : Domain, optional
        When given, every coordinate is checked against it first.
    tally : Tally, optional
        Charged ``m * £(|u|)`` model cost plus the integrand calls made.
    memo : bool
        Evaluate each distinct projection ``x_v`` only once.
    cap : int
        Largest ``|u|`` accepted; larger subsets raise :class:`CardinalityError`.

    Returns
    -------
    float or ndarray
        Scalar for a single point, otherwise an array of shape ``(m,)``.
    """
    u = Subset(u)
    k = len(u)
    if k > cap:
        raise CardinalityError(f"|u| = {k} exceeds the inclusion-exclusion cap {cap}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = x.reshape(1, -1) if single else x
    if x.ndim != 2 or x.shape[1] != k:
        raise DecompositionError(f"expected coordinates of shape (m, {k}), got {x.shape}")
    if domain is not None:
        domain.check(x)
    m = x.shape[0]
    s = np.zeros(m)
    c = np.zeros(m)
    calls = 0
    position = {label: j for j, label in enumerate(u)}
    for v in u.subsets():
        xv = np.ascontiguousarray(x[:, [position[j] for j in v]])
        if memo:
            first, inverse = _row_codes(xv)
            vals = _call(f, v, xv[first])[inverse]
            calls += first.shape[0]
        else:
            vals = _call(f, v, xv)
            calls += m
        if (k - len(v)) % 2:
            vals = -vals
        _kernels.compensated_add(s, c, vals)
    out = s + c
    if tally is not None:
        tally.model_cost += m * tally.cost.pound(k)
        tally.raw_calls += calls
    return float(out[0]) if single else out


def reconstruct(f, d: int, x, *, domain: Domain | None = None, tally: Tally | None = None,
                cap: int = MAX_CARDINALITY):
    """Sum of ``f_u(x_u)`` over every ``u`` contained in ``{1, ..., d}``.

    Equals ``f(x_1, ..., x_d, 0, 0, ...)``; kept as a test oracle.
    """
    if d > cap:
        raise CardinalityError(f"d = {d} exceeds the inclusion-exclusion cap {cap}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = x.reshape(1, -1) if single else x
    if x.shape[1] != d:
        raise DecompositionError(f"expected {d} coordinates, got {x.shape[1]}")
    s = np.zeros(x.shape[0])
    c = np.zeros(x.shape[0])
    for u in Subset(range(1, d + 1)).subsets():
        cols = [j - 1 for j in u]
        _kernels.compensated_add(
            s, c, decomposition_term(f, u, x[:, cols], domain=domain, tally=tally, cap=cap)
        )
    out = s + c
    return float(out[0]) if single else out


def from_scalar(fn: Callable[[tuple, np.ndarray], float]):
    """Wrap ``fn(indices, coords) -> float`` into the batch integrand signature."""

    def batch(indices, x):
        return np.array([fn(indices, row) for row in np.asarray(x)], dtype=np.float64)

    return batch
