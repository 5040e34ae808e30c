"""Trapezoidal Smolyak rules for anchored integrands.

Two univariate families are provided:

``anchored-unit``
    Composite trapezoid on ``[-1/2, 1/2]`` with nodes ``-1/2 + k/2^i``.  The
    node at the anchor is dropped, because every integrand vanishes there.
``exp-weighted``
    Trapezoid-type rules for ``int_0^inf g(x) exp(-x) dx`` with nodes
    ``x_{i,k} = -2 ln(1 - k/(2^i + 1))``.  ``U_i(g)`` is the exact integral of
    the piecewise-linear interpolant of ``g`` (held constant after the last
    node) against ``exp(-x)``.

The ``d``-variate rule of level ``kappa`` is the combination::

    Q_{d,kappa} = sum_{kappa-d+1 <= |i| <= kappa} (-1)^(kappa-|i|) C(d-1, kappa-|i|) U_{i_1} x ... x U_{i_d}

over multi-indices ``i >= 1``; it is the zero rule when ``kappa < d``.
Nodes are merged through exact rational keys, so counts are reproducible.
"""

from __future__ import annotations

import enum
import io
import math
import threading
from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np

#: Constant in the worst-case error of the exp-weighted univariate rules.
C1_EXP = 1.00656
#: Default cap on the number of tensor-grid points visited while combining.
NODE_BUDGET = 20_000_000


class RuleBudgetError(RuntimeError):
    """The requested rule would exceed the node budget."""


class Family(enum.Enum):
    ANCHORED_UNIT = "anchored-unit"
    EXP_WEIGHTED = "exp-weighted"


def as_family(family) -> Family:
    if isinstance(family, Family):
        return family
    try:
        return Family(str(family).lower().replace("_", "-"))
    except ValueError:
        raise ValueError(f"unknown univariate family {family!r}") from None


@dataclass(frozen=True)
class QuadratureRule:
    """Explicit nodes and weights of a rule in ``d`` dimensions."""

    family: Family
    d: int
    kappa: int
    nodes: np.ndarray  # (m, d)
    weights: np.ndarray  # (m,)

    def __len__(self) -> int:
        return self.weights.shape[0]

    @property
    def size(self) -> int:
        return len(self)

    def integrate(self, g) -> float:
        """Apply the rule to a vectorized ``g((m, d) array) -> (m,)``."""
        if len(self) == 0:
            return 0.0
        vals = np.asarray(g(self.nodes), dtype=np.float64)
        return float(math.fsum(self.weights * vals))

    def to_text(self) -> str:
        """One node per line: coordinates followed by the weight."""
        buf = io.StringIO()
        buf.write(f"# family={self.family.value} d={self.d} kappa={self.kappa} n={len(self)}\n")
        for x, w in zip(self.nodes, self.weights):
            buf.write(" ".join(repr(float(v)) for v in x) + " " + repr(float(w)) + "\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "QuadratureRule":
        header = {}
        rows = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    key, _, val = tok.partition("=")
                    header[key] = val
                continue
            rows.append([float(t) for t in line.split()])
        d = int(header["d"])
        arr = np.array(rows, dtype=np.float64).reshape(-1, d + 1)
        return cls(Family(header["family"]), d, int(header["kappa"]),
                   arr[:, :d].copy(), arr[:, d].copy())


# ---------------------------------------------------------------------------
# univariate levels
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _level(family: Family, i: int):
    """``(keys, nodes, weights)`` of ``U_i`` with the anchor node removed.

    Keys are reduced rationals ``(p, q)`` with the node a function of ``p/q``.
    """
    if i <= 0:
        return (), np.empty(0), np.empty(0)
    N = 2**i
    if family is Family.ANCHORED_UNIT:
        k = np.arange(N + 1)
        w = np.full(N + 1, 1.0 / N)
        w[0] = w[-1] = 0.5 / N
        keep = k != N // 2
        k, w = k[keep], w[keep]
        keys = tuple(_reduce(int(kk), N) for kk in k)  # position k/N of the node
        nodes = -0.5 + k / N
        return keys, nodes, w
    k = np.arange(1, N + 1)
    nodes = -2.0 * np.log1p(-k / (N + 1))
    D = _exp_slopes(N)
    w = np.empty(N)
    w[:-1] = D[:-1] - D[1:]
    w[-1] = D[-1]
    keys = tuple(_reduce(int(kk), N + 1) for kk in k)
    return keys, nodes, w


def _reduce(p: int, q: int) -> tuple:
    g = math.gcd(p, q)
    return (p // g, q // g)


def _exp_slopes(N: int) -> np.ndarray:
    """``D_k = (e^{-x_k} - e^{-x_{k+1}}) / (x_{k+1} - x_k)`` for ``k = 0..N-1``.

    Uses ``e^{-x_k} = ((N+1-k)/(N+1))^2`` and ``x_{k+1} - x_k = 2 log1p(1/(N-k))``.
    """
    k = np.arange(N, dtype=np.float64)
    a = (N + 1 - k) / (N + 1)
    b = (N - k) / (N + 1)
    return (a - b) * (a + b) / (2.0 * np.log1p(1.0 / (N - k)))


def univariate_rule(family, i: int) -> QuadratureRule:
    """Level-``i`` univariate rule (``i = 0`` is the zero rule)."""
    fam = as_family(family)
    if i < 0:
        raise ValueError(f"level must be non-negative, got {i}")
    _, nodes, w = _level(fam, i)
    return QuadratureRule(fam, 1, i, nodes.reshape(-1, 1).copy(), w.copy())


def full_nodes(family, i: int) -> np.ndarray:
    """All ``2^i + 1`` grid points of level ``i`` including the anchor."""
    fam = as_family(family)
    N = 2**i
    k = np.arange(N + 1)
    if fam is Family.ANCHORED_UNIT:
        return -0.5 + k / N
    return -2.0 * np.log1p(-k / (N + 1))


# ---------------------------------------------------------------------------
# combination
# ---------------------------------------------------------------------------


def compositions(total: int, parts: int):
    """All tuples of ``parts`` positive integers summing to ``total``."""
    if parts == 1:
        if total >= 1:
            yield (total,)
        return
    for first in range(1, total - parts + 2):
        for rest in compositions(total - first, parts - 1):
            yield (first,) + rest


def combination_terms(d: int, kappa: int):
    """``(multi-index, coefficient)`` pairs of the combination formula."""
    for s in range(max(d, kappa - d + 1), kappa + 1):
        c = (-1) ** (kappa - s) * math.comb(d - 1, kappa - s)
        for i in compositions(s, d):
            yield i, c


_cache: dict = {}
_cache_lock = threading.Lock()


def smolyak_rule(family, d: int, kappa: int, *, budget: int = NODE_BUDGET,
                 cache: bool = True) -> QuadratureRule:
    """Sparse-grid rule ``Q_{d,kappa}`` with duplicate nodes merged.

    Nodes whose merged weight is zero are kept: they are still part of the
    node set counted by :func:`point_count`.
    """
    fam = as_family(family)
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    key = (fam, d, kappa)
    _check_budget(d, kappa, budget)  # independent of cache state
    if cache:
        hit = _cache.get(key)
        if hit is not None:
            return hit
    if kappa < d:
        rule = QuadratureRule(fam, d, kappa, np.empty((0, d)), np.empty(0))
    else:
        rule = _build(fam, d, kappa, budget)
    if cache:
        with _cache_lock:
            rule = _cache.setdefault(key, rule)
    return rule


def visited_points(d: int, kappa: int) -> int:
    """Number of tensor-grid points touched before merging."""
    total = 0
    for s in range(max(d, kappa - d + 1), kappa + 1):
        total += math.comb(s - 1, d - 1) * 2**s
    return total


def _check_budget(d: int, kappa: int, budget: int) -> None:
    visits = visited_points(d, kappa) if kappa >= d else 0
    if visits > budget:
        raise RuleBudgetError(
            f"Q_{{{d},{kappa}}} visits {visits} grid points, above the budget {budget}"
        )


def _build(fam: Family, d: int, kappa: int, budget: int) -> QuadratureRule:
    top = kappa - d + 1
    # global integer ids for the distinct univariate nodes of levels 1..top
    ids: dict = {}
    values = []
    level_ids = {}
    for i in range(1, top + 1):
        keys, nodes, _ = _level(fam, i)
        arr = np.empty(len(keys), dtype=np.int64)
        for j, (kk, x) in enumerate(zip(keys, nodes)):
            idx = ids.get(kk)
            if idx is None:
                idx = ids[kk] = len(values)
                values.append(x)
            arr[j] = idx
        level_ids[i] = arr
    M = len(values)
    values = np.asarray(values, dtype=np.float64)
    radix_ok = d * math.log2(max(M, 2)) < 62
    key_parts, w_parts = [], []
    for multi, coef in combination_terms(d, kappa):
        grids = [level_ids[i] for i in multi]
        wts = [_level(fam, i)[2] for i in multi]
        mesh = np.meshgrid(*grids, indexing="ij")
        wmesh = np.meshgrid(*wts, indexing="ij")
        w = coef * np.prod(np.stack([m.ravel() for m in wmesh]), axis=0)
        cols = np.stack([m.ravel() for m in mesh], axis=1)
        key_parts.append(cols)
        w_parts.append(w)
    cols = np.concatenate(key_parts)
    w = np.concatenate(w_parts)
    if radix_ok:
        code = np.zeros(cols.shape[0], dtype=np.int64)
        for j in range(d):
            code = code * M + cols[:, j]
        uniq, inverse = np.unique(code, return_inverse=True)
        rows = np.empty((uniq.shape[0], d), dtype=np.int64)
        rest = uniq.copy()
        for j in range(d - 1, -1, -1):
            rows[:, j] = rest % M
            rest //= M
    else:
        rows, inverse = np.unique(cols, axis=0, return_inverse=True)
    weights = np.bincount(inverse.reshape(-1), weights=w, minlength=rows.shape[0])
    return QuadratureRule(fam, d, kappa, values[rows], weights)


def clear_cache() -> None:
    with _cache_lock:
        _cache.clear()


# ---------------------------------------------------------------------------
# point counts
# ---------------------------------------------------------------------------


def _primitive_levels(fam: Family, top: int):
    """``[(count, levels)]``: univariate nodes grouped by the set of levels containing them.

    anchored-unit: the levels are nested, a node first seen at level ``s``
    belongs to every level ``>= s``.  exp-weighted: ``p/q`` lies on level
    ``i`` iff ``2^i = -1 (mod q)``, i.e. on the odd multiples of the first
    such level.
    """
    out = []
    if fam is Family.ANCHORED_UNIT:
        for s in range(1, top + 1):
            new = 2 if s == 1 else 2 ** (s - 1)
            out.append((new, tuple(range(s, top + 1))))
        return out
    prim = {}
    for g in range(1, top + 1):
        shared = sum(prim[h] for h in prim if g % h == 0 and (g // h) % 2 == 1)
        prim[g] = 2**g - shared
        out.append((prim[g], tuple(range(g, top + 1, 2 * g))))
    return out


def point_count(family, d: int, kappa: int) -> int:
    """Exact number of distinct nodes of ``Q_{d,kappa}`` (0 for the zero rule)."""
    fam = as_family(family)
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    if kappa < d:
        return 0
    if d == 1:
        return 2**kappa
    return _count(fam, d, kappa)


@lru_cache(maxsize=4096)
def _count(fam: Family, d: int, kappa: int) -> int:
    top = kappa - d + 1
    lo = kappa - d + 1
    types = _primitive_levels(fam, top)
    full = (1 << (kappa + 1)) - 1
    # state: bitmask of attainable partial level sums (bit s <=> sum s)
    states = {1: 1}
    for _ in range(d):
        nxt: dict = {}
        for mask, cnt in states.items():
            for c, levels in types:
                m = 0
                for lv in levels:
                    m |= mask << lv
                m &= full
                if m:
                    nxt[m] = nxt.get(m, 0) + cnt * c
        states = nxt
    window = full & ~((1 << lo) - 1)
    return sum(cnt for mask, cnt in states.items() if mask & window)


# ---------------------------------------------------------------------------
# error bounds
# ---------------------------------------------------------------------------


def error_bound(family, d: int, kappa: int) -> float:
    """Worst-case error bound of ``Q_{d,kappa}``; the functional norm for the zero rule."""
    fam = as_family(family)
    if fam is Family.ANCHORED_UNIT:
        if kappa < d:
            return 12.0 ** (-d / 2)
        return 2.0 ** (-kappa - 1) * 3.0 ** (-d / 2) * math.sqrt(math.comb(kappa, d - 1))
    if kappa < d:
        return 1.0
    return C1_EXP * 2.0 ** (-(kappa - d + 1)) * math.comb(kappa, d - 1)


def kernel_l2_norm(i: int) -> float:
    """L2 norm of the univariate error kernel ``K_i`` of the anchored-unit family.

    On each cell ``[t_k, t_{k+1}]`` the kernel is ``(t_k + t_{k+1})/2 - t``;
    its squared integral over the cell is ``(t_{k+1} - t_k)^3 / 12``.
    """
    t = full_nodes(Family.ANCHORED_UNIT, i)
    h = np.diff(t)
    return math.sqrt(math.fsum(h**3 / 12.0))


def exp_worst_case_error(i: int) -> float:
    """Exact worst-case error of the level-``i`` exp-weighted rule.

    For ``||g'||_inf <= 1`` the error is ``int (e^{-t} - s(t)) g'(t) dt`` where
    ``s`` equals the cell slope ``D_k`` on each cell and 0 beyond the last
    node, so the worst case is ``int |e^{-t} - s(t)| dt``.
    """
    if i == 0:
        return 1.0
    N = 2**i
    x = full_nodes(Family.EXP_WEIGHTED, i)
    D = _exp_slopes(N)
    a, b = x[:-1], x[1:]
    ea = ((N + 1 - np.arange(N)) / (N + 1)) ** 2
    eb = ((N - np.arange(N)) / (N + 1)) ** 2
    ts = -np.log(D)  # the crossing point, inside the cell by the mean value theorem
    ets = D
    left = (ea - ets) - D * (ts - a)
    right = D * (b - ts) - (ets - eb)
    return math.fsum(left) + math.fsum(right) + float(eb[-1])


def telescoped_rule_value(family, d: int, kappa: int, gs) -> float:
    """``sum_{|i| <= kappa} prod_j (U_{i_j} - U_{i_j - 1})(g_j)`` for a product ``prod g_j``.

    Independent of the combination formula; used as a test oracle.
    """
    fam = as_family(family)
    vals = []
    for g in gs:
        row = [0.0]
        for i in range(1, kappa + 1):
            _, nodes, w = _level(fam, i)
            row.append(float(np.dot(w, g(nodes))))
        vals.append(row)
    total = 0.0
    for s in range(d, kappa + 1):
        for multi in compositions(s, d):
            term = 1.0
            for j, i in enumerate(multi):
                term *= vals[j][i] - vals[j][i - 1]
            total += term
    return total
