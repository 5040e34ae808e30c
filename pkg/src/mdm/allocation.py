"""Per-subset sample budgets.

The continuous budgets come from a Lagrange-multiplier argument::

    h_u = ((1/E) sum_v L_v^(q/(q+1)) (G_v B_v)^(1/(q+1)))^(1/q) * (G_u B_u / L_u)^(1/(q+1))

where ``E`` is the quadrature share of the error (``eps/2`` by default) and
``L = £(|u|)``.  They satisfy ``sum_u G_u B_u / h_u^q = E`` exactly.  All
arithmetic is carried out on ``log h_u``.

Three quantizers turn ``h_u`` into a rule size: :func:`quantize_floor`,
:func:`quantize_prime` (lattice rules) and :func:`quantize_smolyak`.  The empty
subset never takes part: it always gets the one-point rule ``n = 1`` with
zero error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from mdm.active_set import ActivePlan
from mdm.decomposition import CostModel, Subset


class AllocationOverflow(ArithmeticError):
    """A budget ``h_u`` does not fit in a float or a 64-bit count."""


@dataclass(frozen=True)
class AllocationConfig:
    """``q`` is the convergence exponent; ``g_model(u)`` supplies ``G_{u,q}`` (default 1)."""

    q: float = 1.0
    g_model: Callable[[Subset], float] | None = field(default=None, compare=False)
    budget_fraction: float = 0.5

    def __post_init__(self):
        if not self.q > 0:
            raise ValueError(f"q must be positive, got {self.q}")
        if not 0 < self.budget_fraction < 1:
            raise ValueError("budget_fraction must lie in (0, 1)")

    def g(self, u) -> float:
        return 1.0 if self.g_model is None else float(self.g_model(u))


@dataclass
class AllocationRow:
    subset: Subset
    b: float  # B_u
    g: float  # G_{u,q} used inside h_u
    pound: float  # £(|u|)
    log_h: float
    n: int | None = None
    kappa: int | None = None
    predicted_error: float | None = None

    @property
    def h(self) -> float:
        if not self.subset:
            return 0.0
        return math.exp(self.log_h) if self.log_h < 709.0 else math.inf

    @property
    def cost(self) -> float:
        return (self.n or 0) * self.pound

    def to_dict(self) -> dict:
        return {"h": self.h, "n": self.n, "kappa": self.kappa,
                "predicted_error": self.predicted_error}


@dataclass
class Allocation:
    epsilon: float
    q: float
    budget: float
    rows: list
    rule: str = "continuous"
    scale: float = 1.0  # multiplier applied to every h_u before quantizing (prime rule)
    family: str | None = None

    def budget_sum(self) -> float:
        """``sum_u G_u B_u / h_u^q`` over non-empty subsets (pre-quantization)."""
        return math.fsum(math.exp(math.log(r.g * r.b) - self.q * r.log_h)
                         for r in self.rows if r.subset)

    def predicted_total(self) -> float:
        return math.fsum(r.predicted_error or 0.0 for r in self.rows)

    def info_cost(self) -> float:
        """``sum_u n_u £(|u|)``."""
        return math.fsum(r.cost for r in self.rows)

    def lagrange_cost(self) -> float:
        """``sum_u h_u £(|u|)`` over non-empty subsets."""
        return math.fsum(r.h * r.pound for r in self.rows if r.subset)

    def cost_bound(self) -> float:
        """Closed-form cost bound plus the one-point cost of the empty subset.

        ``(1/E)^(1/q) (sum_u £^(q/(q+1)) (G_u B_u)^(1/(q+1)))^(1+1/q)``; it equals
        :meth:`lagrange_cost` up to rounding.
        """
        rows = [r for r in self.rows if r.subset]
        extra = math.fsum(r.pound for r in self.rows if not r.subset)
        if not rows:
            return extra
        q = self.q
        terms = [q / (q + 1) * math.log(r.pound) + math.log(r.g * r.b) / (q + 1) for r in rows]
        log_sum = float(logsumexp(terms))
        return math.exp(-math.log(self.budget) / q + (1 + 1 / q) * log_sum) + extra

    def by_subset(self) -> dict:
        return {r.subset: r for r in self.rows}

    def to_dict(self) -> dict:
        return {
            "q": self.q, "budget": self.budget, "rule": self.rule, "scale": self.scale,
            "family": self.family,
            "rows": [dict(indices=list(r.subset), **r.to_dict()) for r in self.rows],
        }


def allocate(plan: ActivePlan, bounds, cost: CostModel, cfg: AllocationConfig,
             *, budget: float | None = None) -> Allocation:
    """Lagrange-optimal budgets ``h_u`` for every subset of ``plan``.

    ``budget`` defaults to ``cfg.budget_fraction * plan.epsilon``.
    """
    q = cfg.q
    E = cfg.budget_fraction * plan.epsilon if budget is None else budget
    rows = []
    for u, _cb in plan.subsets:
        if not u:
            rows.append(AllocationRow(u, 0.0, 0.0, cost.pound(0), -math.inf))
            continue
        b = bounds.value(u)
        g = cfg.g(u)
        lb = math.log(g) + math.log(b)
        lp = math.log(cost.pound(len(u)))
        if not (math.isfinite(lb) and math.isfinite(lp)):
            raise AllocationOverflow(f"non-finite G B or £ for subset {tuple(u)}")
        rows.append(AllocationRow(u, b, g, cost.pound(len(u)), 0.0))
    active = [r for r in rows if r.subset]
    if active:
        lgb = np.array([math.log(r.g) + math.log(r.b) for r in active])
        lpd = np.array([math.log(r.pound) for r in active])
        log_s = float(logsumexp(q / (q + 1) * lpd + lgb / (q + 1)))
        for r, a, c in zip(active, lgb, lpd):
            r.log_h = (log_s - math.log(E)) / q + (a - c) / (q + 1)
    return Allocation(epsilon=plan.epsilon, q=q, budget=E, rows=rows)


def _finite_h(row: AllocationRow, scale: float = 1.0) -> float:
    log_h = row.log_h + math.log(scale)
    if log_h > math.log(2.0**62):
        raise AllocationOverflow(
            f"h_u = exp({log_h:.1f}) for subset {tuple(row.subset)} exceeds the 64-bit range"
        )
    return math.exp(log_h)


def _empty_rows(rows):
    for r in rows:
        if not r.subset:
            r.n, r.kappa, r.predicted_error = 1, None, 0.0


def quantize_floor(a: Allocation) -> Allocation:
    """``n_u = floor(h_u)``; predicted error ``G_u B_u / (n_u + 1)^q``."""
    rows = [replace(r) for r in a.rows]
    for r in rows:
        if r.subset:
            r.n = int(math.floor(_finite_h(r)))
            r.predicted_error = r.g * r.b / (r.n + 1) ** a.q
    _empty_rows(rows)
    return replace(a, rows=rows, rule="floor", scale=1.0)


# ---------------------------------------------------------------------------
# primes
# ---------------------------------------------------------------------------

_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def is_prime(n: int) -> bool:
    """Deterministic Miller-Rabin, exact for all ``n < 3.3e24``."""
    n = int(n)
    if n < 2:
        return False
    for p in _MR_BASES:
        if n % p == 0:
            return n == p
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def largest_prime_rule(h: float) -> int:
    """Largest prime ``p`` with ``3 <= p <= h``, or 0 when there is none."""
    if not h >= 3:
        return 0
    n = int(math.floor(h))
    while n >= 3:
        if is_prime(n):
            return n
        n -= 1
    return 0


def _prime_rows(a: Allocation, scale: float):
    rows = [replace(r) for r in a.rows]
    for r in rows:
        if r.subset:
            r.n = largest_prime_rule(_finite_h(r, scale))
            r.predicted_error = r.g * r.b / (r.n + 1) ** a.q
    _empty_rows(rows)
    return rows


def quantize_prime(a: Allocation, *, fit_budget: bool = True) -> Allocation:
    """Largest-prime rule ``3 <= n_u <= h_u`` (or ``n_u = 0``).

    Rounding down to a prime can lose more than the floor rule, so the
    predicted total may exceed the budget.  With ``fit_budget`` every ``h_u``
    is first multiplied by the smallest common factor ``s >= 1`` (located by
    doubling then bisection) for which the predicted total fits; ``s`` is
    stored in :attr:`Allocation.scale`.
    """
    def total(rows):
        return math.fsum(r.predicted_error for r in rows)

    rows = _prime_rows(a, 1.0)
    scale = 1.0
    if fit_budget and total(rows) > a.budget:
        hi = 2.0
        while total(_prime_rows(a, hi)) > a.budget:
            hi *= 2.0
            if hi > 2.0**60:
                raise AllocationOverflow("no prime scaling meets the error budget")
        lo = hi / 2.0 if hi > 2.0 else 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if total(_prime_rows(a, mid)) > a.budget:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-9 * hi:
                break
        scale = hi
        rows = _prime_rows(a, scale)
    return replace(a, rows=rows, rule="prime", scale=scale)


# ---------------------------------------------------------------------------
# Smolyak levels
# ---------------------------------------------------------------------------


def _floor_log2(row: AllocationRow) -> int:
    """``floor(log2 h_u)``; ``h_u`` within ``1e-12`` relative of ``2^k`` counts as ``2^k``.

    ``h_u`` only exists as ``exp(log_h)``, which can land an ulp below an exact
    power of two; the snap keeps the level from dropping by one in that case.
    """
    x = row.log_h / math.log(2.0)
    k = round(x)
    if abs(x - k) <= 1e-12 * max(1.0, abs(x)) + 1e-12:
        return int(k)
    if row.log_h < 700.0:
        _, e = math.frexp(math.exp(row.log_h))
        return e - 1
    return math.floor(x)


def quantize_smolyak(a: Allocation, family: str = "anchored-unit") -> Allocation:
    """``kappa_u = |u| + floor(log2 h_u)``; ``n_u`` is the sparse-grid point count.

    A level below ``|u|`` selects the zero rule (``n_u = 0``).  The predicted
    error of a term is the worst-case error of the chosen rule times ``B_u``.
    """
    from mdm import smolyak

    rows = [replace(r) for r in a.rows]
    for r in rows:
        if not r.subset:
            continue
        d = len(r.subset)
        r.kappa = d + _floor_log2(r)
        r.n = smolyak.point_count(family, d, r.kappa) if r.kappa >= d else 0
        r.predicted_error = smolyak.error_bound(family, d, r.kappa) * r.b
    _empty_rows(rows)
    return replace(a, rows=rows, rule="smolyak", scale=1.0, family=family)
