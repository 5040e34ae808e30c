"""End-to-end driver: active set, allocation, per-subset quadrature, report.

The estimate is ``sum_{u in U} A_{u, n_u}(f_u)``, where each ``A_u`` is a
sparse-grid or lattice rule applied to the anchored term ``f_u``, and the
empty subset uses the one-point rule ``f(0)``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from mdm import lattice, smolyak
from mdm._kernels import compensated_add
from mdm.active_set import (
    ActivePlan,
    ActiveSetConfig,
    ResourceError,
    build_active_set,
    default_alpha,
    truncation_dimension,
)
from mdm.allocation import (
    Allocation,
    AllocationConfig,
    AllocationOverflow,
    allocate,
    quantize_prime,
    quantize_smolyak,
)
from mdm.decomposition import Domain, Tally, decomposition_term
from mdm.problems import ProblemRefused, ProblemSpec, label_cap_settings

#: Default cap on the number of anchored integrand evaluations per run.
EVAL_BUDGET = 200_000_000


class RequestError(ValueError):
    """Invalid or inconsistent request."""


@dataclass
class MdmRequest:
    """Parameters of one MDM run.

    backend
        ``"smolyak"`` (with ``family`` ``"anchored-unit"`` or ``"exp-weighted"``)
        or ``"lattice"``.
    path
        ``"bar"``: budgets with ``G = 1`` and a-posteriori error factor ``X``;
        ``"theorem1"``: budgets with the backend's ``G_{u,q}`` (lattice only).
        Defaults: ``bar`` for Smolyak, ``theorem1`` for lattice.
    """

    problem: ProblemSpec
    epsilon: float
    alpha: float | None = None
    backend: str = "smolyak"
    family: str | None = None
    q: float | None = None
    path: str | None = None
    seed: int = 0
    threads: int | None = None
    m_shifts: int = lattice.DEFAULT_SHIFTS
    eval_budget: int = EVAL_BUDGET
    node_budget: int = 2_000_000
    rule_budget: int = smolyak.NODE_BUDGET

    def resolved(self) -> "MdmRequest":
        """Copy with defaults filled in; raises :class:`RequestError` on conflicts."""
        if self.problem.refusal:
            raise ProblemRefused(self.problem.refusal)
        if not self.epsilon > 0:
            raise RequestError(f"epsilon must be positive, got {self.epsilon}")
        dom = self.problem.domain
        backend = self.backend
        if backend not in ("smolyak", "lattice"):
            raise RequestError(f"unknown backend {backend!r}")
        family = self.family
        if backend == "smolyak":
            if family is None:
                family = ("anchored-unit" if dom is Domain.SYMMETRIC_UNIT else "exp-weighted")
            fam = smolyak.as_family(family)
            want = Domain.SYMMETRIC_UNIT if fam is smolyak.Family.ANCHORED_UNIT else Domain.HALF_LINE
            if dom is not want:
                raise RequestError(
                    f"family {fam.value} integrates over the {want.value} domain but the "
                    f"problem lives on {dom.value}"
                )
            family = fam.value
            q = 1.0 if self.q is None else float(self.q)
            if not 0 < q <= 1:
                raise RequestError(f"Smolyak rules need q in (0, 1], got {q}")
            path = self.path or "bar"
            if path != "bar":
                raise RequestError("Smolyak rules only support the 'bar' path")
        else:
            if dom is not Domain.SYMMETRIC_UNIT:
                raise RequestError("lattice rules integrate over the symmetric-unit domain only")
            if family is not None:
                raise RequestError("the lattice backend takes no univariate family")
            q = 0.9 if self.q is None else float(self.q)
            if not 0.5 <= q < 1:
                raise RequestError(f"lattice rules need q in [1/2, 1), got {q}")
            path = self.path or "theorem1"
            if path not in ("bar", "theorem1"):
                raise RequestError(f"unknown path {path!r}")
        if self.m_shifts < 1:
            raise RequestError("m_shifts must be >= 1")
        return MdmRequest(
            problem=self.problem, epsilon=float(self.epsilon), alpha=self.alpha,
            backend=backend, family=family, q=q, path=path, seed=int(self.seed),
            threads=self.threads, m_shifts=self.m_shifts, eval_budget=self.eval_budget,
            node_budget=self.node_budget, rule_budget=self.rule_budget,
        )


@dataclass
class TermRow:
    subset: tuple
    h: float
    n: int
    kappa: int | None
    estimate: float = 0.0
    bound: float = 0.0
    cost: float = 0.0
    done: bool = False

    def to_dict(self) -> dict:
        return {"indices": list(self.subset), "card": len(self.subset), "h": self.h,
                "n": self.n, "kappa": self.kappa, "term_estimate": self.estimate,
                "term_bound": self.bound, "term_cost": self.cost}


@dataclass
class MdmReport:
    problem: str
    epsilon: float
    alpha: float
    q: float
    backend: str
    family: str | None
    path: str
    seed: int
    estimate: float = 0.0
    tail_bound: float = 0.0
    quadrature_bound: float = 0.0
    quadrature_term_sum: float = 0.0
    info_cost: float = 0.0
    cost_bound: float = 0.0
    model_cost: float = 0.0
    raw_calls: int = 0
    x_factor: float | None = None
    y_factor: float | None = None
    threshold: float = 0.0
    s_alpha_upper: float = 0.0
    ell_max: int | None = None
    truncation_dimension: int = 0
    failed: bool = False
    failure: str | None = None
    rows: list = field(default_factory=list)
    plan: ActivePlan | None = field(default=None, repr=False)
    allocation: Allocation | None = field(default=None, repr=False)

    @property
    def total_bound(self) -> float:
        return self.tail_bound + self.quadrature_bound

    def to_dict(self) -> dict:
        d = {
            "problem": self.problem, "epsilon": self.epsilon, "alpha": self.alpha, "q": self.q,
            "backend": self.backend, "family": self.family, "path": self.path, "seed": self.seed,
            "estimate": self.estimate, "tail_bound": self.tail_bound,
            "quadrature_bound": self.quadrature_bound, "total_bound": self.total_bound,
            "quadrature_term_sum": self.quadrature_term_sum,
            "info_cost": self.info_cost, "cost_bound": self.cost_bound,
            "model_cost": self.model_cost, "raw_calls": self.raw_calls,
            "x_factor": self.x_factor, "y_factor": self.y_factor,
            "threshold": self.threshold, "s_alpha_upper": self.s_alpha_upper,
            "ell_max": self.ell_max, "n_subsets": len(self.rows),
            "truncation_dimension": self.truncation_dimension,
            "failed": self.failed, "failure": self.failure,
            "rows": [r.to_dict() for r in self.rows],
        }
        return d

    def to_json(self) -> str:
        return json.dumps(_finite_json(self.to_dict()), indent=2, allow_nan=False)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["indices", "card", "h", "n", "kappa", "term_estimate", "term_bound",
                    "term_cost"])
        for r in self.rows:
            w.writerow([" ".join(str(j) for j in r.subset), len(r.subset), repr(r.h), r.n,
                        "" if r.kappa is None else r.kappa, repr(r.estimate), repr(r.bound),
                        repr(r.cost)])
        return buf.getvalue()


def _finite_json(obj):
    """Replace non-finite floats (not representable in strict JSON) by strings."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _finite_json(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite_json(v) for v in obj]
    return obj


# ---------------------------------------------------------------------------
# a-posteriori factors
# ---------------------------------------------------------------------------


def _x_term(d: int, kappa: int, q: float) -> float:
    if kappa < d:
        return 12.0 ** (-d / 2)
    return (2.0 ** (-d - 1 + (kappa - d + 1) * q) * 3.0 ** (-d / 2) * math.exp((d / 2 - 1) * q)
            * (kappa ** (d - 1) / math.factorial(d - 1)) ** (0.5 + q))


def _exp_g(d: int, kappa: int, q: float) -> float:
    if kappa < d:
        return 1.0
    return (smolyak.C1_EXP * 2.0 ** ((q - 1) * (kappa - d + 1))
            * math.comb(kappa, d - 1) ** (1 + q))


def x_factor(plan: ActivePlan, allocation: Allocation) -> float:
    """Largest per-subset ``G_{u,q}`` of the chosen sparse-grid rules.

    For the anchored-unit family this is the ``X`` factor of the sparse-grid
    error theorem (zero-rule subsets contribute ``12^(-|u|/2)``); for the
    exp-weighted family the corresponding ``G_{u,q}`` (1 for zero rules).
    """
    fam = smolyak.as_family(allocation.family or "anchored-unit")
    q = allocation.q
    vals = []
    for r in allocation.rows:
        if not r.subset:
            continue
        d = len(r.subset)
        vals.append(_x_term(d, r.kappa, q) if fam is smolyak.Family.ANCHORED_UNIT
                    else _exp_g(d, r.kappa, q))
    return max(vals, default=0.0)


def y_factor(plan: ActivePlan, allocation: Allocation) -> float:
    """Cost inflation factor ``max n_u / h_u`` bound over subsets with a non-zero rule.

    Anchored-unit: ``max 2 e^(|u|/2-1) kappa^(|u|-1) / (|u|-1)!``.
    Exp-weighted: the realised ``max n_u / h_u``.
    """
    fam = smolyak.as_family(allocation.family or "anchored-unit")
    vals = []
    for r in allocation.rows:
        if not r.subset or not r.n:
            continue
        d = len(r.subset)
        if fam is smolyak.Family.ANCHORED_UNIT:
            vals.append(2.0 * math.exp(d / 2 - 1) * r.kappa ** (d - 1) / math.factorial(d - 1))
        else:
            vals.append(r.n / r.h)
    return max(vals, default=0.0)


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------


def plan_and_allocate(req: MdmRequest) -> tuple:
    """Active set and quantized allocation, without touching the integrand."""
    req = req.resolved()
    prob = req.problem
    if prob.label_cap:
        ell, trunc = label_cap_settings(req.epsilon)
        cfg = ActiveSetConfig(req.epsilon, req.alpha, ell_max=ell, tail_fraction=1 / 3,
                              label_tail_bound=trunc, node_budget=req.node_budget)
        quad_fraction = 1 / 3
    else:
        cfg = ActiveSetConfig(req.epsilon, req.alpha, node_budget=req.node_budget)
        quad_fraction = 0.5
    plan = build_active_set(prob.bounds, prob.norm, cfg)
    if req.backend == "smolyak":
        acfg = AllocationConfig(q=req.q, budget_fraction=quad_fraction)
        alloc = quantize_smolyak(allocate(plan, prob.bounds, prob.cost, acfg), req.family)
    else:
        q = req.q
        g_model = None if req.path == "bar" else (lambda u: lattice.g_lattice(len(u), q))
        acfg = AllocationConfig(q=q, g_model=g_model, budget_fraction=quad_fraction)
        alloc = quantize_prime(allocate(plan, prob.bounds, prob.cost, acfg))
    return req, plan, alloc


def _subset_seed(seed: int, u) -> int:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(j) for j in u))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _evaluate_term(req: MdmRequest, row, f, tally: Tally) -> float:
    u = row.subset
    dom = req.problem.domain
    if not u:
        return decomposition_term(f, u, np.zeros(0), tally=tally)
    if not row.n:
        return 0.0
    if req.backend == "smolyak":
        rule = smolyak.smolyak_rule(req.family, len(u), row.kappa, budget=req.rule_budget)
        vals = decomposition_term(f, u, rule.nodes, domain=dom, tally=tally)
        s = np.zeros(1)
        c = np.zeros(1)
        for chunk in np.array_split(rule.weights * vals, max(1, len(vals) // 65536)):
            compensated_add(s, c, np.array([math.fsum(chunk)]))
        return float(s[0] + c[0])
    rule = lattice.make_rule(row.n, len(u), m_shifts=req.m_shifts,
                             seed=_subset_seed(req.seed, u))
    means = lattice.shift_means(
        rule, lambda x: decomposition_term(f, u, x, domain=dom, tally=tally))
    return math.fsum(means) / len(means)


def run_mdm(req: MdmRequest) -> MdmReport:
    """Run MDM and return a full report.

    A resource problem during evaluation (evaluation budget, rule size, CBC
    work) stops the run and returns the terms completed so far with
    ``failed = True``.
    """
    req = req.resolved()
    prob = req.problem
    try:
        req, plan, alloc = plan_and_allocate(req)
    except (ResourceError, AllocationOverflow, smolyak.RuleBudgetError) as exc:
        return MdmReport(
            problem=prob.name, epsilon=req.epsilon,
            alpha=(default_alpha(prob.bounds.alpha0) if req.alpha is None else req.alpha), q=req.q,
            backend=req.backend, family=req.family, path=req.path, seed=req.seed,
            failed=True, failure=f"{type(exc).__name__}: {exc}",
        )
    report = MdmReport(
        problem=prob.name, epsilon=req.epsilon, alpha=plan.alpha, q=req.q,
        backend=req.backend, family=req.family, path=req.path, seed=req.seed,
        tail_bound=plan.tail_bound, threshold=plan.threshold,
        s_alpha_upper=plan.s_alpha_upper, ell_max=plan.ell_max,
        truncation_dimension=truncation_dimension(plan), plan=plan, allocation=alloc,
    )
    report.info_cost = alloc.info_cost()
    report.cost_bound = alloc.cost_bound()
    rows = []
    for r in alloc.rows:
        rows.append(TermRow(tuple(r.subset), r.h, int(r.n), r.kappa, bound=r.predicted_error,
                            cost=r.cost))
    report.rows = rows
    report.quadrature_term_sum = math.fsum(r.bound for r in rows)
    if req.backend == "smolyak":
        report.x_factor = x_factor(plan, alloc)
        report.y_factor = y_factor(plan, alloc)
        report.quadrature_bound = alloc.budget * report.x_factor
    elif req.path == "bar":
        report.x_factor = max((lattice.g_lattice(len(r.subset), req.q) for r in rows if r.subset),
                              default=0.0)
        report.quadrature_bound = alloc.predicted_total() * report.x_factor
        for r in rows:
            if r.subset:
                r.bound *= lattice.g_lattice(len(r.subset), req.q)
        report.quadrature_term_sum = math.fsum(r.bound for r in rows)
    else:
        report.quadrature_bound = alloc.predicted_total()

    planned = _planned_calls(req, rows)
    if planned > req.eval_budget:
        report.failed = True
        report.failure = (f"resource budget exceeded: the plan needs up to {planned:.3e} "
                          f"integrand evaluations, budget {req.eval_budget:.3e}")
        return report

    threads = _thread_count(req.threads)
    f = prob.integrand
    tallies = [Tally(prob.cost) for _ in rows]

    def work(i):
        return _evaluate_term(req, rows[i], f, tallies[i])

    results: list = [None] * len(rows)
    errors: list = [None] * len(rows)

    def guarded(i):
        try:
            results[i] = work(i)
        except (ResourceError, smolyak.RuleBudgetError, lattice.CbcBudgetError,
                AllocationOverflow, MemoryError) as exc:
            errors[i] = exc

    order = sorted(range(len(rows)), key=lambda i: -rows[i].n)  # big terms first
    if threads > 1 and len(rows) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(guarded, order))
    else:
        for i in order:
            guarded(i)

    s = np.zeros(1)
    c = np.zeros(1)
    for i, row in enumerate(rows):  # canonical plan order
        if errors[i] is not None:
            report.failed = True
            report.failure = report.failure or f"{type(errors[i]).__name__}: {errors[i]}"
            continue
        row.estimate = float(results[i])
        row.done = True
        compensated_add(s, c, np.array([row.estimate]))
        report.model_cost += tallies[i].model_cost
        report.raw_calls += tallies[i].raw_calls
    report.estimate = float(s[0] + c[0])
    return report


def _planned_calls(req: MdmRequest, rows) -> float:
    mult = req.m_shifts if req.backend == "lattice" else 1
    return math.fsum(r.n * 2.0 ** len(r.subset) * mult for r in rows)


def _thread_count(threads: int | None) -> int:
    if threads is None:
        env = os.environ.get("MDM_THREADS")
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise RequestError(f"MDM_THREADS must be an integer, got {env!r}") from None
        else:
            threads = os.cpu_count() or 1
    if threads < 1:
        raise RequestError("thread count must be >= 1")
    return threads


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

SWEEP_COLUMNS = ["epsilon", "estimate", "reference", "achieved_error", "tail_bound",
                 "quad_bound", "x_factor", "y_factor", "info_cost", "raw_calls",
                 "wall_seconds"]


@dataclass
class SweepResult:
    rows: list
    reports: list
    cost_slope: float | None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS + ["failed", "failure"])
        for r in self.rows:
            w.writerow([_csv_cell(r.get(k)) for k in SWEEP_COLUMNS]
                       + [str(bool(r["failed"])).lower(), r.get("failure") or ""])
        return buf.getvalue()


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def fit_slope(x, y) -> float | None:
    """Least-squares slope of ``log y`` against ``log x``; None with fewer than 2 points."""
    pts = [(a, b) for a, b in zip(x, y) if a > 0 and b > 0]
    if len(pts) < 2:
        return None
    lx = np.log([a for a, _ in pts])
    ly = np.log([b for _, b in pts])
    return float(np.polyfit(lx, ly, 1)[0])


def sweep(template: MdmRequest, eps_list, reference: float | None = None) -> SweepResult:
    """One run per epsilon (descending); failures are recorded and the sweep continues.

    ``cost_slope`` is the fitted slope of ``log info_cost`` against ``log(1/eps)``.
    """
    eps_list = [float(e) for e in eps_list]
    if any(b > a for a, b in zip(eps_list, eps_list[1:])):
        raise RequestError("eps_list must be in descending order")
    if reference is None:
        reference = template.problem.reference
    rows, reports = [], []
    for eps in eps_list:
        req = MdmRequest(**{**template.__dict__, "epsilon": eps})
        t0 = time.perf_counter()
        row = {"epsilon": eps, "reference": reference, "failed": False, "failure": None}
        try:
            rep = run_mdm(req)
        except (ResourceError, AllocationOverflow, smolyak.RuleBudgetError,
                lattice.CbcBudgetError) as exc:
            row.update(failed=True, failure=f"{type(exc).__name__}: {exc}",
                       wall_seconds=time.perf_counter() - t0)
            rows.append(row)
            reports.append(None)
            continue
        row.update(
            estimate=rep.estimate, tail_bound=rep.tail_bound, quad_bound=rep.quadrature_bound,
            x_factor=rep.x_factor, y_factor=rep.y_factor, info_cost=rep.info_cost,
            raw_calls=rep.raw_calls, wall_seconds=time.perf_counter() - t0,
            failed=rep.failed, failure=rep.failure,
            achieved_error=(abs(rep.estimate - reference) if reference is not None else None),
        )
        rows.append(row)
        reports.append(rep)
    ok = [r for r in rows if not r["failed"]]
    slope = fit_slope([1.0 / r["epsilon"] for r in ok], [r["info_cost"] for r in ok])
    return SweepResult(rows, reports, slope)
