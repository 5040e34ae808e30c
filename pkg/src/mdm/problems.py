"""Built-in benchmark problems, reference values and diagnostics.

Problems
--------
``motivating``
    ``f(x) = 1 / (1 + sum_j x_j / j^2)`` on ``[-1/2, 1/2]^N``.  Anchored terms
    obey ``||f_u|| <= (1 - pi^2/12)^(-1-|u|) |u|! prod_{j in u} j^(-2)``, a POD
    bound with ``b1 = 1``, ``b2 = 2``.
``quadratic``
    ``f(x) = sum_j lambda_j x_j^2`` with integral ``(1/12) sum_j lambda_j``.
``hat``
    A decomposition of the zero function whose term integrals sum to one;
    it violates dominated convergence and MDM refuses it.
``pod-synthetic``
    Additive ``f(x) = sum_j B_{{j}} phi(x_j)`` with ``||phi|| = 1`` for given
    POD parameters, on either domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.special import zeta

from mdm.active_set import (
    LabelSequence,
    NormModel,
    ProductBounds,
    example_label_cap,
    label_truncation_bound,
    pod,
)
from mdm.decomposition import CostModel, Domain

SECOND_MOMENT = 1.0 / 12.0  # int_{-1/2}^{1/2} x^2 dx
_ONE_MINUS = 1.0 - math.pi**2 / 12.0


class ProblemError(ValueError):
    """Unknown problem or unsupported request."""


class ProblemRefused(ValueError):
    """MDM is not applicable to this problem; the message explains why."""


@dataclass
class ProblemSpec:
    """Everything the engine needs to know about an integration problem."""

    name: str
    domain: Domain
    integrand: Callable
    bounds: object
    norm: NormModel
    cost: CostModel = field(default_factory=CostModel)
    reference: float | None = None
    reference_certified: bool = False
    label_cap: bool = False  # restrict labels and split the error in thirds
    refusal: str | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = NormModel.for_domain(self.domain).c0
        if not math.isclose(self.norm.c0, expected, rel_tol=1e-15):
            raise ProblemError(
                f"norm model c0 = {self.norm.c0} does not match the {self.domain.value} domain"
            )

    def to_dict(self) -> dict:
        return {"name": self.name, **self.params}


# ---------------------------------------------------------------------------
# motivating example
# ---------------------------------------------------------------------------


def motivating_integrand(indices, x):
    x = np.asarray(x, dtype=np.float64)
    w = 1.0 / np.asarray(indices, dtype=np.float64) ** 2
    return 1.0 / (1.0 + x @ w) if x.shape[1] else np.ones(x.shape[0])


def motivating_bounds() -> ProductBounds:
    return pod(1.0, 2.0, mu=1.0 / _ONE_MINUS, kappa=math.sqrt(_ONE_MINUS))


def motivating_bound_value(u) -> float:
    """``(1 - pi^2/12)^(-1-|u|) |u|! prod j^-2`` written out directly."""
    k = len(u)
    return _ONE_MINUS ** (-1 - k) * math.factorial(k) * math.prod(j**-2.0 for j in u)


def motivating_mixed_derivative(u, x) -> np.ndarray:
    """``d^|u| f(x_u; 0) / dx_u = (-1)^|u| |u|! prod j^-2 / (1 + sum x_j/j^2)^(|u|+1)``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    k = len(u)
    w = 1.0 / np.asarray(u, dtype=np.float64) ** 2
    s = 1.0 + x @ w
    return (-1) ** k * math.factorial(k) * np.prod(w) / s ** (k + 1)


def motivating(cost: CostModel | None = None) -> ProblemSpec:
    return ProblemSpec(
        name="motivating", domain=Domain.SYMMETRIC_UNIT, integrand=motivating_integrand,
        bounds=motivating_bounds(), norm=NormModel(12.0**-0.5), cost=cost or CostModel(),
        label_cap=True, params={},
    )


def _log_sinhc(z):
    """``log(sinh(z/2) / (z/2))``, the log of ``int_{-1/2}^{1/2} exp(-z x) dx``."""
    h = np.abs(0.5 * np.asarray(z, dtype=np.float64))
    small = h < 1e-3
    hs = np.where(small, 1.0, h)
    big = hs + np.log1p(-np.exp(-2.0 * hs)) - np.log(2.0 * hs)
    return np.where(small, h * h / 6.0 - h**4 / 180.0, big)


def _laplace_integral(ell: int, shift: float = 0.0) -> tuple:
    """``int_{D^ell} 1 / (1 + shift + sum_{j<=ell} x_j/j^2) dx`` via ``1/s = int e^{-ts} dt``.

    Returns ``(value, quadrature error estimate)``.
    """
    j2 = np.arange(1, ell + 1, dtype=np.float64) ** 2

    def integrand(t):
        return math.exp(-t * (1.0 + shift) + math.fsum(_log_sinhc(t / j2)))

    val, err = integrate.quad(integrand, 0.0, np.inf, epsabs=1e-15, epsrel=1e-13, limit=500)
    return val, err


# ---------------------------------------------------------------------------
# quadratic example
# ---------------------------------------------------------------------------


def _lambda_sequence(spec: dict) -> LabelSequence:
    kind = spec.get("kind")
    if kind == "power":
        return LabelSequence("power", scale=float(spec.get("scale", 1.0)), p=float(spec["p"]))
    if kind == "geometric":
        return LabelSequence("geometric", scale=float(spec.get("scale", 1.0)), r=float(spec["r"]))
    if kind == "explicit":
        return LabelSequence("explicit", values=tuple(spec["values"]))
    raise ProblemError(f"lambda sequence must be power, geometric or explicit, got {kind!r}")


def quadratic(lam: dict | None = None, cost: CostModel | None = None) -> ProblemSpec:
    """``f = sum_j lambda_j x_j^2`` on ``[-1/2, 1/2]^N``.

    ``lam`` is ``{"kind": "power", "p": 4}``, ``{"kind": "geometric", "r": 0.5}``
    or ``{"kind": "explicit", "values": [...]}``, each with optional ``scale``.

    Bounds: ``f_{{j}}(x) = lambda_j x^2`` has ``||f_{{j}}|| = lambda_j / sqrt(3)``
    (the L2 norm of its derivative ``2 lambda_j x``), and every ``f_u`` with
    ``|u| >= 2`` vanishes.  The product ``prod_{j in u} lambda_j / sqrt(3)`` is
    therefore a valid bound for all ``u``.
    """
    lam = dict(lam or {"kind": "power", "p": 4.0})
    seq = _lambda_sequence(lam)
    if seq.kind == "power" and seq.p <= 1:
        raise ProblemError("the lambda sequence must be summable (p > 1)")
    bseq = _scaled(seq, 1.0 / math.sqrt(3.0))
    bounds = ProductBounds(1.0, 0.0, bseq)

    def f(indices, x):
        x = np.asarray(x, dtype=np.float64)
        if not len(indices):
            return np.zeros(x.shape[0])
        lamv = np.exp([seq.log_value(j) for j in indices])
        return (x * x) @ lamv

    return ProblemSpec(
        name="quadratic", domain=Domain.SYMMETRIC_UNIT, integrand=f, bounds=bounds,
        norm=NormModel(12.0**-0.5), cost=cost or CostModel(),
        reference=SECOND_MOMENT * lambda_sum(seq), reference_certified=True,
        params={"lambda": lam},
    )


def _scaled(seq: LabelSequence, c: float) -> LabelSequence:
    if seq.kind == "explicit":
        return LabelSequence("explicit", values=tuple(c * v for v in seq.values))
    if seq.kind == "power":
        return LabelSequence("power", scale=c * seq.scale, p=seq.p)
    return LabelSequence("geometric", scale=c * seq.scale, r=seq.r)


def lambda_sum(seq: LabelSequence, upto: int | None = None) -> float:
    """``sum_{j <= upto} lambda_j`` (all ``j`` when ``upto`` is None)."""
    if upto is not None:
        return math.fsum(math.exp(seq.log_value(j)) for j in range(1, upto + 1)
                         if seq.max_label is None or j <= seq.max_label)
    if seq.kind == "power":
        return seq.scale * float(zeta(seq.p))
    if seq.kind == "geometric":
        return seq.scale * seq.r / (1.0 - seq.r)
    return math.fsum(seq.values)


# ---------------------------------------------------------------------------
# hat counterexample
# ---------------------------------------------------------------------------


def psi(k: int, t):
    """Hat ``2^(k+1) (1 - |2^(k+1) t - 1|)_+`` supported on ``[0, 2^-k]``."""
    t = np.asarray(t, dtype=np.float64)
    s = 2.0 ** (k + 1)
    return s * np.maximum(1.0 - np.abs(s * t - 1.0), 0.0)


def hat_term(k: int, t):
    """Value of the term attached to ``{1, ..., k}`` (a function of ``x_1`` only)."""
    return psi(1, t) if k == 1 else psi(k, t) - psi(k - 1, t)


def _exact_piecewise_linear_integral(fn, breaks) -> float:
    """Integral of a continuous piecewise-linear ``fn`` with the given breakpoints."""
    b = np.unique(np.asarray(breaks, dtype=np.float64))
    v = fn(b)
    return math.fsum(0.5 * (v[1:] + v[:-1]) * np.diff(b))


def hat_integrals(k: int) -> float:
    """Integral over ``[-1/2, 1/2]`` of the ``{1..k}`` term: 1 for ``k = 1``, else 0."""
    if k < 1:
        raise ProblemError("k must be >= 1")
    breaks = [-0.5, 0.5, 0.0]
    for m in {k, max(k - 1, 1)}:
        breaks += [0.0, 2.0 ** -(m + 1), 2.0**-m]
    return _exact_piecewise_linear_integral(lambda t: hat_term(k, t), breaks)


def hat_partial_sum(d: int) -> float:
    """``sum_{u in {1..d}} I_u(f_u)``; the only non-zero terms are ``{1..k}``, ``k <= d``."""
    return math.fsum(hat_integrals(k) for k in range(1, d + 1))


HAT_REFUSAL = (
    "MDM refused: the hat decomposition of the zero function converges pointwise but "
    "not under a dominating bound (dominated convergence fails), so the term integrals "
    "sum to 1 while the integral of the function is 0"
)


def hat() -> ProblemSpec:
    def f(indices, x):
        x = np.asarray(x, dtype=np.float64)
        return np.zeros(x.shape[0])

    from mdm.active_set import CustomBounds

    bounds = CustomBounds(fn=lambda u: 1.0, alpha0=math.inf,
                          s_alpha_upper=lambda a, c0: math.inf, max_label=1, max_cardinality=1)
    return ProblemSpec(name="hat", domain=Domain.SYMMETRIC_UNIT, integrand=f, bounds=bounds,
                       norm=NormModel(12.0**-0.5), refusal=HAT_REFUSAL, params={})


# ---------------------------------------------------------------------------
# synthetic POD problem
# ---------------------------------------------------------------------------


def _phi(domain: Domain):
    """Unit-norm generator ``phi`` with ``phi(0) = 0`` and its integral."""
    if domain is Domain.SYMMETRIC_UNIT:
        c = 1.0 / math.sqrt(math.sinh(1.0))  # ||expm1'||_{L2} = sqrt(sinh 1)
        return (lambda x: c * np.expm1(x)), c * (2.0 * math.sinh(0.5) - 1.0)
    return (lambda x: -np.expm1(-x)), 0.5


def pod_synthetic(b1: float, b2: float, mu: float = 1.0, kappa: float = 1.0,
                  domain: Domain = Domain.SYMMETRIC_UNIT,
                  cost: CostModel | None = None) -> ProblemSpec:
    bounds = pod(b1, b2, mu, kappa)
    phi, iphi = _phi(domain)

    def f(indices, x):
        x = np.asarray(x, dtype=np.float64)
        if not len(indices):
            return np.zeros(x.shape[0])
        w = np.array([bounds.value((j,)) for j in indices])
        return phi(x) @ w

    reference = iphi * mu * kappa**-b2 * float(zeta(b2))
    return ProblemSpec(
        name="pod-synthetic", domain=domain, integrand=f, bounds=bounds,
        norm=NormModel.for_domain(domain), cost=cost or CostModel(),
        reference=reference, reference_certified=True,
        params={"b1": b1, "b2": b2, "mu": mu, "kappa": kappa, "domain": domain.value},
    )


# ---------------------------------------------------------------------------
# registry and oracles
# ---------------------------------------------------------------------------


def make_problem(name: str, params: dict | None = None,
                 cost: CostModel | None = None) -> ProblemSpec:
    """Build a built-in problem from its name and JSON parameters."""
    params = dict(params or {})
    if name == "motivating":
        return motivating(cost)
    if name == "quadratic":
        return quadratic(params.get("lambda"), cost)
    if name == "hat":
        return hat()
    if name == "pod-synthetic":
        try:
            return pod_synthetic(
                float(params["b1"]), float(params["b2"]), float(params.get("mu", 1.0)),
                float(params.get("kappa", 1.0)), Domain(params.get("domain", "symmetric-unit")),
                cost,
            )
        except KeyError as exc:
            raise ProblemError(f"pod-synthetic needs parameter {exc.args[0]!r}") from None
    raise ProblemError(f"unknown problem {name!r}")


PROBLEM_NAMES = ("motivating", "quadratic", "hat", "pod-synthetic")


@dataclass
class Reference:
    value: float
    tolerance: float
    certified: bool
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"value": self.value, "tolerance": self.tolerance,
                "certified": self.certified, **self.details}


def reference_value(problem: ProblemSpec, tol: float = 1e-4) -> Reference:
    """Reference integral with a tolerance and a certification flag.

    For the motivating example labels are truncated at
    ``ell = example_label_cap(tol / 2)``; the ``ell``-variate integral is
    computed through ``1/s = int_0^inf exp(-t s) dt``, which factorises into a
    one-dimensional integral of a product of ``sinh`` terms.  The value is
    certified when the truncations at ``ell`` and ``ell + 2`` agree within
    ``tol / 4`` and the quadrature error estimates are negligible.
    """
    if not tol > 0:
        raise ProblemError("tol must be positive")
    if problem.name in ("quadratic", "pod-synthetic"):
        return Reference(problem.reference, 0.0, True, {"method": "closed form"})
    if problem.name != "motivating":
        raise ProblemError(f"no reference value for problem {problem.name!r}")
    ell = example_label_cap(tol / 2)
    v1, e1 = _laplace_integral(ell)
    v2, e2 = _laplace_integral(ell + 2)
    trunc = label_truncation_bound(ell + 2)
    achieved = trunc + abs(v1 - v2) + e1 + e2
    certified = abs(v1 - v2) <= tol / 4 and max(e1, e2) <= tol / 100 and achieved <= tol
    return Reference(v2, achieved, bool(certified), {
        "method": "laplace-product", "ell": ell, "value_ell": v1, "value_ell_plus_2": v2,
        "truncation_bound": trunc, "quad_error": max(e1, e2),
    })


def anchored_truncated_integral(problem: ProblemSpec, d: int, tail=0.0) -> float:
    """``int f(x_1..x_d, a_{d+1}, a_{d+2}, ...) dx_{1:d}``.

    ``tail`` is either a constant ``a`` for every label beyond ``d`` or a finite
    sequence ``a_{d+1}, ..., a_{d+m}`` (with the anchor 0 further on).
    """
    if d < 0:
        raise ProblemError("d must be non-negative")
    const = np.isscalar(tail)
    a = float(tail) if const else np.asarray(tail, dtype=np.float64)
    if problem.name == "quadratic":
        seq = _lambda_sequence(problem.params["lambda"])
        head = SECOND_MOMENT * lambda_sum(seq, d)
        if const:
            rest = lambda_sum(seq) - lambda_sum(seq, d)
            return head + a * a * rest
        lam = np.exp([seq.log_value(j) for j in range(d + 1, d + 1 + len(a))])
        return head + math.fsum(lam * a * a)
    if problem.name == "motivating":
        if const:
            shift = a * (math.pi**2 / 6.0 - math.fsum(1.0 / j**2 for j in range(1, d + 1)))
        else:
            shift = math.fsum(a / np.arange(d + 1, d + 1 + len(a)) ** 2)
        if 1.0 + shift - math.fsum(0.5 / j**2 for j in range(1, d + 1)) <= 0:
            raise ProblemError("the anchored restriction has a singularity in the domain")
        if d == 0:
            return 1.0 / (1.0 + shift)
        return _laplace_integral(d, shift)[0]
    raise ProblemError(f"anchored truncated integral not available for {problem.name!r}")


def point_eval_norm(u, x) -> float:
    """Norm of point evaluation at ``x_u``: ``prod_{j in u} |x_j|^(1/2)``."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != len(u):
        raise ProblemError("x must have one coordinate per label")
    return float(np.prod(np.sqrt(np.abs(x))))


def label_cap_settings(eps: float) -> tuple:
    """``(ell, truncation bound)`` for the motivating example at accuracy ``eps``."""
    ell = example_label_cap(eps)
    return ell, label_truncation_bound(ell)
