"""Bounds models and construction of the active set.

A subset ``u`` is *active* when ``(C_u B_u)^(1 - 1/alpha) > threshold`` with
``threshold = eps_tail / S`` and ``S`` an upper bound on
``sum_v (C_v B_v)^(1/alpha)``.  Everything that is not active is dropped, and
the dropped mass is certified to be at most ``eps_tail``.

Bounds come in two flavours:

* :class:`ProductBounds` -- ``B_u = mu * (|u|!)^b1 * prod_{j in u} beta_j``.
  POD bounds are the special case ``beta_j = (kappa j)^(-b2)``.  Enumeration
  is exact and pruned, because ``beta`` is processed in non-increasing order.
* :class:`CustomBounds` -- an arbitrary callback over a declared finite
  frontier, with user-supplied decay exponent, sum bound and tail certificate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from mdm.decomposition import Domain, Subset

#: Head length used for the exact part of the sum bound.
HEAD_LABELS = 2048
#: Largest cardinality ever scanned when locating the non-empty layers.
MAX_SCAN_CARDINALITY = 200


class ConfigError(ValueError):
    """Inconsistent model or configuration parameters."""


class ResourceError(RuntimeError):
    """An enumeration exceeded its node budget.

    ``partial`` holds whatever diagnostics were gathered before stopping.
    """

    def __init__(self, message: str, partial: dict | None = None):
        super().__init__(message)
        self.partial = partial or {}


# ---------------------------------------------------------------------------
# norm and bounds models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormModel:
    """``C_u = c0^|u|``, the norm of the integration functional on ``F_u``."""

    c0: float

    def __post_init__(self):
        if not (self.c0 > 0 and math.isfinite(self.c0)):
            raise ConfigError(f"c0 must be positive and finite, got {self.c0}")

    @classmethod
    def for_domain(cls, domain: Domain) -> "NormModel":
        if domain is Domain.SYMMETRIC_UNIT:
            return cls(12.0**-0.5)
        return cls(1.0)

    def log_cu(self, k: int) -> float:
        return k * math.log(self.c0)

    def cu(self, u) -> float:
        return self.c0 ** len(u)


@dataclass(frozen=True)
class LabelSequence:
    """Positive per-label factors ``beta_j`` for ``j = 1, 2, ...``.

    kind
        ``"power"``: ``beta_j = scale * j^(-p)``;
        ``"geometric"``: ``beta_j = scale * r^j`` with ``0 < r < 1``;
        ``"explicit"``: ``beta_j = values[j-1]``, and no labels beyond the list.
    """

    kind: str
    scale: float = 1.0
    p: float = 0.0
    r: float = 0.0
    values: tuple = ()

    def __post_init__(self):
        if self.kind == "power":
            if not (self.p > 0 and self.scale > 0):
                raise ConfigError("power sequence needs p > 0 and scale > 0")
        elif self.kind == "geometric":
            if not (0 < self.r < 1 and self.scale > 0):
                raise ConfigError("geometric sequence needs 0 < r < 1 and scale > 0")
        elif self.kind == "explicit":
            vals = tuple(float(v) for v in self.values)
            if not vals or any(not (v > 0 and math.isfinite(v)) for v in vals):
                raise ConfigError("explicit sequence needs a non-empty list of positive values")
            object.__setattr__(self, "values", vals)
        else:
            raise ConfigError(f"unknown label sequence kind {self.kind!r}")

    @property
    def max_label(self) -> int | None:
        return len(self.values) if self.kind == "explicit" else None

    @property
    def decay(self) -> float:
        """Summability exponent: ``sum_j beta_j^(1/t)`` converges iff ``t < decay``."""
        return self.p if self.kind == "power" else math.inf

    def log_value(self, j: int) -> float:
        if self.kind == "power":
            return math.log(self.scale) - self.p * math.log(j)
        if self.kind == "geometric":
            return math.log(self.scale) + j * math.log(self.r)
        return math.log(self.values[j - 1])

    def log_values(self, n: int) -> np.ndarray:
        """``log beta_j`` for ``j = 1..n`` (clipped to the list for explicit sequences)."""
        j = np.arange(1, n + 1, dtype=np.float64)
        if self.kind == "power":
            return math.log(self.scale) - self.p * np.log(j)
        if self.kind == "geometric":
            return math.log(self.scale) + j * math.log(self.r)
        return np.log(np.asarray(self.values[:n]))

    def tail_upper(self, J: int, t: float, c0: float = 1.0) -> float:
        """Upper bound on ``sum_{j > J} (c0 beta_j)^t``."""
        if self.kind == "explicit":
            return math.fsum((c0 * v) ** t for v in self.values[J:])
        if self.kind == "geometric":
            rt = self.r**t
            return (c0 * self.scale) ** t * rt ** (J + 1) / (1.0 - rt)
        s = self.p * t
        if s <= 1.0:
            return math.inf
        # integral comparison for the decreasing summand j^(-s)
        return (c0 * self.scale) ** t * J ** (1.0 - s) / (s - 1.0)

    @property
    def monotone(self) -> bool:
        if self.kind != "explicit":
            return True
        return all(a >= b for a, b in zip(self.values, self.values[1:]))

    def to_dict(self) -> dict:
        if self.kind == "power":
            return {"kind": "power", "scale": self.scale, "p": self.p}
        if self.kind == "geometric":
            return {"kind": "geometric", "scale": self.scale, "r": self.r}
        return {"kind": "explicit", "values": list(self.values)}

    @classmethod
    def from_dict(cls, d: dict) -> "LabelSequence":
        kind = d.get("kind")
        if kind == "explicit":
            return cls("explicit", values=tuple(d["values"]))
        if kind == "power":
            return cls("power", scale=float(d.get("scale", 1.0)), p=float(d["p"]))
        if kind == "geometric":
            return cls("geometric", scale=float(d.get("scale", 1.0)), r=float(d["r"]))
        raise ConfigError(f"unknown label sequence kind {kind!r}")


@dataclass(frozen=True)
class ProductBounds:
    """``B_u = mu * (|u|!)^b1 * prod_{j in u} beta_j``."""

    mu: float
    b1: float
    seq: LabelSequence
    name: str = "product"
    pod_params: tuple = ()  # (b1, b2, mu, kappa) as given, for exact serialization

    def __post_init__(self):
        if not (self.mu > 0 and math.isfinite(self.mu)):
            raise ConfigError(f"mu must be positive and finite, got {self.mu}")
        if self.b1 < 0:
            raise ConfigError(f"b1 must be non-negative, got {self.b1}")

    @property
    def alpha0(self) -> float:
        """Decay exponent of ``{C_u B_u}``."""
        return self.seq.decay

    @property
    def max_label(self) -> int | None:
        return self.seq.max_label

    def log_value(self, u) -> float:
        k = len(u)
        return (math.log(self.mu) + self.b1 * math.lgamma(k + 1)
                + math.fsum(self.seq.log_value(j) for j in u))

    def value(self, u) -> float:
        return math.exp(self.log_value(u))

    def to_dict(self) -> dict:
        if self.pod_params:
            b1, b2, mu, kappa = self.pod_params
            return {"kind": "pod", "b1": b1, "b2": b2, "mu": mu, "kappa": kappa}
        return {"kind": "product", "mu": self.mu, "b1": self.b1, "sequence": self.seq.to_dict()}


def pod(b1: float, b2: float, mu: float = 1.0, kappa: float = 1.0) -> ProductBounds:
    """POD bounds ``B_u = (|u|!)^b1 * mu * prod_{j in u} (kappa j)^(-b2)``."""
    if not b2 > max(b1, 0.0):
        raise ConfigError(f"POD bounds need b2 > max(b1, 0), got b1={b1}, b2={b2}")
    if not b2 > 1.0:
        raise ConfigError(f"POD bounds need b2 > 1, got {b2}")
    if not kappa > 0:
        raise ConfigError(f"kappa must be positive, got {kappa}")
    return ProductBounds(mu, b1, LabelSequence("power", scale=kappa**-b2, p=b2), name="pod",
                         pod_params=(float(b1), float(b2), float(mu), float(kappa)))


@dataclass(frozen=True)
class CustomBounds:
    """Black-box ``B_u`` over the finite frontier ``labels <= max_label, |u| <= max_cardinality``.

    Parameters
    ----------
    fn : callable
        ``fn(u: Subset) -> B_u > 0``.
    alpha0 : float
        Declared decay exponent.
    s_alpha_upper : callable
        ``s_alpha_upper(alpha, c0) -> float``, an upper bound on
        ``sum_v (C_v B_v)^(1/alpha)`` over *all* finite ``v``.
    tail_certificate : float
        Upper bound on ``sum C_u B_u`` over subsets outside the frontier.
    """

    fn: Callable
    alpha0: float
    s_alpha_upper: Callable[[float, float], float]
    max_label: int
    max_cardinality: int
    tail_certificate: float = 0.0
    name: str = "custom"

    def value(self, u) -> float:
        v = float(self.fn(Subset(u)))
        if not (v > 0 and math.isfinite(v)):
            raise ConfigError(f"custom bound for {tuple(u)} must be positive and finite, got {v}")
        return v

    def log_value(self, u) -> float:
        return math.log(self.value(u))

    def to_dict(self) -> dict:
        raise ConfigError("custom bounds cannot be serialized")


def bounds_from_dict(d: dict) -> ProductBounds:
    kind = d.get("kind")
    if kind == "pod":
        return pod(float(d["b1"]), float(d["b2"]), float(d.get("mu", 1.0)),
                   float(d.get("kappa", 1.0)))
    if kind == "product":
        return ProductBounds(float(d.get("mu", 1.0)), float(d.get("b1", 0.0)),
                             LabelSequence.from_dict(d["sequence"]))
    raise ConfigError(f"unknown bounds kind {kind!r}")


def default_alpha(alpha0: float) -> float:
    return 2.0 if math.isinf(alpha0) else 0.5 * (1.0 + alpha0)


def _check_alpha(bounds, alpha: float) -> None:
    a0 = bounds.alpha0
    if not a0 > 1:
        raise ConfigError(f"decay exponent alpha0 = {a0} must exceed 1")
    if not 1.0 < alpha < a0:
        raise ConfigError(f"alpha = {alpha} must lie in (1, {a0})")


# ---------------------------------------------------------------------------
# the sum bound S_alpha
# ---------------------------------------------------------------------------


def _layer_sums(log_a: np.ndarray, beta: float, kmax: int) -> np.ndarray:
    """``w_k = (k!)^beta * e_k(a)`` for ``k = 0..kmax`` with ``e_k`` elementary symmetric.

    Computed with the recurrence ``w_k <- w_k + a_j k^beta w_{k-1}`` (which is
    the usual one for ``e_k`` after the factorial weights are absorbed).
    """
    w = np.zeros(kmax + 1)
    w[0] = 1.0
    kb = np.arange(1, kmax + 1, dtype=np.float64) ** beta
    for la in log_a:
        a = math.exp(la)
        w[1:] = w[1:] + a * kb * w[:-1]
    return w


def decay_sum_upper(bounds, norm: NormModel, alpha: float, *, ell_max: int | None = None,
                    head: int = HEAD_LABELS) -> float:
    """Upper bound on ``S_alpha = sum_v (C_v B_v)^(1/alpha)``.

    For product bounds the sum over labels ``<= J`` is computed exactly by a
    weighted elementary-symmetric recurrence.  The contribution of labels
    beyond ``J`` is majorised through ``T >= sum_{j > J} (c0 beta_j)^(1/alpha)``
    and ``e_k(all) <= sum_m e_{k-m}(head) T^m / m!``.  When ``ell_max`` is given
    only subsets of ``{1..ell_max}`` are counted and the result is exact.

    Raises
    ------
    ConfigError
        When the series diverges (``alpha >= alpha0``) or the majorant is not
        available (``alpha <= b1`` with an infinite tail).
    """
    if isinstance(bounds, CustomBounds):
        if not 1.0 < alpha < bounds.alpha0:
            raise ConfigError(f"alpha = {alpha} must lie in (1, {bounds.alpha0})")
        return float(bounds.s_alpha_upper(alpha, norm.c0))
    if not alpha > 1.0:
        raise ConfigError(f"alpha = {alpha} must exceed 1")
    seq = bounds.seq
    limit = seq.max_label
    if ell_max is not None:
        limit = ell_max if limit is None else min(limit, ell_max)
    if limit is None and alpha >= bounds.alpha0:
        raise ConfigError(f"the sum diverges for alpha = {alpha} >= alpha0 = {bounds.alpha0}")
    J = head if limit is None else limit
    t = 1.0 / alpha
    beta = bounds.b1 * t
    log_a = t * (math.log(norm.c0) + seq.log_values(J))
    tail = 0.0 if limit is not None else seq.tail_upper(J, t, norm.c0)
    if tail > 0 and beta >= 1.0:
        raise ConfigError(
            f"no majorant for alpha = {alpha} <= b1 = {bounds.b1}; choose alpha > b1"
        )
    kmax = J if limit is not None else min(J, 512)
    w = _layer_sums(log_a, beta, kmax)
    total = math.fsum(w[k] * _tail_factor(k, beta, tail) for k in range(kmax + 1) if w[k] > 0)
    if kmax < J or tail > 0:
        # layers n > kmax (head and tail labels mixed) are at most
        # (n!)^(beta-1) (A + T)^n, A = sum of the head terms; sum them geometrically
        big = math.fsum(np.exp(log_a)) + tail
        n = kmax + 1
        ratio = (n + 1) ** (beta - 1.0) * big
        if ratio >= 1.0:
            raise ConfigError("layer sums decay too slowly to be truncated")
        log_term = (beta - 1.0) * math.lgamma(n + 1) + n * math.log(big)
        total += math.exp(log_term) / (1.0 - ratio)
    return math.exp(t * math.log(bounds.mu)) * total


def _tail_factor(k: int, beta: float, tail: float) -> float:
    """``sum_{m>=0} ((k+m)!/k!)^beta * tail^m / m!`` with a ratio-test remainder."""
    if tail == 0.0:
        return 1.0
    term = 1.0
    acc = 1.0
    m = 0
    while True:
        m += 1
        ratio = (k + m) ** beta * tail / m
        term *= ratio
        acc += term
        nxt = (k + m + 1) ** beta * tail / (m + 1)
        if nxt < 1.0:
            # the ratios keep shrinking from here on, so the rest is geometric
            rest = term * nxt / (1.0 - nxt)
            if rest <= 1e-16 * acc:
                return acc + rest
        if m > 100000:
            raise ConfigError("tail series did not converge")


# ---------------------------------------------------------------------------
# active set
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ActiveSetConfig:
    """Parameters of the active-set construction.

    ``tail_fraction`` is the share of ``epsilon`` granted to the dropped
    subsets (one half by default).  ``ell_max`` restricts labels to
    ``1..ell_max``; in that case ``label_tail_bound`` must certify the error of
    that restriction and is added to the reported tail bound.
    """

    epsilon: float
    alpha: float | None = None
    ell_max: int | None = None
    tail_fraction: float = 0.5
    label_tail_bound: float = 0.0
    node_budget: int = 2_000_000

    def __post_init__(self):
        if not (self.epsilon > 0):
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.tail_fraction < 1:
            raise ConfigError("tail_fraction must lie in (0, 1)")
        if self.ell_max is not None and self.ell_max < 0:
            raise ConfigError("ell_max must be non-negative")


@dataclass
class ActivePlan:
    """Active set together with the quantities that certify it."""

    epsilon: float
    alpha: float
    threshold: float
    s_alpha_upper: float
    subsets: list = field(default_factory=list)  # [(Subset, cb)] in canonical order
    tail_bound: float = 0.0
    tail_fraction: float = 0.5
    ell_max: int | None = None

    def __len__(self) -> int:
        return len(self.subsets)

    def __iter__(self):
        return iter(self.subsets)

    def members(self) -> list:
        return [u for u, _ in self.subsets]

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "alpha": self.alpha,
            "threshold": self.threshold,
            "s_alpha_upper": self.s_alpha_upper,
            "tail_bound": self.tail_bound,
            "tail_fraction": self.tail_fraction,
            "ell_max": self.ell_max,
            "subsets": [{"indices": list(u), "cb": cb} for u, cb in self.subsets],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "ActivePlan":
        return cls(
            epsilon=float(d["epsilon"]), alpha=float(d["alpha"]),
            threshold=float(d["threshold"]), s_alpha_upper=float(d["s_alpha_upper"]),
            subsets=[(Subset(s["indices"]), float(s["cb"])) for s in d["subsets"]],
            tail_bound=float(d.get("tail_bound", 0.0)),
            tail_fraction=float(d.get("tail_fraction", 0.5)),
            ell_max=d.get("ell_max"),
        )


class _RankedLogs:
    """``log(c0 beta)`` listed in non-increasing order, grown on demand."""

    def __init__(self, seq: LabelSequence, c0: float, limit: int | None):
        self.seq = seq
        self.lc0 = math.log(c0)
        self.limit = limit
        self.perm = None
        if limit is not None:
            vals = self.lc0 + seq.log_values(limit)
            if seq.monotone:
                self.vals = vals
            else:
                # enumerate in rank order and map back to labels afterwards
                self.perm = np.argsort(-vals, kind="stable")
                self.vals = vals[self.perm]
        else:
            self.vals = self.lc0 + seq.log_values(256)
        self._prefix()

    def _prefix(self):
        self.P = np.concatenate(([0.0], np.cumsum(self.vals)))

    def ensure(self, n: int) -> bool:
        """Make ranks ``0..n-1`` available; False if the sequence is shorter."""
        if n <= len(self.vals):
            return True
        if self.limit is not None:
            return False
        size = len(self.vals)
        while size < n:
            size *= 2
        self.vals = self.lc0 + self.seq.log_values(size)
        self._prefix()
        return True

    def label(self, r: int) -> int:
        return int(self.perm[r]) + 1 if self.perm is not None else r + 1


def _label_limit(bounds, ell_max):
    limit = bounds.max_label
    if ell_max is not None:
        limit = ell_max if limit is None else min(limit, ell_max)
    return limit


def _enumerate_product(bounds: ProductBounds, norm: NormModel, log_cut: float,
                       limit: int | None, budget: int) -> list:
    ranked = _RankedLogs(bounds.seq, norm.c0, limit)
    found = []
    nodes = 0

    def layer_base(k):
        return math.log(bounds.mu) + bounds.b1 * math.lgamma(k + 1)

    kmax = MAX_SCAN_CARDINALITY if limit is None else min(limit, MAX_SCAN_CARDINALITY)
    for k in range(kmax + 1):
        if not ranked.ensure(k):
            break
        base = layer_base(k)
        if base + ranked.P[k] <= log_cut:
            # {1..k} is the best subset of size k, so the whole layer is inactive
            continue
        stack = [(0, k, base, ())]
        while stack:
            start, m, acc, chosen = stack.pop()
            if m == 0:
                found.append((chosen, acc))
                continue
            children = []
            r = start
            while True:
                if not ranked.ensure(r + m):
                    break
                nodes += 1
                if nodes > budget:
                    raise ResourceError(
                        f"active-set enumeration exceeded {budget} nodes",
                        {"found": len(found), "cardinality": k},
                    )
                if acc + ranked.P[r + m] - ranked.P[r] <= log_cut:
                    break
                children.append((r + 1, m - 1, acc + ranked.vals[r], chosen + (r,)))
                r += 1
            stack.extend(reversed(children))
    out = []
    for ranks, lv in found:
        u = Subset(sorted(ranked.label(r) for r in ranks))
        out.append((u, lv))
    return out


def _enumerate_custom(bounds: CustomBounds, norm: NormModel, log_cut: float,
                      limit: int | None, budget: int) -> list:
    import itertools

    L = bounds.max_label if limit is None else min(limit, bounds.max_label)
    out = []
    nodes = 0
    for k in range(min(bounds.max_cardinality, L) + 1):
        for combo in itertools.combinations(range(1, L + 1), k):
            nodes += 1
            if nodes > budget:
                raise ResourceError(f"active-set enumeration exceeded {budget} nodes",
                                    {"found": len(out), "cardinality": k})
            u = Subset(combo)
            lv = norm.log_cu(k) + bounds.log_value(u)
            if lv > log_cut:
                out.append((u, lv))
    return out


def build_active_set(bounds, norm: NormModel, cfg: ActiveSetConfig, *,
                     s_alpha_upper: float | None = None) -> ActivePlan:
    """Construct the active set for ``cfg.epsilon``.

    ``s_alpha_upper`` may be passed to hold the sum bound fixed across calls
    (e.g. when comparing plans for several epsilons).
    """
    alpha = cfg.alpha if cfg.alpha is not None else default_alpha(bounds.alpha0)
    _check_alpha(bounds, alpha)
    limit = _label_limit(bounds, cfg.ell_max) if isinstance(bounds, ProductBounds) else cfg.ell_max
    if s_alpha_upper is None:
        s_alpha_upper = decay_sum_upper(bounds, norm, alpha, ell_max=limit)
    eps_tail = cfg.tail_fraction * cfg.epsilon
    threshold = eps_tail / s_alpha_upper
    # (cb)^(1-1/alpha) > threshold  <=>  log cb > alpha/(alpha-1) * log threshold
    log_cut = alpha / (alpha - 1.0) * math.log(threshold)
    if isinstance(bounds, CustomBounds):
        raw = _enumerate_custom(bounds, norm, log_cut, limit, cfg.node_budget)
        extra_tail = bounds.tail_certificate
    else:
        raw = _enumerate_product(bounds, norm, log_cut, limit, cfg.node_budget)
        extra_tail = 0.0
    raw.sort(key=lambda item: item[0].sort_key())
    subsets = [(u, math.exp(lv)) for u, lv in raw]
    inside = math.fsum(math.exp(lv / alpha) for _, lv in raw)
    dropped = max(s_alpha_upper - inside, 0.0)
    tail = threshold * dropped + extra_tail + cfg.label_tail_bound
    return ActivePlan(
        epsilon=cfg.epsilon, alpha=alpha, threshold=threshold, s_alpha_upper=s_alpha_upper,
        subsets=subsets, tail_bound=tail, tail_fraction=cfg.tail_fraction, ell_max=cfg.ell_max,
    )


def cardinality_bound(plan: ActivePlan) -> float:
    """Upper bound ``(1/eps_tail)^(1/(alpha-1)) * S^(alpha/(alpha-1))`` on ``|plan|``.

    With the default ``tail_fraction`` of one half this is ``(2/eps)^(...)``.
    """
    a = plan.alpha
    eps_tail = plan.tail_fraction * plan.epsilon
    return math.exp(
        (-math.log(eps_tail) + a * math.log(plan.s_alpha_upper)) / (a - 1.0)
    )


def truncation_dimension(plan: ActivePlan) -> int:
    """Largest cardinality in the plan (0 if the plan is empty)."""
    return max((len(u) for u, _ in plan.subsets), default=0)


# constant of the label-truncation bound for 1/(1 + sum x_j / j^2)
_LABEL_CONST = 1.0 / (36.0 * (1.0 - math.pi**2 / 12.0) ** 3)


def label_truncation_bound(ell: int) -> float:
    """Error bound for dropping all labels above ``ell`` in ``1/(1 + sum x_j/j^2)``."""
    return _LABEL_CONST * float(ell) ** -3 if ell > 0 else math.inf


def example_label_cap(eps: float) -> int:
    """Smallest ``ell >= 1`` whose label-truncation bound is at most ``eps / 3``."""
    if not eps > 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    if math.isinf(eps):
        return 1
    ell = max(1, math.ceil((3.0 * _LABEL_CONST / eps) ** (1.0 / 3.0)))
    while ell > 1 and label_truncation_bound(ell - 1) <= eps / 3:
        ell -= 1
    while label_truncation_bound(ell) > eps / 3:
        ell += 1
    return ell
