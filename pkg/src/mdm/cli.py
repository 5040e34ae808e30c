"""Command-line front end.

``mdm plan|integrate|sweep|oracle --config run.json [--out FILE] [--csv FILE]
[--threads N] [--seed S]``.  The configuration is a single JSON document::

    {"problem": {"name": "quadratic", "params": {"lambda": {"kind": "power", "p": 4}}},
     "epsilon": 1e-3, "backend": "smolyak", "family": "anchored-unit"}

Exit codes: 0 success, 1 computational failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields

from mdm.active_set import ConfigError, ResourceError
from mdm.allocation import AllocationOverflow
from mdm.decomposition import CostModel, DecompositionError
from mdm.engine import EVAL_BUDGET, MdmRequest, RequestError, plan_and_allocate, run_mdm, sweep
from mdm.lattice import CbcBudgetError
from mdm.problems import ProblemError, ProblemRefused, make_problem, reference_value
from mdm.smolyak import RuleBudgetError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class ConfigFieldError(ValueError):
    """A configuration field is missing or invalid."""

    def __init__(self, name: str, msg: str):
        super().__init__(f"config field {name!r}: {msg}")
        self.field = name


def _opt_float(data, name, positive=False):
    v = data.get(name)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigFieldError(name, f"expected a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v) or (positive and v <= 0):
        raise ConfigFieldError(name, f"expected a positive finite number, got {v!r}")
    return v


def _opt_int(data, name, minimum=None):
    v = data.get(name)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigFieldError(name, f"expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigFieldError(name, f"must be >= {minimum}, got {v}")
    return v


def _opt_str(data, name, choices=None):
    v = data.get(name)
    if v is None:
        return None
    if not isinstance(v, str) or (choices and v not in choices):
        raise ConfigFieldError(name, f"expected one of {choices}, got {v!r}" if choices
                               else f"expected a string, got {v!r}")
    return v


@dataclass
class RunConfig:
    problem: str
    params: dict = field(default_factory=dict)
    cost: dict = field(default_factory=lambda: {"kind": "constant", "a": 1.0, "b": 0.0})
    epsilon: float | None = None
    eps_list: list | None = None
    alpha: float | None = None
    backend: str = "smolyak"
    family: str | None = None
    q: float | None = None
    path: str | None = None
    seed: int = 0
    threads: int | None = None
    m_shifts: int = 8
    eval_budget: int = EVAL_BUDGET
    tolerance: float | None = None
    out: str | None = None
    csv: str | None = None

    @classmethod
    def from_dict(cls, data) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigFieldError("<root>", "the configuration must be a JSON object")
        known = {f.name for f in fields(cls)}
        extra = sorted(set(data) - known)
        if extra:
            raise ConfigFieldError(extra[0], "unknown field")
        prob = data.get("problem")
        params = data.get("params", {})
        if isinstance(prob, dict):
            params = prob.get("params", params)
            prob = prob.get("name")
        if not isinstance(prob, str) or not prob:
            raise ConfigFieldError("problem", "a problem name is required")
        if not isinstance(params, dict):
            raise ConfigFieldError("params", "expected an object")
        cost = data.get("cost") or {}
        if not isinstance(cost, dict):
            raise ConfigFieldError("cost", "expected an object")
        try:
            cost = CostModel.from_dict(cost).to_dict()
        except (TypeError, ValueError) as exc:
            raise ConfigFieldError("cost", str(exc)) from None
        eps_list = data.get("eps_list")
        if eps_list is not None:
            if not isinstance(eps_list, list) or not eps_list:
                raise ConfigFieldError("eps_list", "expected a non-empty list")
            eps_list = [_opt_float({"eps_list": e}, "eps_list", positive=True) for e in eps_list]
        cfg = cls(
            problem=prob, params=params, cost=cost,
            epsilon=_opt_float(data, "epsilon", positive=True), eps_list=eps_list,
            alpha=_opt_float(data, "alpha"),
            backend=_opt_str(data, "backend", ("smolyak", "lattice")) or "smolyak",
            family=_opt_str(data, "family", ("anchored-unit", "exp-weighted")),
            q=_opt_float(data, "q", positive=True),
            path=_opt_str(data, "path", ("bar", "theorem1")),
            seed=_opt_int(data, "seed", 0) or 0,
            threads=_opt_int(data, "threads", 1),
            m_shifts=_opt_int(data, "m_shifts", 1) or 8,
            eval_budget=_opt_int(data, "eval_budget", 1) or EVAL_BUDGET,
            tolerance=_opt_float(data, "tolerance", positive=True),
            out=_opt_str(data, "out"), csv=_opt_str(data, "csv"),
        )
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        d["problem"] = {"name": d.pop("problem"), "params": d.pop("params")}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def request(self, epsilon: float | None = None) -> MdmRequest:
        eps = self.epsilon if epsilon is None else epsilon
        if eps is None:
            raise ConfigFieldError("epsilon", "required for this command")
        try:
            prob = make_problem(self.problem, self.params, CostModel.from_dict(self.cost))
        except ProblemError as exc:
            raise ConfigFieldError("problem", str(exc)) from None
        req = MdmRequest(problem=prob, epsilon=eps, alpha=self.alpha, backend=self.backend,
                         family=self.family, q=self.q, path=self.path, seed=self.seed,
                         threads=self.threads, m_shifts=self.m_shifts,
                         eval_budget=self.eval_budget)
        return req.resolved()


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigFieldError("--config", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigFieldError("--config", f"invalid JSON: {exc}") from None
    return RunConfig.from_dict(data)


def _emit(text: str, path: str | None) -> None:
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")


def _dumps(obj) -> str:
    from mdm.engine import _finite_json

    return json.dumps(_finite_json(obj), indent=2, allow_nan=False) + "\n"


def cmd_plan(cfg: RunConfig) -> int:
    req, plan, alloc = plan_and_allocate(cfg.request())
    _emit(_dumps({"plan": plan.to_dict(), "allocation": alloc.to_dict(),
                  "cost_bound": alloc.cost_bound(), "info_cost": alloc.info_cost()}), cfg.out)
    return EXIT_OK


def cmd_integrate(cfg: RunConfig) -> int:
    rep = run_mdm(cfg.request())
    _emit(rep.to_json() + "\n", cfg.out)
    if cfg.csv:
        _emit(rep.to_csv(), cfg.csv)
    if rep.failed:
        print(f"mdm: computation failed: {rep.failure}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_sweep(cfg: RunConfig) -> int:
    eps_list = cfg.eps_list or ([cfg.epsilon] if cfg.epsilon else None)
    if not eps_list:
        raise ConfigFieldError("eps_list", "required for sweep")
    template = cfg.request(eps_list[0])
    try:
        res = sweep(template, eps_list)
    except RequestError as exc:
        raise ConfigFieldError("eps_list", str(exc)) from None
    _emit(res.to_csv(), cfg.csv or cfg.out)
    if cfg.csv and cfg.out:
        _emit(_dumps({"cost_slope": res.cost_slope, "rows": res.rows}), cfg.out)
    else:
        print(f"cost_slope={res.cost_slope!r}", file=sys.stderr)
    return EXIT_FAIL if any(r["failed"] for r in res.rows) else EXIT_OK


def cmd_oracle(cfg: RunConfig) -> int:
    try:
        prob = make_problem(cfg.problem, cfg.params, CostModel.from_dict(cfg.cost))
    except ProblemError as exc:
        raise ConfigFieldError("problem", str(exc)) from None
    tol = cfg.tolerance or (cfg.epsilon / 10 if cfg.epsilon else 1e-4)
    ref = reference_value(prob, tol)
    _emit(_dumps({"problem": prob.name, "requested_tolerance": tol, **ref.to_dict()}), cfg.out)
    return EXIT_OK if ref.certified else EXIT_FAIL


COMMANDS = {"plan": cmd_plan, "integrate": cmd_integrate, "sweep": cmd_sweep,
            "oracle": cmd_oracle}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mdm", description="Multivariate decomposition method")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", help="output file (default: standard output)")
    p.add_argument("--csv", help="CSV output file")
    p.add_argument("--threads", type=int, help="worker threads (default: $MDM_THREADS or all cores)")
    p.add_argument("--seed", type=int, help="random seed for lattice shifts")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.out:
            cfg.out = args.out
        if args.csv:
            cfg.csv = args.csv
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigFieldError("--seed", "must be non-negative")
            cfg.seed = args.seed
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigFieldError("--threads", "must be >= 1")
            cfg.threads = args.threads
        elif cfg.threads is None and os.environ.get("MDM_THREADS"):
            env = os.environ["MDM_THREADS"]
            if not env.isdigit() or int(env) < 1:
                raise ConfigFieldError("MDM_THREADS", f"expected a positive integer, got {env!r}")
            cfg.threads = int(env)
        return COMMANDS[args.command](cfg)
    except ProblemRefused as exc:
        print(f"mdm: refused: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ResourceError, AllocationOverflow, RuleBudgetError, CbcBudgetError) as exc:
        print(f"mdm: computation failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (ConfigFieldError, ConfigError, RequestError, ProblemError,
            DecompositionError) as exc:
        print(f"mdm: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
