import csv
import io
import json

import numpy as np
import pytest

from mdm.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, ConfigFieldError, RunConfig, main
from mdm.decomposition import Subset
from oracles import brute_active

QUAD = {"problem": {"name": "quadratic", "params": {"lambda": {"kind": "power", "p": 4}}},
        "epsilon": 1e-3}
POD = {"problem": {"name": "pod-synthetic", "params": {"b1": 0, "b2": 4}}, "epsilon": 1e-3,
       "alpha": 2.0}


def run(tmp_path, cmd, cfg, *extra):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / f"{cmd}.out"
    rc = main([cmd, "--config", str(path), "--out", str(out), *extra])
    return rc, (out.read_text() if out.exists() else None)


def strict_json(text):
    def bad(c):
        raise ValueError(f"non-standard JSON constant {c}")

    return json.loads(text, parse_constant=bad)


# --- configuration -------------------------------------------------------------------------------


def test_config_round_trip():
    cfg = RunConfig.from_dict({**QUAD, "backend": "lattice", "q": 0.8, "seed": 5,
                               "cost": {"kind": "linear", "a": 1, "b": 2}})
    back = RunConfig.from_dict(json.loads(cfg.to_json()))
    assert back == cfg
    assert back.problem == "quadratic" and back.params == {"lambda": {"kind": "power", "p": 4}}


def test_config_flat_problem_string():
    cfg = RunConfig.from_dict({"problem": "motivating", "epsilon": 0.1})
    assert cfg.problem == "motivating" and cfg.params == {}


@pytest.mark.parametrize("data, field", [
    ({"epsilon": 1e-3}, "problem"),
    ({**QUAD, "epsilon": -1}, "epsilon"),
    ({**QUAD, "epsilon": "small"}, "epsilon"),
    ({**QUAD, "backend": "mc"}, "backend"),
    ({**QUAD, "seed": -3}, "seed"),
    ({**QUAD, "threads": 0}, "threads"),
    ({**QUAD, "colour": "red"}, "colour"),
    ({**QUAD, "cost": {"kind": "quadratic"}}, "cost"),
    ({**QUAD, "eps_list": []}, "eps_list"),
])
def test_config_errors_name_the_field(data, field):
    with pytest.raises(ConfigFieldError) as exc:
        RunConfig.from_dict(data)
    assert exc.value.field == field and repr(field) in str(exc.value)


# --- exit codes ------------------------------------------------------------------------------------


def test_usage_errors_exit_2(tmp_path, capsys):
    assert run(tmp_path, "integrate", {"epsilon": 1e-3})[0] == EXIT_USAGE
    assert "problem" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["plan", "--config", str(bad)]) == EXIT_USAGE
    assert main(["plan", "--config", str(tmp_path / "missing.json")]) == EXIT_USAGE
    assert run(tmp_path, "integrate", {**QUAD, "family": "exp-weighted"})[0] == EXIT_USAGE
    assert run(tmp_path, "integrate", {**QUAD, "problem": "nope"})[0] == EXIT_USAGE
    assert run(tmp_path, "integrate", QUAD, "--threads", "0")[0] == EXIT_USAGE


def test_hat_is_refused(tmp_path, capsys):
    rc, _ = run(tmp_path, "integrate", {"problem": "hat", "epsilon": 1e-2})
    assert rc == EXIT_USAGE
    assert "dominated convergence" in capsys.readouterr().err


def test_resource_failure_exits_1(tmp_path):
    rc, out = run(tmp_path, "integrate", {**QUAD, "eval_budget": 10})
    assert rc == EXIT_FAIL
    d = strict_json(out)
    assert d["failed"] and d["rows"]


def test_threads_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("MDM_THREADS", "two")
    assert run(tmp_path, "integrate", QUAD)[0] == EXIT_USAGE
    monkeypatch.setenv("MDM_THREADS", "2")
    assert run(tmp_path, "integrate", QUAD)[0] == EXIT_OK


# --- commands ---------------------------------------------------------------------------------------


def test_integrate_deterministic(tmp_path):
    rc1, a = run(tmp_path, "integrate", QUAD, "--threads", "1")
    rc2, b = run(tmp_path, "integrate", QUAD, "--threads", "3")
    assert rc1 == rc2 == EXIT_OK and a == b
    d = strict_json(a)
    assert abs(d["estimate"] - np.pi**4 / 1080) <= 1e-3


def test_integrate_writes_csv(tmp_path):
    rc, out = run(tmp_path, "integrate", QUAD, "--csv", str(tmp_path / "rows.csv"))
    rows = list(csv.DictReader(io.StringIO((tmp_path / "rows.csv").read_text())))
    assert rc == EXIT_OK and len(rows) == strict_json(out)["n_subsets"]
    assert rows[0]["indices"] == "" and rows[0]["n"] == "1"


def test_lattice_seed_override(tmp_path):
    cfg = {**QUAD, "epsilon": 1e-2, "backend": "lattice"}
    a = strict_json(run(tmp_path, "integrate", cfg, "--seed", "1")[1])
    b = strict_json(run(tmp_path, "integrate", cfg, "--seed", "2")[1])
    assert a["seed"] == 1 and b["seed"] == 2 and a["estimate"] != b["estimate"]


def test_plan_matches_brute_force(tmp_path):
    rc, out = run(tmp_path, "plan", POD)
    assert rc == EXIT_OK
    d = strict_json(out)
    plan = d["plan"]
    got = [Subset(s["indices"]) for s in plan["subsets"]]
    assert max(max(u, default=0) for u in got) <= 50 and max(len(u) for u in got) <= 6
    want = brute_active(1.0, 0.0, lambda a: a.astype(float) ** -4.0, 12.0**-0.5,
                        plan["alpha"], plan["threshold"], range(1, 51), 6)
    assert got == want
    assert d["info_cost"] == sum(r["n"] * 2 ** len(r["indices"])
                                 for r in d["allocation"]["rows"])


def test_sweep_rows(tmp_path, capsys):
    cfg = {**QUAD, "eps_list": [1e-1, 1e-2, 1e-3]}
    rc, out = run(tmp_path, "sweep", cfg)
    assert rc == EXIT_OK
    rows = list(csv.DictReader(io.StringIO(out)))
    assert [float(r["epsilon"]) for r in rows] == [1e-1, 1e-2, 1e-3]
    assert all(float(r["achieved_error"]) <= float(r["epsilon"]) for r in rows)
    assert "cost_slope=" in capsys.readouterr().err


def test_four_point_sweep(tmp_path):
    rc, out = run(tmp_path, "sweep", {**QUAD, "eps_list": [1e-1, 1e-2, 1e-3, 1e-4]})
    lines = out.strip().split("\n")
    assert rc == EXIT_OK and len(lines) == 5
    assert lines[0].startswith("epsilon,estimate,reference,achieved_error,tail_bound,quad_bound,"
                               "x_factor,y_factor,info_cost,raw_calls,wall_seconds")


def test_one_point_sweep_matches_integrate(tmp_path):
    _, out = run(tmp_path, "sweep", {**QUAD, "eps_list": [1e-3]})
    row = next(csv.DictReader(io.StringIO(out)))
    rep = strict_json(run(tmp_path, "integrate", QUAD)[1])
    assert float(row["estimate"]) == rep["estimate"]
    assert float(row["info_cost"]) == rep["info_cost"]
    assert int(row["raw_calls"]) == rep["raw_calls"]


def test_huge_epsilon_plan_is_empty(tmp_path):
    rc, out = run(tmp_path, "plan", {**QUAD, "epsilon": 100.0})
    assert rc == EXIT_OK and strict_json(out)["plan"]["subsets"] == []


def test_sweep_rejects_ascending(tmp_path):
    assert run(tmp_path, "sweep", {**QUAD, "eps_list": [1e-3, 1e-2]})[0] == EXIT_USAGE


def test_oracle(tmp_path):
    rc, out = run(tmp_path, "oracle", {"problem": "motivating", "epsilon": 1e-2})
    d = strict_json(out)
    assert rc == EXIT_OK and d["certified"] and d["requested_tolerance"] == 1e-3
    assert d["value"] == pytest.approx(1.1112573396781555, abs=1e-12)
    rc, out = run(tmp_path, "oracle", {"problem": "quadratic", "tolerance": 1e-8})
    assert rc == EXIT_OK and strict_json(out)["method"] == "closed form"
