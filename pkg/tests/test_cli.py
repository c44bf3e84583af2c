import math
import os
import subprocess
import sys

import pytest

from riskkit.reports import parse_report

PROBLEM_TEXT = """objective.c = 1
X.box = -10, 10
constraint.f0.c0 = -1
constraint.f0.d0 = 0
constraint.f.A = 0
constraint.f.a = 1
gmm.weights = 0.5, 0.5
gmm.means = 0; 1
gmm.covs = 1 | 1
alpha = 0.1
"""


def run_cli(*args, env=None):
    full_env = dict(os.environ)
    if env:
        full_env.update(env)
    return subprocess.run(
        [sys.executable, "-m", "riskkit", *args],
        capture_output=True,
        text=True,
        env=full_env,
    )


def test_estimate_cvar_report():
    res = run_cli(
        "estimate", "--risk", "cvar:0.05", "--dist", "normal(0,1)",
        "--n", "200000", "--seed", "42", "--level", "0.95",
    )
    assert res.returncode == 0, res.stderr
    report = parse_report(res.stdout)
    assert report["ci_lo"] <= 2.0627128 <= report["ci_hi"]
    assert report["estimate"] == pytest.approx(2.0627128, abs=0.05)
    assert report["n"] == 200000 and report["seed"] == 42
    assert report["level"] == 0.95


def test_estimate_reports_are_byte_identical():
    args = ("estimate", "--risk", "cvar:0.1", "--dist", "normal(0,1)", "--n", "5000", "--seed", "7")
    a, b = run_cli(*args), run_cli(*args)
    assert a.stdout == b.stdout
    assert a.returncode == b.returncode == 0


def test_estimate_empty_input_exits_2(tmp_path):
    empty = tmp_path / "empty.txt"
    empty.write_text("")
    res = run_cli("estimate", "--risk", "cvar:0.05", "--input", str(empty))
    assert res.returncode == 2
    assert "error" in res.stderr


def test_estimate_requires_exactly_one_source():
    res = run_cli("estimate", "--risk", "cvar:0.05")
    assert res.returncode == 2
    res = run_cli("estimate", "--risk", "cvar:0.05", "--dist", "normal(0,1)", "--input", "x.txt", "--n", "10")
    assert res.returncode == 2


def test_estimate_report_round_trips_and_writes_out(tmp_path):
    out = tmp_path / "report.txt"
    res = run_cli(
        "estimate", "--risk", "entropic", "--dist", "normal(0,1)",
        "--n", "50000", "--seed", "3", "--out", str(out),
    )
    assert res.returncode == 0
    assert out.read_text() == res.stdout
    report = parse_report(res.stdout)
    assert report["estimate"] == pytest.approx(0.5, abs=0.05)


def test_shortfall_saa():
    res = run_cli(
        "shortfall", "--loss", "expsr", "--lambda", "1", "--dist", "normal(0,1)",
        "--n", "200000", "--seed", "1",
    )
    assert res.returncode == 0, res.stderr
    report = parse_report(res.stdout)
    assert report["estimate"] == pytest.approx(0.5, abs=0.02)
    assert report["estimate"] == report["t_star"]
    assert report["sigma2"] == pytest.approx(math.e - 1.0, abs=0.1)


def test_shortfall_rm_mode():
    res = run_cli(
        "shortfall", "--loss", "expsr", "--lambda", "1", "--dist", "normal(0,1)",
        "--n", "100000", "--seed", "5", "--rm", "--bracket=-2,2",
    )
    assert res.returncode == 0, res.stderr
    report = parse_report(res.stdout)
    assert report["estimate"] == pytest.approx(0.5, abs=0.1)
    assert "sigma2" not in report  # RM emits a point estimate only


def test_sensitivity_location_family():
    res = run_cli(
        "sensitivity", "--risk", "cvar:0.05", "--family", "location:normal(0,1)",
        "--theta", "0.0", "--n", "20000", "--seed", "2",
    )
    assert res.returncode == 0, res.stderr
    report = parse_report(res.stdout)
    assert report["estimate"] == pytest.approx(1.0, abs=0.05)
    assert report["m"] >= report["n"]


def test_sensitivity_sr_mode():
    res = run_cli(
        "sensitivity", "--risk", "expsr", "--family", "location:normal(0,1)",
        "--theta", "0.2", "--n", "5000", "--seed", "2",
        "--shortfall-lambda", "1.0", "--bracket=-5,5",
    )
    assert res.returncode == 0, res.stderr
    report = parse_report(res.stdout)
    assert report["estimate"] == pytest.approx(1.0, abs=1e-9)


def test_optimize_two_assets(tmp_path):
    scen = tmp_path / "returns.txt"
    lines = []
    import numpy as np

    rng = np.random.default_rng(9)
    for a, b in rng.normal(1.0, 1.0, size=(5000, 2)):
        lines.append(f"{a},{b}")
    scen.write_text("\n".join(lines) + "\n")
    res = run_cli(
        "optimize", "--risk", "cvar:0.1", "--input", str(scen),
        "--box", "0,1", "--simplex", "--max-iter", "3000",
    )
    assert res.returncode == 0, res.stderr
    report = parse_report(res.stdout)
    x = report["x_star"]
    assert x[0] == pytest.approx(0.5, abs=0.1)
    assert x[0] + x[1] == pytest.approx(1.0, abs=1e-6)


def test_ccp_bnb_solves_problem_file(tmp_path):
    path = tmp_path / "mix.ccp"
    path.write_text(PROBLEM_TEXT)
    res = run_cli("ccp", "--problem", str(path))
    assert res.returncode == 0, res.stderr
    report = parse_report(res.stdout)
    assert report["x_star"] == pytest.approx(1.9408, abs=1e-2)
    assert report["status"] == "optimal"
    assert report["gap"] <= 1e-4
    assert report["prob_at_x"] >= 0.9


def test_ccp_local_solver(tmp_path):
    path = tmp_path / "mix.ccp"
    path.write_text(PROBLEM_TEXT)
    res = run_cli("ccp", "--problem", str(path), "--solver", "local")
    assert res.returncode == 0, res.stderr
    report = parse_report(res.stdout)
    assert report["x_star"] == pytest.approx(1.9408, abs=1e-2)


def test_ccp_infeasible_exits_3(tmp_path):
    path = tmp_path / "bad.ccp"
    path.write_text(PROBLEM_TEXT.replace("X.box = -10, 10", "X.box = -10, -9"))
    res = run_cli("ccp", "--problem", str(path))
    assert res.returncode == 3
    report = parse_report(res.stdout)
    assert report["status"] == "infeasible"


def test_ccp_malformed_problem_exits_2(tmp_path):
    path = tmp_path / "broken.ccp"
    path.write_text("objective.c = oops\n")
    res = run_cli("ccp", "--problem", str(path))
    assert res.returncode == 2
    assert "line 1" in res.stderr


def test_mvn_rectangle_probability():
    res = run_cli(
        "mvn", "--mean", "0,0", "--cov", "1,0.5;0.5,1", "--upper", "0,0",
        "--rel-tol", "2e-3", "--seed", "4",
    )
    assert res.returncode == 0, res.stderr
    report = parse_report(res.stdout)
    assert report["prob"] == pytest.approx(1.0 / 3.0, abs=0.005)
    assert report["budget_exhausted"] is False


def test_seed_env_var_is_default_only():
    base = ("estimate", "--risk", "cvar:0.1", "--dist", "normal(0,1)", "--n", "2000")
    via_env = run_cli(*base, env={"RISKKIT_SEED": "11"})
    via_flag = run_cli(*base, "--seed", "11")
    assert via_env.stdout == via_flag.stdout
    explicit = run_cli(*base, "--seed", "12", env={"RISKKIT_SEED": "11"})
    assert parse_report(explicit.stdout)["seed"] == 12


def test_warnings_reported_with_exit_zero():
    res = run_cli(
        "estimate", "--risk", "cvar:0.1", "--dist", "normal(0,1)",
        "--n", "1000", "--seed", "1", "--bracket=-20,-10",
    )
    assert res.returncode == 0
    report = parse_report(res.stdout)
    assert "bracket" in report["warnings"]
