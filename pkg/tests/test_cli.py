import json
import subprocess
import sys

import pytest

from yamabe_lab import cli
from yamabe_lab.fermi_metric import xn2_example
from yamabe_lab.weighted_solver import SolverError


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_sharp_run_writes_report(tmp_path, capsys):
    js, table = tmp_path / "r.json", tmp_path / "r.csv"
    code, _, _ = run(["sharp", "--dim", "4", "--quad-level", "1", "--assert", "sharp_closed_form", "--json-out", str(js), "--csv-out", str(table)], capsys)
    assert code == cli.EXIT_OK
    rep = json.loads(js.read_text())
    assert rep["schema"] == cli.SCHEMA_VERSION
    assert rep["checks"]["sharp_closed_form"]["passed"]
    assert rep["failed"] == []
    assert table.read_text().splitlines()[0] == "check,value,bound,passed"


def test_verify_from_config_file(tmp_path, capsys):
    metric = tmp_path / "h.json"
    metric.write_text(xn2_example(6).dumps())
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"kind": "verify", "dim": 6, "metric": "h.json", "epsilon": [0.5, 2.0], "points": 20, "degree": 2,
                               "assertions": ["bubble_identities", "killing_kernel", "second_variation", "delta_psi"]}))
    code, out, _ = run(["verify", str(cfg)], capsys)
    assert code == cli.EXIT_OK
    rep = json.loads(out)
    assert rep["config"]["metric"]["coeffs"][0]["i"] == 1
    assert all(c["passed"] for c in rep["checks"].values())


def test_solve_and_flux(capsys):
    code, out, _ = run(["solve", "--dim", "3", "--degree", "2", "--delta", "1.0", "--assert", "weak_residual", "--assert", "kernel_dimension"], capsys)
    assert code == cli.EXIT_OK
    assert json.loads(out)["results"]["kernel_dim_expected"] == 6
    code, out, _ = run(["flux", "--dim", "6", "--metric", "zero", "--assert", "flux_zero"], capsys)
    assert code == cli.EXIT_OK


def test_failed_assertion_exit_code(capsys):
    # the glued function has a positive flat-model gap, so flat_exact must fail without exact_bubble
    code, _, err = run(["energy", "--dim", "6", "--metric", "zero", "--epsilon", "0.1", "--quad-level", "0", "--assert", "flat_exact"], capsys)
    assert code == cli.EXIT_ASSERT
    assert "flat_exact" in err


@pytest.mark.parametrize(
    "argv",
    [
        ["energy", "--epsilon", "0.4", "--delta", "0.5"],
        ["solve", "--dim", "2"],
        ["verify", "--assert", "flux_zero"],
        ["verify", "--metric", "nonsense.json"],
        ["energy", "--epsilon", "-1"],
        ["verify", "missing.json"],
    ],
)
def test_config_errors(argv, capsys):
    code, _, err = run(argv, capsys)
    assert code == cli.EXIT_CONFIG
    assert "config error" in err


def test_bad_json_and_kind_mismatch(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(["verify", str(bad)], capsys)[0] == cli.EXIT_CONFIG
    other = tmp_path / "other.json"
    other.write_text(json.dumps({"kind": "solve"}))
    assert run(["verify", str(other)], capsys)[0] == cli.EXIT_CONFIG


def test_metric_constraint_violation_is_config_error(tmp_path, capsys):
    m = tmp_path / "m.json"
    m.write_text(json.dumps({"n": 6, "coeffs": [{"i": 1, "k": 1, "alpha": [0, 0, 0, 0, 0, 2], "value": 1.0}]}))
    code, _, err = run(["verify", "--metric", str(m)], capsys)
    assert code == cli.EXIT_CONFIG
    assert "gauge" in err


def test_solver_failure_exit_code(monkeypatch, capsys):
    def boom(cfg):
        raise SolverError("non-finite Gram matrix")

    monkeypatch.setitem(cli.RUNNERS, "solve", boom)
    code, out, err = run(["solve", "--dim", "3", "--degree", "1"], capsys)
    assert code == cli.EXIT_SOLVER
    assert json.loads(out)["error"] == "non-finite Gram matrix"


def test_build_config_overrides():
    cfg = cli.build_config({"kind": "energy", "epsilon": [0.1]}, {"epsilon": [0.05, 0.025], "delta": None})
    assert cfg.epsilon == (0.05, 0.025)
    assert cfg.delta == 0.5
    assert cfg.to_json()["schema"] == cli.SCHEMA_VERSION


def test_thread_variable_pins_libraries():
    code = "import os, yamabe_lab.cli; print(os.environ['OMP_NUM_THREADS'], os.environ['NUMBA_NUM_THREADS'])"
    out = subprocess.run([sys.executable, "-c", code], env={"YAMABE_LAB_THREADS": "1", "PATH": ""}, capture_output=True, text=True)
    assert out.stdout.split() == ["1", "1"]


def test_console_entry_point_help():
    out = subprocess.run([sys.executable, "-m", "yamabe_lab.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    assert "verify" in out.stdout


GOLDEN_ENERGY_HEADER = (
    "epsilon,delta,numerator,denominator,quotient,sharp_gap,mc_sigma,flat_gap,curvature_gap,curvature_sigma,"
    "bulk_lhs,boundary_expansion,sphere_flux,correction_term,local_slack,theta_point,local2_rhs,local2_excess,local2_constant"
)


def test_energy_csv_header(tmp_path, capsys):
    table = tmp_path / "e.csv"
    code, _, _ = run(["energy", "--dim", "6", "--metric", "zero", "--epsilon", "0.1", "--quad-level", "0", "--csv-out", str(table)], capsys)
    assert code == cli.EXIT_OK
    lines = table.read_text().splitlines()
    assert lines[0] == GOLDEN_ENERGY_HEADER
    assert len(lines) == 2


def test_metric_json_round_trip(tmp_path, capsys):
    H = xn2_example(6, scale=0.75)
    metric = tmp_path / "h.json"
    metric.write_text(H.dumps())
    code, out, _ = run(["flux", "--dim", "6", "--metric", str(metric)], capsys)
    assert code == cli.EXIT_OK
    assert json.loads(out)["config"]["metric"] == H.to_json()


def test_verify_zero_metric(capsys):
    code, out, _ = run(["verify", "--dim", "6", "--metric", "zero", "--degree", "2"], capsys)
    assert code == cli.EXIT_OK
    assert json.loads(out)["failed"] == []


def test_output_independent_of_thread_count(tmp_path):
    argv = ["energy", "--dim", "6", "--metric", "xn2", "--epsilon", "0.1", "--epsilon", "0.05", "--quad-level", "0"]
    texts = []
    for threads in ("1", "2"):
        target = tmp_path / f"t{threads}.csv"
        env = {"YAMABE_LAB_THREADS": threads, "PATH": "", "HOME": str(tmp_path)}
        out = subprocess.run([sys.executable, "-m", "yamabe_lab.cli", *argv, "--csv-out", str(target)], env=env, capture_output=True, text=True)
        assert out.returncode == cli.EXIT_OK, out.stderr
        texts.append(target.read_bytes())
    assert texts[0] == texts[1]
