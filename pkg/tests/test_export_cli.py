import csv
import json

import numpy as np
import pytest

from socil.cli import main
from socil.export import ExportError, export, fmt
from socil.harness import RunConfig, run_online

TIMING = {"ms_total", "ms_gradient"}


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def _strip_timing(rows):
    keep = [i for i, h in enumerate(rows[0]) if h not in TIMING]
    return [[r[i] for i in keep] for r in rows]


def test_fmt_round_trips_doubles():
    for x in (0.1, 1 / 3, -2.5e-300, 123456789.123456789):
        assert float(fmt(x)) == x
    assert fmt(True) == "1" and fmt(np.int64(7)) == "7"


def test_single_iteration_export(tmp_path):
    log = run_online(RunConfig(system="lqr-toy", iters=1, system_params={"u_bound": 0.4}))
    paths = export(log, tmp_path / "out")
    for p in paths.values():
        assert p.exists()
    rows = _rows(paths["iterations.csv"])
    assert rows[0] == ["iter", "loss", "theta_0", "theta_1", "ms_total", "ms_gradient", "stationarity", "degraded"]
    assert len(rows) == 2
    viol = _rows(paths["violations.csv"])
    assert viol[0] == ["iter", "family", "pct_violation", "max_violation"]
    assert viol[1][:2] == ["run", "u"]
    traj = _rows(paths["trajectory_final.csv"])
    assert traj[0] == ["t", "x_0", "u_0"] and traj[-1][-1] == ""
    manifest = json.loads(paths["manifest.json"].read_text())
    assert manifest["config"]["system"] == "lqr-toy"
    assert manifest["iterations_completed"] == 1


def test_reexport_is_identical_except_timing(tmp_path):
    cfg = RunConfig(system="lqr-toy", sigma=0.3, seed=3, iters=15)
    a = export(run_online(cfg), tmp_path / "a")
    b = export(run_online(RunConfig.from_dict(json.loads(a["manifest.json"].read_text())["config"])), tmp_path / "b")
    for name in ("iterations.csv", "plotdata_loss.csv"):
        assert _strip_timing(_rows(a[name])) == _strip_timing(_rows(b[name]))
    for name in ("violations.csv", "trajectory_final.csv", "manifest.json"):
        assert a[name].read_bytes() == b[name].read_bytes()


def test_export_error_names_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    log = run_online(RunConfig(system="lqr-toy", iters=1))
    with pytest.raises(ExportError) as err:
        export(log, blocker / "sub")
    assert "file" in str(err.value)


# -- command line --------------------------------------------------------------


def test_cli_run_writes_report(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--system", "lqr-toy", "--iters", "20", "--out", str(out)]) == 0
    for name in ("iterations.csv", "violations.csv", "trajectory_final.csv", "plotdata_loss.csv", "manifest.json", "loss.png", "trajectory.png"):
        assert (out / name).exists(), name
    assert "lqr-toy safe" in capsys.readouterr().out


def test_cli_flags_override_config_file(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"system": "lqr-toy", "iters": 4, "sigma": 0.2, "seed": 8}))
    out = tmp_path / "run"
    assert main(["run", "--config", str(cfg), "--iters", "3", "--out", str(out), "--no-plots"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["iters"] == 3
    assert manifest["config"]["sigma"] == 0.2 and manifest["config"]["seed"] == 8
    assert len(_rows(out / "iterations.csv")) == 4


def test_cli_bad_config_exit_code(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"system": "lqr-toy", "colour": "blue"}))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "colour" in capsys.readouterr().err


def test_cli_abort_exit_code(tmp_path, monkeypatch):
    import socil.cli as cli
    from socil.harness import RunAborted, RunLog

    def boom(cfg):
        from socil.harness import scenario

        sc = scenario(cfg)
        raise RunAborted("iteration 0: SolverError: diverged", RunLog(cfg, sc.theta_true, sc.theta0, aborted="x"))

    monkeypatch.setattr(cli, "run_online", boom)
    out = tmp_path / "abort"
    assert main(["run", "--system", "lqr-toy", "--out", str(out)]) == 3
    assert (out / "manifest.json").exists()


def test_cli_sweep_and_demo(tmp_path):
    out = tmp_path / "sweep"
    args = ["sweep", "--system", "lqr-toy", "--iters", "3", "--trials", "2", "--sigmas", "0,0.3", "--out", str(out)]
    assert main(args) == 0
    assert len(list(out.glob("sigma*_seed*"))) == 4
    assert (out / "summary.csv").exists() and (out / "loss.png").exists()
    assert main(["demo", "--system", "lqr-toy", "--sigma", "0.3", "--out", str(tmp_path / "d")]) == 0
    rows = _rows(tmp_path / "d" / "demonstration.csv")
    assert rows[0] == ["t", "x_0", "u_0", "y_0"] and len(rows) == 3


def test_cli_validate_estimator_suite(capsys):
    assert main(["validate", "--suite", "estimator"]) == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") == 5


def test_cli_validate_failure_exit_code(monkeypatch):
    import socil.validate as validate

    monkeypatch.setitem(validate.SUITES, "estimator", lambda: [validate.Check("estimator", "forced", 1.0, 0.0, False)])
    assert main(["validate", "--suite", "estimator"]) == 2
