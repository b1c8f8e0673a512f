"""CSV/JSON export of run logs. Numbers are written with 17 significant digits."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from socil.harness import RunLog


class ExportError(OSError):
    pass


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % float(x)


def write_rows(path: Path, header, rows) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc}") from exc


def export(log: RunLog, out_dir) -> dict:
    """Write the run's files into ``out_dir`` (created if needed); returns their paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ExportError(f"cannot create {out}: {exc}") from exc
    p = log.theta_true.p
    paths = {name: out / name for name in (
        "manifest.json", "iterations.csv", "violations.csv", "trajectory_final.csv", "plotdata_loss.csv"
    )}

    try:
        paths["manifest.json"].write_text(json.dumps(log.manifest(), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise ExportError(f"cannot write {paths['manifest.json']}: {exc}") from exc

    header = ["iter", "loss"] + [f"theta_{i}" for i in range(p)] + ["ms_total", "ms_gradient", "stationarity", "degraded"]
    write_rows(
        paths["iterations.csv"],
        header,
        ([r.iter, r.loss, *r.theta, r.ms_total, r.ms_gradient, r.stationarity, r.degraded] for r in log.records),
    )

    rows = [("run", name, pct, mx) for name, pct, mx in log.violations.rows()]
    for r in log.records:
        rows += [(str(r.iter), name, pct, mx) for name, pct, mx in r.violations.rows()]
    write_rows(paths["violations.csv"], ["iter", "family", "pct_violation", "max_violation"], rows)

    traj = log.final_trajectory
    if traj is not None:
        n, m = traj.states.shape[1], traj.inputs.shape[1]
        header = ["t"] + [f"x_{i}" for i in range(n)] + [f"u_{j}" for j in range(m)]
        # the terminal stage has no input; leave those cells empty
        rows = [
            [t, *traj.states[t], *(traj.inputs[t] if t < traj.horizon else [""] * m)]
            for t in range(traj.horizon + 1)
        ]
    else:
        header, rows = ["t"], []
    write_rows(paths["trajectory_final.csv"], header, rows)

    losses = log.losses
    window = np.array([np.median(losses[max(0, k - 19) : k + 1]) for k in range(len(losses))])
    write_rows(
        paths["plotdata_loss.csv"],
        ["iter", "loss", "loss_median20"],
        ([r.iter, r.loss, w] for r, w in zip(log.records, window)),
    )
    return paths
