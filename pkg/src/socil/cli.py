"""Command line entry point: ``socil run|sweep|validate|demo``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from socil.harness import (
    ConfigError,
    DemonstrationError,
    RunAborted,
    RunConfig,
    generate_demonstration,
    run_online,
    summary_table,
)
from socil.systems import SYSTEMS

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_ABORT = 0, 1, 2, 3

# flag name -> RunConfig field; only flags given on the command line are applied
_RUN_FLAGS = ("system", "mode", "alpha", "beta", "sigma", "seed", "iters")


def _common(p: argparse.ArgumentParser, out_default: str) -> None:
    p.add_argument("--config", type=Path, help="JSON file with RunConfig fields")
    p.add_argument("--system", choices=sorted(SYSTEMS), default=None)
    p.add_argument("--mode", choices=["safe", "baseline"], default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--out", type=Path, default=Path(out_default))
    p.add_argument("--no-plots", action="store_true", help="skip the PNG figures")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="socil", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("run", help="one online learning run"), "socil-run")

    sw = sub.add_parser("sweep", help="seeded trials over noise levels")
    _common(sw, "socil-sweep")
    sw.add_argument("--trials", type=int, default=10)
    sw.add_argument("--sigmas", type=str, default=None, help="comma separated, e.g. 0,0.3,0.6")

    val = sub.add_parser("validate", help="gradient, estimator and barrier oracle suites")
    val.add_argument("--suite", action="append", choices=["barrier", "estimator", "gradient"])

    demo = sub.add_parser("demo", help="demonstration only")
    _common(demo, "socil-demo")
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    """File values first, then any flag given explicitly on the command line."""
    data: dict = {}
    if args.config is not None:
        try:
            data = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {args.config} must hold a JSON object")
        data.pop("out", None)
    for name in _RUN_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            data[name] = value
    return RunConfig.from_dict(data)


def _report(run_log, out: Path, plots: bool) -> None:
    from socil.export import export

    export(run_log, out)
    if plots:
        from socil.plotting import plot_loss, plot_trajectory

        plot_loss([run_log], out / "loss.png")
        if run_log.final_trajectory is not None:
            plot_trajectory(run_log, out / "trajectory.png")


def _print_violations(run_log) -> None:
    for name, pct, mx in run_log.violations.rows():
        print(f"  {name}: {pct:.1f}% of steps, worst {mx:.1f}% over bound")


def cmd_run(args) -> int:
    cfg = load_config(args)
    try:
        result = run_online(cfg)
    except RunAborted as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        _report(exc.log, args.out, not args.no_plots)
        return EXIT_ABORT
    _report(result, args.out, not args.no_plots)
    losses = result.losses
    print(f"{cfg.system} {cfg.mode}: loss {losses[0]:.4g} -> {losses[-1]:.4g} over {len(losses)} iterations")
    print(f"  median ms/iter {np.median([r.ms_total for r in result.records]):.1f}")
    _print_violations(result)
    print(f"  wrote {args.out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    import dataclasses

    cfg = load_config(args)
    sigmas = [cfg.sigma] if args.sigmas is None else [float(s) for s in args.sigmas.split(",")]
    if args.trials < 1:
        raise ConfigError("--trials must be >= 1")
    logs, status = [], EXIT_OK
    for sigma in sigmas:
        for i in range(args.trials):
            run_cfg = dataclasses.replace(cfg, sigma=sigma, seed=cfg.seed + i)
            sub = args.out / f"sigma{sigma:g}_seed{run_cfg.seed}"
            try:
                result = run_online(run_cfg)
            except RunAborted as exc:
                print(f"sigma={sigma:g} seed={run_cfg.seed}: aborted: {exc}", file=sys.stderr)
                _report(exc.log, sub, False)
                status = EXIT_ABORT
                continue
            _report(result, sub, False)
            logs.append(result)
    if not logs:
        return status
    rows = summary_table(logs)
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sigma", "mode", "family", "pct_violation", "max_violation"])
        w.writerows(rows)
    for row in rows:
        print("sigma={:g} {:<8} {:<3} pct {:5.1f}  max {:5.1f}".format(*row))
    if not args.no_plots:
        from socil.plotting import plot_loss

        plot_loss(logs, args.out / "loss.png", [f"sigma {g.config.sigma:g}, seed {g.config.seed}" for g in logs])
    return status


def cmd_validate(args) -> int:
    from socil.validate import run_suites

    checks = run_suites(args.suite or ("barrier", "estimator", "gradient"))
    for c in checks:
        print(c.line())
    return EXIT_OK if all(c.passed for c in checks) else EXIT_VALIDATION


def cmd_demo(args) -> int:
    from socil.export import write_rows

    cfg = load_config(args)
    demo = generate_demonstration(cfg)
    traj = demo.trajectory
    args.out.mkdir(parents=True, exist_ok=True)
    n, m = traj.states.shape[1], traj.inputs.shape[1]
    r = demo.measurements.shape[1]
    rows = [
        [t, *traj.states[t], *(traj.inputs[t] if t < traj.horizon else [""] * m), *demo.measurements[t]]
        for t in range(traj.horizon + 1)
    ]
    header = ["t"] + [f"x_{i}" for i in range(n)] + [f"u_{j}" for j in range(m)] + [f"y_{k}" for k in range(r)]
    write_rows(args.out / "demonstration.csv", header, rows)
    print(f"{cfg.system}: demonstration over {traj.horizon} steps, written to {args.out / 'demonstration.csv'}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "validate": cmd_validate, "demo": cmd_demo}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DemonstrationError as exc:
        print(f"demonstration failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
