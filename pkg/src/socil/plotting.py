"""Static figures for run reports (file output only)."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from socil.harness import RunLog  # noqa: E402


def plot_loss(logs: Sequence[RunLog], path, labels: Optional[Sequence[str]] = None) -> Path:
    """Loss against iteration; several logs are overlaid."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for i, log in enumerate(logs):
        label = labels[i] if labels else f"{log.config.mode}, seed {log.config.seed}"
        ax.plot([r.iter for r in log.records], log.losses, lw=1.2, label=label)
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("cumulative loss")
    ax.grid(alpha=0.3)
    if len(logs) <= 8:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_trajectory(log: RunLog, path) -> Path:
    """Final executed trajectory against the demonstration, with the true bounds."""
    traj = log.final_trajectory
    demo = log.demonstration.trajectory if log.demonstration is not None else None
    n, m = traj.states.shape[1], traj.inputs.shape[1]
    fig, axes = plt.subplots(n + m, 1, figsize=(6, 1.6 * (n + m)), sharex=True)
    t = np.arange(traj.horizon + 1)
    bounds = {}
    cstr = log.theta_true.cstr
    for box in _boxes(log):
        key = ("x" if box.kind == "state" else "u", box.component)
        bounds[key] = cstr[box.cstr_index]
    for i in range(n):
        ax = axes[i]
        ax.plot(t, traj.states[:, i], label="learned")
        if demo is not None:
            ax.plot(t, demo.states[:, i], "k--", lw=1, label="demonstration")
        if ("x", i) in bounds:
            b = bounds[("x", i)]
            ax.axhline(b, color="r", lw=0.8)
            ax.axhline(-b, color="r", lw=0.8)
        ax.set_ylabel(f"x{i}")
    for j in range(m):
        ax = axes[n + j]
        ax.step(t[:-1], traj.inputs[:, j], where="post", label="learned")
        if demo is not None:
            ax.step(t[:-1], demo.inputs[:, j], "k--", where="post", lw=1)
        if ("u", j) in bounds:
            b = bounds[("u", j)]
            ax.axhline(b, color="r", lw=0.8)
            ax.axhline(-b, color="r", lw=0.8)
        ax.set_ylabel(f"u{j}")
    axes[0].legend(fontsize=8)
    axes[-1].set_xlabel("t")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def _boxes(log: RunLog):
    from socil.harness import scenario

    return scenario(log.config).problem.boxes
