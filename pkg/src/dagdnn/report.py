"""Render a training run into a delimited trace and companion figures."""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .passes import assign_levels
from .training import TrainRun

__all__ = ["write_trace_csv", "render_curves", "render_level_profile", "make_report"]

TRACE_FIELDS = ("step", "loss", "fidelity", "step_size", "halvings")


def write_trace_csv(run: TrainRun, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACE_FIELDS)
        w.writeheader()
        for rec in run.history:
            w.writerow({k: rec[k] for k in TRACE_FIELDS})


def render_curves(run: TrainRun, path: str) -> None:
    """Loss and fidelity against step, log scale when everything is positive."""
    steps = [rec["step"] for rec in run.history]
    losses = [rec["loss"] for rec in run.history]
    fids = [rec["fidelity"] for rec in run.history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, losses, label="loss", color="tab:blue")
    ax.plot(steps, fids, label="fidelity", color="tab:orange", linestyle="--")
    if min(losses) > 0 and min(fids) > 0:
        ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("value")
    ax.set_title(f"training trace ({run.steps} steps, stop: {run.stop_reason})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_level_profile(run: TrainRun, path: str) -> None:
    """Bar chart of node counts per level of the trained graph."""
    lm = assign_levels(run.graph)
    levels = list(range(len(lm.counts)))
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.bar(levels, lm.counts, color="tab:gray")
    ax.set_xlabel("level")
    ax.set_ylabel("nodes")
    ax.set_xticks(levels)
    ax.set_title("network level profile")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def make_report(run: TrainRun, outdir: str, basename: str = "report") -> dict[str, str]:
    """Write the CSV trace and both figures; returns label -> path."""
    os.makedirs(outdir, exist_ok=True)
    paths = {
        "trace": os.path.join(outdir, f"{basename}_trace.csv"),
        "curves": os.path.join(outdir, f"{basename}_curves.png"),
        "levels": os.path.join(outdir, f"{basename}_levels.png"),
    }
    write_trace_csv(run, paths["trace"])
    render_curves(run, paths["curves"])
    render_level_profile(run, paths["levels"])
    return paths
