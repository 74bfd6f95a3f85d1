"""Delimited outputs and the figures rendered alongside them.

CSV files are written with full-precision repr floats so a rerun with
the same seed reproduces them byte for byte. Each CSV-producing command
also renders a matplotlib figure next to the data: convergence curves
for runs, the best-stepsize envelope for sweeps, and the fitted decay
line for scaling fits.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .harness import EnvelopeRow, FitResult, MetricsRow, TrialRow

TRIAL_COLUMNS = ["algo", "eta", "gamma", "trial", "frame", "sim_time_s", "opt_error", "test_error"]
AGGREGATE_COLUMNS = ["algo", "eta", "gamma", "frame", "sim_time_s", "opt_error", "test_error", "trials"]
ENVELOPE_COLUMNS = ["frame", "sim_time_s", "opt_error", "test_error", "eta", "gamma"]


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def _write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_trial_csv(path, rows: list[TrialRow]):
    _write_csv(
        path, TRIAL_COLUMNS,
        [
            (r.algo, r.eta, r.gamma, r.trial, r.frame, r.sim_time_s, r.opt_error, r.test_error)
            for r in rows
        ],
    )


def write_aggregate_csv(path, rows: list[MetricsRow]):
    _write_csv(
        path, AGGREGATE_COLUMNS,
        [
            (r.algo, r.eta, r.gamma, r.frame, r.sim_time_s, r.opt_error, r.test_error, r.trials)
            for r in rows
        ],
    )


def write_envelope_csv(path, rows: list[EnvelopeRow]):
    _write_csv(
        path, ENVELOPE_COLUMNS,
        [(r.frame, r.sim_time_s, r.opt_error, r.test_error, r.eta, r.gamma) for r in rows],
    )


def render_curves(path, aggregates: list[MetricsRow], title: str):
    """Log-log optimality error against simulated time, one line per grid point."""
    groups: dict[tuple[float, float], list[MetricsRow]] = {}
    for row in aggregates:
        groups.setdefault((row.eta, row.gamma), []).append(row)
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    for (eta, gamma), rows in sorted(groups.items()):
        # frame 0 sits at time 0 and cannot appear on a log axis
        rows = [r for r in sorted(rows, key=lambda r: r.frame) if r.frame > 0]
        t = [r.sim_time_s for r in rows]
        ax.loglog(t, [r.opt_error for r in rows], label=f"eta={eta:.3g}, gamma={gamma:.3g}")
    ax.set_xlabel("simulated time [s]")
    ax.set_ylabel("optimality error")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    if len(groups) <= 12:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_envelope(path, envelope: list[EnvelopeRow], title: str):
    """Best-grid-point error and test error against simulated time."""
    rows = sorted(envelope, key=lambda r: r.frame)
    t = [r.sim_time_s for r in rows if r.frame > 0]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 4.0))
    ax1.loglog(t, [r.opt_error for r in rows if r.frame > 0], marker=".")
    ax1.set_xlabel("simulated time [s]")
    ax1.set_ylabel("best optimality error")
    ax1.grid(True, which="both", alpha=0.3)
    ax2.semilogx(t, [r.test_error for r in rows if r.frame > 0], marker=".")
    ax2.set_xlabel("simulated time [s]")
    ax2.set_ylabel("test error at best stepsizes")
    ax2.grid(True, which="both", alpha=0.3)
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_fit(path, k_values, errors, fit: FitResult, title: str):
    """Measured final errors against horizon with the fitted power law."""
    k = np.asarray(k_values, dtype=float)
    err = np.asarray(errors, dtype=float)
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    ax.loglog(k, err, "o", label="measured")
    grid = np.geomspace(k.min(), k.max(), 200)
    ax.loglog(
        grid, fit.scale * (grid + fit.delta) ** fit.slope, "-",
        label=f"fit: slope {fit.slope:.3f}, delta {fit.delta:.1f}",
    )
    ax.set_xlabel("frames K")
    ax.set_ylabel("final optimality error")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
