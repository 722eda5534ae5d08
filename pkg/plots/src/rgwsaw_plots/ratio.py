"""q_infinity/Green ratio against the 1/log|a-b| envelope."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .io import SWEEP_COLUMNS, read_csv
from .style import new_figure, save


@dataclass
class RatioResult:
    out_path: str
    n_points: int
    fitted_envelope: float | None  # K in |ratio - 1| ~ K / log|a-b|
    max_abs_deviation: float


def plot_ratio(sweep_csv, out_path) -> RatioResult:
    """Render sweep.csv as (ratio - 1) vs 1/log|a-b| with an origin fit."""
    rows = read_csv(sweep_csv, SWEEP_COLUMNS)
    x = np.array([row["inv_log_ab"] for row in rows])
    dev = np.array([row["deviation"] for row in rows])
    fitted = None
    if len(rows) >= 2 and float((x * x).sum()) > 0:
        fitted = float((x * np.abs(dev)).sum() / (x * x).sum())

    fig, ax = new_figure()
    ax.plot(x, dev, "o", ms=5, label="deviation")
    ax.axhline(0.0, color="k", lw=0.8)
    if fitted is not None:
        xs = np.linspace(0.0, float(x.max()) * 1.05, 50)
        ax.plot(xs, fitted * xs, "--", lw=1, label=f"envelope fit K = {fitted:.3f}")
        ax.plot(xs, -fitted * xs, "--", lw=1, color="tab:orange")
    ax.set_xlabel(r"$1 / \log|a-b|$")
    ax.set_ylabel(r"$q_\infty / \mathrm{green} - 1$")
    ax.set_title("two-point identity envelope")
    ax.legend()
    save(fig, out_path)
    return RatioResult(
        out_path=str(out_path),
        n_points=len(rows),
        fitted_envelope=fitted,
        max_abs_deviation=float(np.abs(dev).max()),
    )
