"""Log-log Green-function decay with slope and intercept guides."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .io import GREEN_COLUMNS, read_csv
from .style import new_figure, save

TWO_PI_SQ_INV = 1.0 / (2.0 * math.pi) ** 2


@dataclass
class DecayResult:
    out_path: str
    n_points: int
    fitted_slope: float | None
    fitted_intercept: float | None


def plot_decay(green_csv, out_path) -> DecayResult:
    """Render green.csv as a log-log scatter with a slope -2 guide.

    The least-squares slope of log(green) against log|x| is annotated;
    a single-row file renders a scatter without a fit (with a warning).
    """
    rows = read_csv(green_csv, GREEN_COLUMNS)
    r = np.array(
        [math.sqrt(row["x1"] ** 2 + row["x2"] ** 2 + row["x3"] ** 2 + row["x4"] ** 2) for row in rows]
    )
    g = np.array([row["green"] for row in rows])
    if np.any(r <= 0) or np.any(g <= 0):
        raise ValueError(f"{green_csv}: decay plot needs positive |x| and green values")

    slope = intercept = None
    if len(rows) >= 2:
        coeff = np.polyfit(np.log(r), np.log(g), 1)
        slope, intercept = float(coeff[0]), float(coeff[1])
    else:
        warnings.warn("single data row: rendering scatter without a fit")

    fig, ax = new_figure()
    ax.loglog(r, g, "o", ms=4, label="lattice Green function")
    guide = TWO_PI_SQ_INV / r**2
    ax.loglog(r, guide, "--", lw=1, label=r"$(2\pi)^{-2} |x|^{-2}$")
    if slope is not None:
        ax.loglog(r, np.exp(intercept) * r**slope, ":", lw=1, label=f"fit: slope {slope:.3f}")
    ax.set_xlabel("|x|")
    ax.set_ylabel("green")
    ax.set_title("free-field decay")
    ax.legend()
    save(fig, out_path)
    return DecayResult(
        out_path=str(out_path), n_points=len(rows), fitted_slope=slope, fitted_intercept=intercept
    )
