"""Two-panel coupling-flow trajectories with scale markers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .io import FLOW_COLUMNS, read_csv, read_summary
from .style import new_figure, save


@dataclass
class FlowPlotResult:
    out_path: str
    n_scales: int
    j_ab: int | None
    j_m: int | None
    lambda_flat_deviation: float | None  # max |lambda_j - lambda_{j_ab-1}|, j >= j_ab-1
    q_pre_coalescence_max: float | None  # max |q_j| below the coalescence scale


def _chi(j, j_m):
    if j_m is None or j <= j_m:
        return 1.0
    return 2.0 ** -(j - j_m)


def plot_flow(flow_csv, summary_json, out_path) -> FlowPlotResult:
    """Render flow.csv with coalescence/mass markers from summary.json.

    For bounded-remainder runs (remainder_K > 0 in the summary) the q
    panel carries the envelope band recomputed from the published bound
    shape: cumulative K |a-b|^{-2} chi_j 4^{-(j-j_ab)} gtilde_j.
    """
    rows = read_csv(flow_csv, FLOW_COLUMNS)
    summary = read_summary(summary_json)
    j = np.array([row["j"] for row in rows])
    lam_a = np.array([row["lambda_a"] for row in rows])
    lam_b = np.array([row["lambda_b"] for row in rows])
    q_a = np.array([row["q_a"] for row in rows])
    q_b = np.array([row["q_b"] for row in rows])
    gtilde = np.array([row["gtilde"] for row in rows])
    j_ab = summary["j_ab"]
    j_m = summary["j_m"]

    fig, (ax_l, ax_q) = new_figure(2, 1, sharex=True, figsize=(7.0, 6.0))
    ax_l.plot(j, lam_a, "o-", ms=3, label=r"$\lambda_a$")
    ax_l.plot(j, lam_b, "s--", ms=3, label=r"$\lambda_b$")
    ax_l.set_ylabel("observable coupling")
    ax_q.plot(j, q_a, "o-", ms=3, label=r"$q_a$")
    ax_q.plot(j, q_b, "s--", ms=3, label=r"$q_b$")
    ax_q.set_ylabel("q")
    ax_q.set_xlabel("scale j")

    for ax in (ax_l, ax_q):
        if j_ab is not None:
            ax.axvline(j_ab, color="tab:red", lw=1, alpha=0.7)
        if j_m is not None:
            ax.axvline(j_m, color="tab:green", lw=1, alpha=0.7, ls="--")
    if j_ab is not None:
        ax_l.annotate("coalescence", (j_ab, ax_l.get_ylim()[1]), fontsize=7, color="tab:red")
    if j_m is not None:
        ax_l.annotate("mass scale", (j_m, ax_l.get_ylim()[0]), fontsize=7, color="tab:green")

    K = summary.get("remainder_K", 0.0) or 0.0
    if K > 0 and j_ab is not None:
        inv_ab2 = 1.0 / summary["ab_distance"] ** 2
        band = np.zeros(len(j))
        acc = 0.0
        for i, jj in enumerate(j):
            if jj >= j_ab:
                acc += K * inv_ab2 * _chi(jj, j_m) * 4.0 ** -(jj - j_ab) * gtilde[i]
            band[i] = acc
        center = 0.5 * (q_a + q_b)
        ax_q.fill_between(j, center - band, center + band, alpha=0.2, label="remainder envelope")
    ax_l.legend(loc="best")
    ax_q.legend(loc="best")
    save(fig, out_path)

    flat_dev = None
    pre_q = None
    if j_ab is not None:
        j0 = max(int(j_ab) - 1, 0)
        mask = j >= j0
        flat_dev = float(
            max(
                np.abs(lam_a[mask] - lam_a[j == j0][0]).max(),
                np.abs(lam_b[mask] - lam_b[j == j0][0]).max(),
            )
        )
        below = j < j_ab
        if below.any():
            pre_q = float(max(np.abs(q_a[below]).max(), np.abs(q_b[below]).max()))
    return FlowPlotResult(
        out_path=str(out_path),
        n_scales=len(rows),
        j_ab=j_ab,
        j_m=j_m,
        lambda_flat_deviation=flat_dev,
        q_pre_coalescence_max=pre_q,
    )
