"""Pinned backend settings so identical inputs render identical bytes."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (after backend pin)

RC = {
    "figure.figsize": (7.0, 4.5),
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "rgwsaw-plots",
}

# strip the nondeterministic metadata: PNG's Software chunk, SVG's date
PNG_METADATA = {"Software": None}
SVG_METADATA = {"Date": None}


def new_figure(nrows=1, ncols=1, **kw):
    plt.rcdefaults()
    plt.rcParams.update(RC)
    return plt.subplots(nrows, ncols, **kw)


def save(fig, out_path):
    kwargs = {}
    name = str(out_path)
    if name.endswith(".png"):
        kwargs["metadata"] = PNG_METADATA
    elif name.endswith(".svg"):
        kwargs["metadata"] = SVG_METADATA
    fig.savefig(out_path, **kwargs)
    plt.close(fig)
