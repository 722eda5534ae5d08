"""Batch figures for rgwsaw experiment artifacts.

Three plot kinds, one per documented schema:

- decay:  green.csv  -> log-log decay with a slope -2 guide and the
          (2 pi)^-2 intercept line, least-squares slope annotated;
- flow:   flow.csv + summary.json -> two-panel coupling trajectories
          with coalescence/mass-scale markers and, for bounded-remainder
          runs, the envelope band recomputed from the summary fields;
- ratio:  sweep.csv -> (ratio - 1) against 1/log|a-b| with a fitted
          line through the origin.

Pure readers: inputs are never mutated, schema mismatches fail loudly,
and byte-identical inputs render pixel-identical images at the pinned
backend settings.
"""

from .decay import plot_decay
from .flowplot import plot_flow
from .ratio import plot_ratio
from .io import SchemaError

__version__ = "0.1.0"
__all__ = ["plot_decay", "plot_flow", "plot_ratio", "SchemaError"]
