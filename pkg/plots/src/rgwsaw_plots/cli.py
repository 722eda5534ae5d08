"""Batch entry point: rgwsaw-plots {decay|flow|ratio} --in ... --out ..."""

from __future__ import annotations

import argparse
import sys

from .decay import plot_decay
from .flowplot import plot_flow
from .io import SchemaError
from .ratio import plot_ratio


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rgwsaw-plots", description=__doc__)
    sub = parser.add_subparsers(dest="kind", required=True)

    p = sub.add_parser("decay", help="log-log Green-function decay from green.csv")
    p.add_argument("--in", dest="inp", required=True, help="green.csv")
    p.add_argument("--out", required=True, help="output image (png or svg)")

    p = sub.add_parser("flow", help="coupling trajectories from flow.csv + summary.json")
    p.add_argument("--in", dest="inp", required=True, help="flow.csv")
    p.add_argument("--summary", required=True, help="summary.json")
    p.add_argument("--out", required=True)

    p = sub.add_parser("ratio", help="ratio envelope from sweep.csv")
    p.add_argument("--in", dest="inp", required=True, help="sweep.csv")
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.kind == "decay":
            result = plot_decay(args.inp, args.out)
        elif args.kind == "flow":
            result = plot_flow(args.inp, args.summary, args.out)
        else:
            result = plot_ratio(args.inp, args.out)
    except (SchemaError, OSError, ValueError) as exc:
        print(f"rgwsaw-plots: {exc}", file=sys.stderr)
        return 3
    print(result.out_path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
