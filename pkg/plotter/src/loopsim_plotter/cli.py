"""The `plot` command: one figure from one or more trajectory CSVs.

Exit codes: 0 success, 2 bad request (missing file, unknown metric, malformed
CSV).
"""

from __future__ import annotations

import argparse
import sys

from .figures import PlotterError, render_figure


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plot",
        description="Render trajectory figures from loopsim metrics CSVs.",
    )
    parser.add_argument(
        "--input", action="append", required=True, dest="inputs", metavar="CSV",
        help="trajectory CSV; repeat to overlay several runs",
    )
    parser.add_argument(
        "--metric", action="append", required=True, dest="metrics",
        help="metric column to plot; repeat for side-by-side panels",
    )
    parser.add_argument(
        "--baseline", action="append", type=float, dest="baselines",
        help="dashed horizontal reference line; repeat per metric",
    )
    parser.add_argument("--out", required=True, help="output image (.png or .svg)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    baselines = list(args.baselines or [])
    if len(baselines) > len(args.metrics):
        print("error: more baselines than metrics", file=sys.stderr)
        return 2
    baselines += [None] * (len(args.metrics) - len(baselines))
    try:
        path = render_figure(args.inputs, args.metrics, baselines, args.out)
    except PlotterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
