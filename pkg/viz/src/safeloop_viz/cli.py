"""Command-line entry points for the plotting scripts.

Each script takes ``--in`` (artifact directory written by the safeloop
CLI) and one or more ``--out`` image paths (.png or .svg, repeatable).
Exit codes: 0 success, 2 schema/validation failure.
"""

from __future__ import annotations

import argparse
import sys

from .io import SchemaError
from .plots import PlotSpec, plot_barrier_trace, plot_safety_heatmap, plot_trajectories


def _parser(desc: str, default_stem: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=desc)
    p.add_argument("--in", dest="in_dir", required=True,
                   help="artifact directory (traj.csv / grid.csv / summary.json)")
    p.add_argument("--out", dest="out_paths", action="append",
                   default=None, metavar="IMAGE",
                   help=f".png or .svg path, repeatable "
                        f"(default: {default_stem}.png and {default_stem}.svg "
                        "in the input directory)")
    p.add_argument("--max-trials", type=int, default=None,
                   help="draw at most this many trials")
    return p


def _spec(args, default_stem: str) -> PlotSpec:
    out = args.out_paths
    if not out:
        out = [f"{args.in_dir}/{default_stem}.png",
               f"{args.in_dir}/{default_stem}.svg"]
    return PlotSpec(in_dir=args.in_dir, out_paths=out,
                    max_trials=args.max_trials)


def _run(fn, args, default_stem: str) -> int:
    spec = _spec(args, default_stem)
    try:
        result = fn(spec)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if isinstance(result, dict) and result:
        print(", ".join(f"{k}={v}" for k, v in result.items()))
    for path in spec.out_paths:
        print(f"wrote {path}")
    return 0


def main_trajectories(argv=None) -> int:
    args = _parser("State-plane trajectory bundle with safe-set overlay.",
                   "trajectories").parse_args(argv)
    return _run(plot_trajectories, args, "trajectories")


def main_barrier(argv=None) -> int:
    args = _parser("Barrier value h(x_k) versus k for all logged trials.",
                   "barrier_trace").parse_args(argv)
    return _run(plot_barrier_trace, args, "barrier_trace")


def main_heatmap(argv=None) -> int:
    args = _parser("Certified vs empirical safety-probability heatmaps; "
                   "re-validates certificate consistency before rendering.",
                   "heatmap").parse_args(argv)
    return _run(plot_safety_heatmap, args, "heatmap")


if __name__ == "__main__":
    sys.exit(main_trajectories())
