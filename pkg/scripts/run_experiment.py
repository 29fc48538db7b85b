"""Full synthetic sweep (all regimes and methods) with the reference two-band structure.

Usage: python3 scripts/run_experiment.py [--runs 10] [--out-dir results] [extra evaluate flags]

Writes results.csv/json and summary.csv/json (plot-ready) to the output directory.
"""

import argparse
import sys

from specgraph.cli import main as cli_main


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--runs", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", default="results")
    args, extra = ap.parse_known_args(argv)
    return cli_main(
        ["evaluate", "--full", "--runs", str(args.runs), "--seed", str(args.seed), "--out-dir", args.out_dir, *extra]
    )


if __name__ == "__main__":
    sys.exit(main())
