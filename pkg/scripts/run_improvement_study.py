#!/usr/bin/env python3
"""Spline-improvement study: IMP per knot count and coefficient.

Writes imp_table.csv plus the run manifest into --out-dir.
"""

import argparse
import sys

from vcre.cli import main as cli_main


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--reps", type=int, default=100)
    ap.add_argument("--seed", type=int, default=130)
    ap.add_argument("--knots", default="7:15")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out-dir", default="results/improvement")
    args = ap.parse_args()
    return cli_main([
        "simulate",
        "--scenario", "imp",
        "--reps", str(args.reps),
        "--seed", str(args.seed),
        "--knots", args.knots,
        "--threads", str(args.threads),
        "--out-dir", args.out_dir,
    ])


if __name__ == "__main__":
    sys.exit(main())
