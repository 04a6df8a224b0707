#!/usr/bin/env python3
"""Closed-form vs REML mean-squared-error benchmark at desk scale.

Writes bench_reml.csv (rows: estimands; columns: REML at each knot count,
closed form last) plus the run manifest into --out-dir.
"""

import argparse
import sys

from vcre.cli import main as cli_main


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--reps", type=int, default=100)
    ap.add_argument("--seed", type=int, default=120)
    ap.add_argument("--knots", default="6:10")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out-dir", default="results/mse_benchmark")
    args = ap.parse_args()
    return cli_main([
        "bench-reml",
        "--reps", str(args.reps),
        "--seed", str(args.seed),
        "--knots", args.knots,
        "--threads", str(args.threads),
        "--out-dir", args.out_dir,
    ])


if __name__ == "__main__":
    sys.exit(main())
