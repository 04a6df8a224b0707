#!/usr/bin/env python3
"""Robustness studies: uniform measurement error and the misspecified-effects
design, each as an MSE table in its own subdirectory of --out-dir.
"""

import argparse
import sys

from vcre.cli import main as cli_main


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--reps", type=int, default=100)
    ap.add_argument("--seed", type=int, default=140)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out-dir", default="results/robustness")
    args = ap.parse_args()
    for scenario in ("uniform_noise", "misspecified"):
        code = cli_main([
            "simulate",
            "--scenario", scenario,
            "--reps", str(args.reps),
            "--seed", str(args.seed),
            "--threads", str(args.threads),
            "--out-dir", f"{args.out_dir}/{scenario}",
        ])
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
