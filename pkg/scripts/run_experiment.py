#!/usr/bin/env python3
"""Run one of the shipped Monte Carlo experiments and write its report files.

Examples:
    python scripts/run_experiment.py configs/lowdim.json results/lowdim
    python scripts/run_experiment.py configs/highdim.json results/highdim --threads 2
"""

import argparse
import sys
import time

from qir.sim import load_experiment_config, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("config", help="JSON experiment config")
    ap.add_argument("out_dir", help="directory for report files")
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()

    kind, config = load_experiment_config(args.config)
    if args.threads is not None:
        config.threads = max(1, args.threads)
    t0 = time.time()
    report = run_experiment(kind, config, out_dir=args.out_dir)
    for row in report.aggregates:
        print(row)
    n_fail = len(report.failures())
    if n_fail:
        print(f"warning: {n_fail} replications failed", file=sys.stderr)
    print(f"done in {time.time() - t0:.0f}s -> {args.out_dir}")


if __name__ == "__main__":
    main()
