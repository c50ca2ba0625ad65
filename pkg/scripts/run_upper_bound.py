"""Predicted boxes and global filter masks against ground-truth substitutes.

Usage: python scripts/run_upper_bound.py [--count 10] [--seed 0]
"""

from __future__ import annotations

import argparse

from satvos.harness import GLOBAL_ORACLE, default_suite, upper_bound


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--count", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    res = upper_bound(default_suite(args.count, args.seed), GLOBAL_ORACLE, jobs=args.jobs)
    for name, run in res.items():
        print(f"{name:10s} mean IoU {run.mean:.3f}")


if __name__ == "__main__":
    main()
