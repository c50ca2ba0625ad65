"""Box-strategy and global-loop ablations with the oracle segmenter.

Usage: python scripts/run_ablation.py [--count 10] [--seed 0] [--out results/ablation.json]
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from satvos.harness import GLOBAL_ORACLE, SWITCHING_ORACLE, default_suite, global_ablation, switching_ablation
from satvos.synthdata import drift_suite, render


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--count", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="results/ablation.json")
    args = ap.parse_args()

    events = default_suite(args.count, args.seed)
    drift = [render(s) for s in drift_suite(max(1, args.count // 2), args.seed)]
    rows = {}
    for name, run in switching_ablation(events, SWITCHING_ORACLE, jobs=args.jobs).items():
        rows[f"box/{name}"] = {"mean_iou": run.mean, "per_sequence": run.per_sequence}
    for name, run in global_ablation(drift, GLOBAL_ORACLE, jobs=args.jobs).items():
        rows[f"global/{name}"] = {"mean_iou": run.mean, "per_sequence": run.per_sequence}

    for k, v in rows.items():
        print(f"{k:20s} {v['mean_iou']:.3f}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(rows, indent=2) + "\n")


if __name__ == "__main__":
    main()
