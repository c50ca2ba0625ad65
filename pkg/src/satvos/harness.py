"""Oracle-driven experiments on synthetic suites: strategy ablations and ground-truth upper bounds."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .evaluation import region_J
from .maskops import mask_bbox
from .synthdata import OracleSegmenter, SyntheticSequence, event_suite, oracle_backends, render
from .tracker import Hints, TrackerConfig, TrackResult, track_sequence

# cropping-loop experiments: appearance noise off so only box handling matters
SWITCHING_ORACLE = OracleSegmenter(flip_rate=0.02, jitter_radius=1, reg_jitter=0.03)
# global-loop experiments: the oracle degrades when the global feature drifts
GLOBAL_ORACLE = OracleSegmenter(flip_rate=0.02, jitter_radius=1, reg_jitter=0.03,
                                global_sensitivity=0.2, global_sigma=0.5)


def gt_hints(seq: SyntheticSequence):
    def hints(t: int, k: int) -> Hints:
        m = seq.masks[t][k]
        return Hints(mask_bbox(m) if m.any() else None, m)

    return hints


def track_oracle(seq: SyntheticSequence, oracle: OracleSegmenter, config: TrackerConfig,
                 with_hints: bool = False) -> TrackResult:
    backends = oracle_backends(seq, oracle)
    return track_sequence(seq.frames, seq.label_map(0), lambda k: backends[k], config,
                          hints=gt_hints(seq) if with_hints else None)


def sequence_iou(seq: SyntheticSequence, result: TrackResult) -> float:
    """Mean J over objects and over every frame after the first."""
    vals = [
        region_J(result.labels[t] == k, seq.masks[t][k])
        for k in seq.object_ids
        for t in range(1, len(seq.frames))
    ]
    return float(np.mean(vals))


@dataclass
class SuiteRun:
    name: str
    per_sequence: list
    strategy_rates: list

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_sequence))


def run_suite(seqs, oracle: OracleSegmenter, config: TrackerConfig, name: str = "",
              with_hints: bool = False, jobs: int = 1) -> SuiteRun:
    def one(seq):
        r = track_oracle(seq, oracle, config, with_hints)
        return sequence_iou(seq, r), r.strategy_rates()

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            out = list(pool.map(one, seqs))
    else:
        out = [one(s) for s in seqs]
    return SuiteRun(name, [o[0] for o in out], [o[1] for o in out])


def default_suite(count: int = 10, seed: int = 0) -> list[SyntheticSequence]:
    return [render(s) for s in event_suite(count, seed)]


def switching_ablation(seqs, oracle: OracleSegmenter = SWITCHING_ORACLE, base: TrackerConfig | None = None,
                       jobs: int = 1) -> dict:
    """Full switching against each fixed box strategy."""
    base = base or TrackerConfig()
    return {s: run_suite(seqs, oracle, replace(base, strategy=s), s, jobs=jobs)
            for s in ("sat", "mask", "regression")}


def upper_bound(seqs, oracle: OracleSegmenter = GLOBAL_ORACLE, base: TrackerConfig | None = None,
                jobs: int = 1) -> dict:
    """Predicted boxes and masks against ground-truth substitutes."""
    base = base or TrackerConfig()
    return {
        "predicted": run_suite(seqs, oracle, base, "predicted", jobs=jobs),
        "gt_box": run_suite(seqs, oracle, replace(base, gt_box=True), "gt_box", True, jobs),
        "gt_filter": run_suite(seqs, oracle, replace(base, gt_filter=True), "gt_filter", True, jobs),
    }


def global_ablation(seqs, oracle: OracleSegmenter = GLOBAL_ORACLE, base: TrackerConfig | None = None,
                    jobs: int = 1) -> dict:
    base = base or TrackerConfig()
    return {m: run_suite(seqs, oracle, replace(base, global_mode=m), m, jobs=jobs)
            for m in ("ema", "frozen", "none")}
