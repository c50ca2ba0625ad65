"""DAVIS-style region (J) and boundary (F) measures."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

BOUNDARY_FRACTION = 0.008


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return pred, gt


def region_J(pred: np.ndarray, gt: np.ndarray) -> float:
    """Intersection over union; two empty masks score 1."""
    pred, gt = _pair(pred, gt)
    union = int(np.logical_or(pred, gt).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(pred, gt).sum()) / union


def default_tolerance(shape) -> int:
    return int(math.ceil(BOUNDARY_FRACTION * math.hypot(shape[0], shape[1])))


def boundary_map(m: np.ndarray) -> np.ndarray:
    """Foreground pixels with a 4-neighbor in the background (outside counts as background)."""
    m = np.asarray(m, dtype=bool)
    padded = np.pad(m, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return m & ~interior


def _hit_rate(src: np.ndarray, dst: np.ndarray, tol: float) -> float:
    """Share of ``src`` boundary pixels within ``tol`` of some ``dst`` boundary pixel."""
    n = int(src.sum())
    if n == 0:
        return 1.0
    if not dst.any():
        return 0.0
    dist = ndimage.distance_transform_edt(~dst)
    return int((dist[src] <= tol).sum()) / n


def boundary_F(pred: np.ndarray, gt: np.ndarray, tolerance: float | None = None) -> float:
    """Boundary F-measure with a distance tolerance in pixels.

    The tolerance defaults to ``ceil(0.008 * diagonal)`` and is inclusive.
    """
    pred, gt = _pair(pred, gt)
    if tolerance is None:
        tolerance = default_tolerance(gt.shape)
    bp, bg = boundary_map(pred), boundary_map(gt)
    if not bp.any() and not bg.any():
        return 1.0
    precision = _hit_rate(bp, bg, tolerance)
    recall = _hit_rate(bg, bp, tolerance)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def decay(per_frame: Sequence[float]) -> float:
    """Mean of the first quarter minus mean of the last; remainder goes to the last bin."""
    vals = np.asarray(per_frame, dtype=np.float64)
    q = len(vals) // 4
    if q == 0:
        return 0.0
    return float(vals[:q].mean() - vals[3 * q :].mean())


@dataclass
class SequenceResult:
    per_frame_J: list[float]
    per_frame_F: list[float]
    J_mean: float
    F_mean: float
    JF_mean: float
    J_decay: float
    name: str = ""
    object_id: int = 0


def summarize(per_frame_J, per_frame_F, name: str = "", object_id: int = 0) -> SequenceResult:
    J = [float(v) for v in per_frame_J]
    F = [float(v) for v in per_frame_F]
    j_mean = float(np.mean(J)) if J else float("nan")
    f_mean = float(np.mean(F)) if F else float("nan")
    return SequenceResult(J, F, j_mean, f_mean, (j_mean + f_mean) / 2, decay(J), name, object_id)


def evaluate_sequence(preds, gts, name: str = "", object_id: int = 0, skip_first: bool = True):
    """Score aligned binary masks of one object; the first frame is the supervision."""
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions for {len(gts)} ground-truth frames")
    start = 1 if skip_first else 0
    J = [region_J(p, g) for p, g in zip(preds[start:], gts[start:])]
    F = [boundary_F(p, g) for p, g in zip(preds[start:], gts[start:])]
    return summarize(J, F, name, object_id)


def evaluate_labels(pred_labels, gt_labels, name: str = "") -> list[SequenceResult]:
    """Per-object results for label-map sequences (0 = background).

    Objects are those present in the first ground-truth frame.
    """
    if len(pred_labels) != len(gt_labels):
        raise ValueError(f"{len(pred_labels)} predicted frames for {len(gt_labels)} ground-truth frames")
    ids = [int(i) for i in np.unique(gt_labels[0]) if i != 0]
    results = []
    for k in ids:
        preds = [np.asarray(p) == k for p in pred_labels]
        gts = [np.asarray(g) == k for g in gt_labels]
        results.append(evaluate_sequence(preds, gts, name=name, object_id=k))
    return results


@dataclass
class DatasetReport:
    J_mean: float
    F_mean: float
    JF_mean: float
    J_decay: float
    sequences: list[SequenceResult] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "J_mean": self.J_mean,
            "F_mean": self.F_mean,
            "JF_mean": self.JF_mean,
            "J_decay": self.J_decay,
            "num_objects": len(self.sequences),
            "num_sequences": len({r.name for r in self.sequences}),
        }


def evaluate_dataset(results: Sequence[SequenceResult]) -> DatasetReport:
    """Average per-object results over every (sequence, object) pair."""
    results = [r for r in results if r.per_frame_J]
    if not results:
        raise ValueError("no scored frames to aggregate")
    j = float(np.mean([r.J_mean for r in results]))
    f = float(np.mean([r.F_mean for r in results]))
    d = float(np.mean([r.J_decay for r in results]))
    return DatasetReport(j, f, (j + f) / 2, d, results)


def write_report(report: DatasetReport, out: str | Path) -> tuple[Path, Path]:
    """Write the JSON summary to ``out`` and per-sequence rows next to it as CSV."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report.summary(), indent=2, sort_keys=True) + "\n")
    csv_path = out.with_name(out.stem + "_per_sequence.csv")
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sequence", "object", "frames", "J_mean", "F_mean", "JF_mean", "J_decay"])
        for r in report.sequences:
            w.writerow([r.name, r.object_id, len(r.per_frame_J), f"{r.J_mean:.6f}",
                        f"{r.F_mean:.6f}", f"{r.JF_mean:.6f}", f"{r.J_decay:.6f}"])
    return out, csv_path


def report_to_dict(report: DatasetReport) -> dict:
    d = report.summary()
    d["sequences"] = [asdict(r) for r in report.sequences]
    return d
