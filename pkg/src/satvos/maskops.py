"""Mask analysis and the state estimator.

A prediction is scored by its confidence (mean foreground probability) and
its concentration (share of foreground area held by the largest 8-connected
region). Their product is the state score; frames scoring above the
threshold are "normal", everything else is "abnormal".
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import Box

DEFAULT_STATE_THRESHOLD = 0.85
DEFAULT_BINARIZE_THRESHOLD = 0.5

_EIGHT = np.ones((3, 3), dtype=bool)


class EmptyMaskError(ValueError):
    """Raised when a box is requested from an empty mask."""


@dataclass(frozen=True)
class ConnectedRegion:
    pixels: np.ndarray  # (area, 2) array of (row, col)

    @property
    def area(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def seed(self) -> tuple[int, int]:
        """Topmost-leftmost pixel."""
        r, c = self.pixels[0]
        return int(r), int(c)


@dataclass(frozen=True)
class StateEstimate:
    confidence: float
    concentration: float
    state_score: float
    is_normal: bool

    @classmethod
    def trusted(cls) -> "StateEstimate":
        return cls(1.0, 1.0, 1.0, True)


def binarize(p: np.ndarray, threshold: float = DEFAULT_BINARIZE_THRESHOLD) -> np.ndarray:
    """Foreground where ``p >= threshold``."""
    return np.asarray(p) >= threshold


def _label(m: np.ndarray):
    return ndimage.label(np.asarray(m, dtype=bool), structure=_EIGHT)


def _region_stats(m: np.ndarray):
    """Labels, per-label areas and first (row-major) pixel of each label."""
    labels, n = _label(m)
    if n == 0:
        return labels, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    flat = labels.ravel()
    areas = np.bincount(flat, minlength=n + 1)[1:]
    ids, first = np.unique(flat, return_index=True)
    first = first[ids > 0]
    return labels, areas, first


def _order(areas: np.ndarray, first: np.ndarray) -> np.ndarray:
    # area descending, then seed position ascending
    return np.lexsort((first, -areas))


def connected_components(m: np.ndarray) -> list[ConnectedRegion]:
    """Maximal 8-connected foreground regions, largest first."""
    labels, areas, first = _region_stats(m)
    regions = []
    for k in _order(areas, first):
        rows, cols = np.nonzero(labels == k + 1)
        regions.append(ConnectedRegion(np.stack([rows, cols], axis=1)))
    return regions


def confidence_score(p: np.ndarray, m: np.ndarray) -> float:
    """Mean of ``p`` over the foreground of ``m``; 0 for an empty mask."""
    p = np.asarray(p, dtype=np.float64)
    m = np.asarray(m, dtype=bool)
    if p.shape != m.shape:
        raise ValueError(f"shape mismatch: probabilities {p.shape} vs mask {m.shape}")
    count = int(m.sum())
    if count == 0:
        return 0.0
    # fsum is correctly rounded, so the result does not depend on pixel order
    return math.fsum(p[m].tolist()) / count


def concentration_score(m: np.ndarray) -> float:
    """Largest region area over total foreground area; 0 for an empty mask."""
    labels, n = _label(m)
    if n == 0:
        return 0.0
    areas = np.bincount(labels.ravel())[1:]
    return int(areas.max()) / int(areas.sum())


def classify_state(confidence: float, concentration: float,
                   threshold: float = DEFAULT_STATE_THRESHOLD) -> tuple[float, bool]:
    """State score and verdict; normal only when the score strictly exceeds ``threshold``."""
    score = confidence * concentration
    return score, score > threshold


def estimate_state(
    p: np.ndarray,
    m: np.ndarray | None = None,
    threshold: float = DEFAULT_STATE_THRESHOLD,
    binarize_threshold: float = DEFAULT_BINARIZE_THRESHOLD,
) -> StateEstimate:
    """Score a prediction. ``m`` defaults to ``binarize(p)``."""
    if m is None:
        m = binarize(p, binarize_threshold)
    cf = confidence_score(p, m)
    if not np.any(m):
        return StateEstimate(0.0, 0.0, 0.0, False)
    cc = concentration_score(m)
    score, normal = classify_state(cf, cc, threshold)
    return StateEstimate(cf, cc, score, normal)


def mask_bbox(m: np.ndarray) -> Box:
    """Minimal box around every foreground pixel."""
    rows, cols = np.nonzero(np.asarray(m, dtype=bool))
    if rows.size == 0:
        raise EmptyMaskError("empty mask has no bounding box")
    return _extent_box(rows, cols)


def _extent_box(rows, cols) -> Box:
    r0, r1 = int(rows.min()), int(rows.max())
    c0, c1 = int(cols.min()), int(cols.max())
    return Box((c0 + c1) / 2, (r0 + r1) / 2, c1 - c0 + 1, r1 - r0 + 1)


def largest_component_box(m: np.ndarray) -> Box:
    """Minimal box around the largest 8-connected region.

    Raises:
        EmptyMaskError: no mask-box available.
    """
    labels, areas, first = _region_stats(m)
    if areas.size == 0:
        raise EmptyMaskError("no mask-box available for an empty mask")
    k = _order(areas, first)[0]
    sl = ndimage.find_objects(labels, max_label=k + 1)[k]
    rows, cols = sl
    return Box(
        (cols.start + cols.stop - 1) / 2,
        (rows.start + rows.stop - 1) / 2,
        cols.stop - cols.start,
        rows.stop - rows.start,
    )
