"""Per-object segment / estimate / feedback loop and multi-object label aggregation."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Protocol

import numpy as np

from .feedback import (
    DEFAULT_MU,
    DEFAULT_SMOOTHING,
    MASK,
    REGRESSION,
    GlobalFeature,
    SmoothedBoxState,
    filter_background,
    init_global,
    select_box,
    smooth_box,
    update_global,
)
from .geometry import Box, CropTransform, clamp_box, crop_and_resize, make_search_region, mask_to_crop, paste_back
from .maskops import (
    DEFAULT_BINARIZE_THRESHOLD,
    DEFAULT_STATE_THRESHOLD,
    StateEstimate,
    binarize,
    estimate_state,
    largest_component_box,
    mask_bbox,
)

log = logging.getLogger(__name__)

STRATEGIES = ("sat", "mask", "regression")
GLOBAL_MODES = ("ema", "frozen", "none")
GROUND_TRUTH = "gt"


@dataclass
class TrackerConfig:
    """Loop settings.

    ``strategy`` picks the box policy: ``sat`` switches on the state verdict,
    ``mask`` always follows the mask-box (holding the box when the mask is
    empty), ``regression`` always follows the smoothed regression box.
    ``gt_box`` / ``gt_filter`` substitute ground truth for the predicted box
    and for the global-loop filter mask when hints are supplied.
    """

    state_threshold: float = DEFAULT_STATE_THRESHOLD
    binarize_threshold: float = DEFAULT_BINARIZE_THRESHOLD
    mu: float = DEFAULT_MU
    smoothing: float = DEFAULT_SMOOTHING
    saliency_context: float = 1.0
    similarity_context: float = 2.0
    template_context: float = 1.0
    strategy: str = "sat"
    global_mode: str = "ema"
    score_weighted: bool = True
    gt_box: bool = False
    gt_filter: bool = False
    min_box: float = 4.0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.global_mode not in GLOBAL_MODES:
            raise ValueError(f"global_mode must be one of {GLOBAL_MODES}")


@dataclass
class SegRequest:
    image: np.ndarray  # H x W x C float in [0, 1]
    frame_index: int
    object_id: int
    box: Box
    saliency_t: CropTransform
    similarity_t: CropTransform
    template: Any
    global_values: np.ndarray | None


@dataclass
class SegResult:
    prob: np.ndarray  # square stride-4 map over the saliency crop
    reg_box: Box | None  # similarity-crop coordinates


class Segmenter(Protocol):
    saliency_input: int
    similarity_input: int
    global_input: int
    template_input: int

    def embed_template(self, template_crop: np.ndarray) -> Any: ...

    def segment(self, request: SegRequest) -> SegResult: ...

    def extract_global(self, filtered: np.ndarray) -> np.ndarray: ...


@dataclass
class TrackletState:
    object_id: int
    box: Box
    smoothed: SmoothedBoxState
    global_feature: GlobalFeature
    template: Any
    last_estimate: StateEstimate
    frame_index: int = 0


@dataclass
class Hints:
    """Ground truth for upper-bound runs; either field may be missing."""

    box: Box | None = None
    mask: np.ndarray | None = None


def as_float_image(frame: np.ndarray) -> np.ndarray:
    img = np.asarray(frame)
    if img.dtype == np.uint8:
        return img.astype(np.float64) / 255.0
    return img.astype(np.float64)


def init_tracklet(seg: Segmenter, frame: np.ndarray, init_mask: np.ndarray, object_id: int = 1,
                  config: TrackerConfig | None = None) -> TrackletState:
    cfg = config or TrackerConfig()
    mask = np.asarray(init_mask, dtype=bool)
    if not mask.any():
        raise ValueError(f"initial mask of object {object_id} is empty")
    image = as_float_image(frame)
    box = mask_bbox(mask)
    t_t = make_search_region(box, cfg.template_context, seg.template_input)
    template = seg.embed_template(crop_and_resize(image, t_t))
    g_t = make_search_region(box, cfg.saliency_context, seg.global_input)
    g = init_global(crop_and_resize(image, g_t), mask_to_crop(mask, g_t), seg.extract_global,
                    step=cfg.mu, size=seg.global_input)
    return TrackletState(object_id, box, SmoothedBoxState(box, cfg.smoothing), g, template,
                         StateEstimate.trusted(), 0)


@dataclass
class StepOutput:
    prob: np.ndarray  # full-frame probabilities
    state: TrackletState
    record: dict


def step(seg: Segmenter, ts: TrackletState, frame: np.ndarray, config: TrackerConfig | None = None,
         hints: Hints | None = None) -> StepOutput:
    """Process the next frame; returns the pasted map, new state, and telemetry."""
    cfg = config or TrackerConfig()
    image = as_float_image(frame)
    shape = image.shape[:2]
    t = ts.frame_index + 1
    sal_t = make_search_region(ts.box, cfg.saliency_context, seg.saliency_input)
    sim_t = make_search_region(ts.box, cfg.similarity_context, seg.similarity_input)
    gv = ts.global_feature.values
    if cfg.global_mode == "none":
        gv = np.zeros_like(gv)
    res = seg.segment(SegRequest(image, t, ts.object_id, ts.box, sal_t, sim_t, ts.template, gv))

    prob = np.clip(np.asarray(res.prob, dtype=np.float64), 0.0, 1.0)
    map_t = sal_t.resized(prob.shape[0])
    m = binarize(prob, cfg.binarize_threshold)
    est = estimate_state(prob, m, cfg.state_threshold)
    mask_box = map_t.box_to_frame(largest_component_box(m)) if m.any() else None
    reg_box = sim_t.box_to_frame(res.reg_box) if res.reg_box is not None else None

    sm = replace(ts.smoothed)
    if cfg.strategy == "sat":
        box, tag = select_box(est, mask_box, reg_box, sm)
    elif cfg.strategy == "mask":
        smooth_box(sm, reg_box)
        box, tag = (mask_box if mask_box is not None else ts.box), MASK
    else:
        box, tag = smooth_box(sm, reg_box), REGRESSION
    if cfg.gt_box and hints is not None and hints.box is not None:
        box, tag = hints.box, GROUND_TRUTH
    box = clamp_box(box, shape, cfg.min_box)

    g = ts.global_feature
    weight = est.state_score if cfg.score_weighted else 1.0
    if cfg.global_mode == "ema" and weight > 0:
        g_t = sal_t.resized(seg.global_input)
        if cfg.gt_filter and hints is not None and hints.mask is not None:
            fmask = mask_to_crop(hints.mask, g_t)
        else:
            fmask = m
        # an empty filter mask carries no appearance, so it is not averaged in
        if fmask.any():
            feat = seg.extract_global(filter_background(crop_and_resize(image, g_t), fmask))
            g = update_global(g, feat, weight)

    new = replace(ts, box=box, smoothed=sm, global_feature=g, last_estimate=est, frame_index=t)
    record = {
        "frame": t,
        "object": ts.object_id,
        "S_cf": est.confidence,
        "S_cc": est.concentration,
        "S_state": est.state_score,
        "strategy": tag,
        "cx": box.cx,
        "cy": box.cy,
        "w": box.w,
        "h": box.h,
    }
    return StepOutput(paste_back(prob, map_t, shape), new, record)


@dataclass
class AggregatedLabels:
    label_map: np.ndarray
    distribution: np.ndarray  # (K + 1) x H x W, background first
    per_object_probs: list


def aggregate(per_object: list, object_ids: list | None = None) -> AggregatedLabels:
    """Merge per-object maps into one label map.

    Background score is ``prod(1 - p_k)``; scores are normalized per pixel.
    Exact ties go to the lowest object id, and an object beats background on
    a tie so one object reduces to inclusive thresholding at 0.5.
    """
    if not per_object:
        raise ValueError("nothing to aggregate")
    P = np.stack([np.asarray(p, dtype=np.float64) for p in per_object])
    if any(np.shape(p) != P.shape[1:] for p in per_object):
        raise ValueError("probability maps differ in shape")
    ids = np.asarray(object_ids if object_ids is not None else range(1, len(per_object) + 1))
    b = np.prod(1.0 - P, axis=0)
    scores = np.concatenate([P, b[None]])
    dist = np.concatenate([b[None], P]) / (b + P.sum(axis=0))[None]
    # argmax on unnormalized scores: division can round distinct values together
    idx = np.argmax(scores, axis=0)
    labels = np.where(idx < len(P), ids[np.minimum(idx, len(P) - 1)], 0).astype(np.uint8)
    return AggregatedLabels(labels, dist, list(P))


@dataclass
class TrackResult:
    labels: list  # per frame uint8 label maps, frame 0 = init labels
    telemetry: list  # one dict per (frame, object)
    object_probs: dict = field(default_factory=dict)  # object id -> per-frame maps, if kept

    def strategy_counts(self) -> dict:
        counts: dict = {}
        for r in self.telemetry:
            counts[r["strategy"]] = counts.get(r["strategy"], 0) + 1
        return counts

    def strategy_rates(self) -> dict:
        n = len(self.telemetry)
        return {k: v / n for k, v in self.strategy_counts().items()} if n else {}


def track_sequence(
    frames,
    init_labels: np.ndarray,
    make_segmenter: Callable[[int], Segmenter],
    config: TrackerConfig | None = None,
    jobs: int = 1,
    hints: Callable[[int, int], Hints] | None = None,
    keep_probs: bool = False,
) -> TrackResult:
    """Run one tracklet per object id in ``init_labels`` and aggregate each frame.

    ``frames`` is any sequence of images (index 0 is the annotated frame).
    ``hints(frame_index, object_id)`` supplies ground truth for upper-bound runs.
    """
    cfg = config or TrackerConfig()
    init_labels = np.asarray(init_labels)
    ids = [int(k) for k in np.unique(init_labels) if k != 0]
    if not ids:
        raise ValueError("initial annotation has no objects")
    segs = {k: make_segmenter(k) for k in ids}
    first = frames[0]
    states = {k: init_tracklet(segs[k], first, init_labels == k, k, cfg) for k in ids}
    out = TrackResult([init_labels.astype(np.uint8)], [], {k: [] for k in ids} if keep_probs else {})

    def run(k, frame, t):
        h = hints(t, k) if hints is not None else None
        return step(segs[k], states[k], frame, cfg, h)

    pool = ThreadPoolExecutor(max_workers=jobs) if jobs > 1 and len(ids) > 1 else None
    try:
        for t in range(1, len(frames)):
            frame = frames[t]
            if pool is None:
                results = [run(k, frame, t) for k in ids]
            else:
                results = list(pool.map(lambda k: run(k, frame, t), ids))
            for k, r in zip(ids, results):
                states[k] = r.state
                out.telemetry.append(r.record)
                if keep_probs:
                    out.object_probs[k].append(r.prob)
            out.labels.append(aggregate([r.prob for r in results], ids).label_map)
    finally:
        if pool is not None:
            pool.shutdown()
    return out
