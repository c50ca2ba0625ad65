"""Cropping-strategy switching and the global-feature moving average."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .geometry import Box, resize_map
from .maskops import StateEstimate

log = logging.getLogger(__name__)

DEFAULT_MU = 0.5
DEFAULT_SMOOTHING = 0.3
GLOBAL_INPUT = 129

MASK = "mask"
REGRESSION = "regression"


@dataclass
class SmoothedBoxState:
    """Running regression box. ``smoothing`` is the weight of the new box."""

    box: Box
    smoothing: float = DEFAULT_SMOOTHING

    def __post_init__(self):
        if not 0.0 <= self.smoothing <= 1.0:
            raise ValueError(f"smoothing must be in [0, 1], got {self.smoothing}")


def smooth_box(sm: SmoothedBoxState, reg_box: Box | None) -> Box:
    """Blend ``reg_box`` into ``sm.box`` and store the result.

    Centers are blended linearly. Scale ``sqrt(w*h)`` and aspect ratio ``w/h``
    are blended in the log domain, which keeps both strictly positive.
    A missing or degenerate ``reg_box`` leaves the state untouched.
    """
    if reg_box is None or not (reg_box.w > 0 and reg_box.h > 0):
        return sm.box
    if reg_box == sm.box:
        return sm.box
    lam = sm.smoothing
    prev = sm.box
    cx = (1 - lam) * prev.cx + lam * reg_box.cx
    cy = (1 - lam) * prev.cy + lam * reg_box.cy
    log_s = (1 - lam) * 0.5 * math.log(prev.w * prev.h) + lam * 0.5 * math.log(reg_box.w * reg_box.h)
    log_r = (1 - lam) * math.log(prev.w / prev.h) + lam * math.log(reg_box.w / reg_box.h)
    if lam == 1.0:
        out = reg_box
    elif lam == 0.0:
        out = prev
    else:
        s, r = math.exp(log_s), math.exp(log_r)
        out = Box(cx, cy, s * math.sqrt(r), s / math.sqrt(r))
    sm.box = out
    return out


def select_box(
    state: StateEstimate,
    mask_box: Box | None,
    reg_box: Box | None,
    sm: SmoothedBoxState,
) -> tuple[Box, str]:
    """Mask-box for normal states, smoothed regression box otherwise.

    The regression box is smoothed on every call so the fallback always has
    temporal context, whichever strategy wins.
    """
    smoothed = smooth_box(sm, reg_box)
    if state.is_normal and mask_box is not None:
        return mask_box, MASK
    return smoothed, REGRESSION


@dataclass(frozen=True)
class GlobalFeature:
    values: np.ndarray
    step: float = DEFAULT_MU
    initialized: bool = True
    skipped_updates: int = 0

    def __post_init__(self):
        if not 0.0 < self.step <= 1.0:
            raise ValueError(f"step must be in (0, 1], got {self.step}")


def update_global(g: GlobalFeature, f: np.ndarray, s_state: float) -> GlobalFeature:
    """``G_t = (1 - S*mu) * G_{t-1} + S*mu * F_t``.

    A zero weight returns ``g`` untouched; a non-finite ``f`` is skipped and
    counted in ``skipped_updates``.
    """
    if not g.initialized:
        raise ValueError("global feature used before initialization")
    f = np.asarray(f)
    if f.shape != g.values.shape:
        raise ValueError(f"feature shape {f.shape} != global shape {g.values.shape}")
    if not np.all(np.isfinite(f)):
        log.warning("non-finite feature; global update skipped")
        return replace(g, skipped_updates=g.skipped_updates + 1)
    a = float(s_state) * g.step
    if a == 0.0:
        return g
    return replace(g, values=(1.0 - a) * g.values + a * f)


def filter_background(crop: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero every pixel outside ``mask``; the mask is resampled to the crop if needed."""
    crop = np.asarray(crop, dtype=np.float64)
    mask = np.asarray(mask)
    if mask.shape[:2] != crop.shape[:2]:
        if mask.shape[0] != mask.shape[1] or crop.shape[0] != crop.shape[1]:
            raise ValueError(f"cannot align mask {mask.shape} with crop {crop.shape}")
        mask = resize_map(mask.astype(np.float64), crop.shape[0]) >= 0.5
    m = mask.astype(np.float64)
    if crop.ndim == 3:
        m = m[..., None]
    return crop * m


def init_global(
    first_frame_crop: np.ndarray,
    init_mask: np.ndarray,
    extractor: Callable[[np.ndarray], np.ndarray],
    step: float = DEFAULT_MU,
    size: int = GLOBAL_INPUT,
) -> GlobalFeature:
    """First global feature from the ground-truth-filtered first crop."""
    if not np.any(init_mask):
        raise ValueError("initial mask is empty")
    filtered = filter_background(first_frame_crop, init_mask)
    if filtered.shape[0] != size:
        filtered = resize_map(filtered, size)
    return GlobalFeature(np.asarray(extractor(filtered)), step=step)
