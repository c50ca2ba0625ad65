"""Boxes, crop transforms, and resampling between frames and network crops.

Coordinates follow the pixel-center convention: pixel ``(i, j)`` is centered
at ``x = j``, ``y = i`` and covers ``[j - 0.5, j + 0.5] x [i - 0.5, i + 0.5]``.
A box spanning columns ``1..3`` therefore has ``cx = 2`` and ``w = 3``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in center form, frame pixels."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.cx, self.cy, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"degenerate box: w={self.w}, h={self.h}")

    @classmethod
    def from_corners(cls, x0: float, y0: float, x1: float, y1: float) -> "Box":
        return cls((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)

    @classmethod
    def try_make(cls, cx, cy, w, h) -> "Box | None":
        """Build a box, returning None instead of raising on bad values."""
        try:
            return cls(float(cx), float(cy), float(w), float(h))
        except (ValueError, TypeError):
            return None

    def corners(self) -> tuple[float, float, float, float]:
        return (
            self.cx - self.w / 2,
            self.cy - self.h / 2,
            self.cx + self.w / 2,
            self.cy + self.h / 2,
        )

    def shifted(self, dx: float, dy: float) -> "Box":
        return Box(self.cx + dx, self.cy + dy, self.w, self.h)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h)


@dataclass(frozen=True)
class CropTransform:
    """Maps a (possibly out-of-frame) source box onto a square output grid.

    Output pixel ``u`` samples source position
    ``x0 + (u + 0.5) * w / output_size`` where ``x0`` is the box's left edge.
    """

    source_box: Box
    output_size: int

    def __post_init__(self):
        if int(self.output_size) <= 0:
            raise ValueError(f"output_size must be positive, got {self.output_size}")

    @property
    def scale_x(self) -> float:
        return self.output_size / self.source_box.w

    @property
    def scale_y(self) -> float:
        return self.output_size / self.source_box.h

    def to_crop(self, x, y):
        """Frame coordinates -> crop coordinates (works on scalars or arrays)."""
        b = self.source_box
        u = (np.asarray(x, dtype=np.float64) - (b.cx - b.w / 2)) * self.scale_x - 0.5
        v = (np.asarray(y, dtype=np.float64) - (b.cy - b.h / 2)) * self.scale_y - 0.5
        return u, v

    def to_frame(self, u, v):
        """Crop coordinates -> frame coordinates."""
        b = self.source_box
        x = (np.asarray(u, dtype=np.float64) + 0.5) / self.scale_x + (b.cx - b.w / 2)
        y = (np.asarray(v, dtype=np.float64) + 0.5) / self.scale_y + (b.cy - b.h / 2)
        return x, y

    def box_to_frame(self, box: Box) -> Box:
        """Map a box expressed in crop coordinates back to the frame."""
        x, y = self.to_frame(box.cx, box.cy)
        return Box(float(x), float(y), box.w / self.scale_x, box.h / self.scale_y)

    def box_to_crop(self, box: Box) -> Box:
        u, v = self.to_crop(box.cx, box.cy)
        return Box(float(u), float(v), box.w * self.scale_x, box.h * self.scale_y)

    def resized(self, output_size: int) -> "CropTransform":
        """Same source region sampled at another resolution."""
        return CropTransform(self.source_box, int(output_size))


def search_side(box: Box, context_factor: float) -> float:
    p = (box.w + box.h) / 2
    return context_factor * math.sqrt((box.w + p) * (box.h + p))


def make_search_region(box: Box, context_factor: float, output_size: int) -> CropTransform:
    """Square region of side ``context_factor * sqrt((w + p)(h + p))``, ``p = (w + h) / 2``.

    The region is centered on the box and may extend past the frame border;
    out-of-frame samples are filled by :func:`crop_and_resize`.
    """
    if not isinstance(box, Box):
        raise TypeError("box must be a Box")
    if context_factor < 1:
        raise ValueError(f"context_factor must be >= 1, got {context_factor}")
    if output_size <= 0:
        raise ValueError(f"output_size must be positive, got {output_size}")
    side = search_side(box, context_factor)
    return CropTransform(Box(box.cx, box.cy, side, side), int(output_size))


def _axis_samples(coords: np.ndarray, n: int):
    """Bilinear taps along one axis; ``valid`` marks samples inside the image."""
    valid = (coords >= -0.5) & (coords <= n - 0.5)
    c = np.clip(coords, 0.0, n - 1.0)
    lo = np.floor(c).astype(np.int64)
    hi = np.minimum(lo + 1, n - 1)
    frac = c - lo
    return lo, hi, frac, valid


def _bilinear(img: np.ndarray, ys: np.ndarray, xs: np.ndarray):
    """Separable bilinear sampling on the grid ``ys x xs``; no fill handling."""
    y0, y1, fy, vy = _axis_samples(ys, img.shape[0])
    x0, x1, fx, vx = _axis_samples(xs, img.shape[1])
    extra = (None,) * (img.ndim - 2)
    fx_ = fx[(None, slice(None)) + extra]
    fy_ = fy[(slice(None), None) + extra]
    top = img[y0][:, x0] * (1 - fx_) + img[y0][:, x1] * fx_
    bot = img[y1][:, x0] * (1 - fx_) + img[y1][:, x1] * fx_
    out = top * (1 - fy_) + bot * fy_
    return out, vy, vx


def crop_and_resize(frame: np.ndarray, t: CropTransform, fill=None) -> np.ndarray:
    """Bilinearly sample ``frame`` over ``t.source_box`` into an N x N image.

    Args:
        frame: ``H x W`` or ``H x W x C`` array.
        t: crop transform.
        fill: value for samples outside the frame. Defaults to the per-channel
            mean of ``frame``.

    Returns:
        float64 array of shape ``(N, N)`` or ``(N, N, C)``.
    """
    frame = np.asarray(frame)
    if frame.ndim not in (2, 3) or frame.shape[0] == 0 or frame.shape[1] == 0:
        raise ValueError(f"expected a non-empty H x W [x C] frame, got shape {frame.shape}")
    img = frame.astype(np.float64, copy=False)
    n = t.output_size
    grid = np.arange(n, dtype=np.float64)
    xs, ys = t.to_frame(grid, grid)
    out, vy, vx = _bilinear(img, ys, xs)
    if fill is None:
        fill = img.mean(axis=(0, 1))
    inside = vy[:, None] & vx[None, :]
    if not inside.all():
        out = np.array(out, copy=True)
        out[~inside] = fill
    return out


def resize_map(values: np.ndarray, size: int) -> np.ndarray:
    """Resample a square map covering some region to another resolution."""
    values = np.asarray(values, dtype=np.float64)
    h, w = values.shape[:2]
    t = CropTransform(Box((w - 1) / 2, (h - 1) / 2, w, h), int(size))
    return crop_and_resize(values, t, fill=0.0)


def _coverage(centers: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return np.clip(np.minimum(centers + 0.5, hi) - np.maximum(centers - 0.5, lo), 0.0, 1.0)


def paste_back(mask_crop: np.ndarray, t: CropTransform, frame_shape) -> np.ndarray:
    """Inverse of :func:`crop_and_resize` for single-channel probability maps.

    Frame pixels are weighted by the fraction of their area inside the source
    box, so region borders are anti-aliased and pixels outside it are 0.
    """
    mask_crop = np.asarray(mask_crop, dtype=np.float64)
    if mask_crop.shape != (t.output_size, t.output_size):
        raise ValueError(
            f"crop shape {mask_crop.shape} does not match output size {t.output_size}"
        )
    H, W = int(frame_shape[0]), int(frame_shape[1])
    out = np.zeros((H, W), dtype=np.float64)
    x0, y0, x1, y1 = t.source_box.corners()
    c0, c1 = max(int(math.floor(x0 + 0.5)), 0), min(int(math.ceil(x1 - 0.5)), W - 1)
    r0, r1 = max(int(math.floor(y0 + 0.5)), 0), min(int(math.ceil(y1 - 0.5)), H - 1)
    if c0 > c1 or r0 > r1:
        return out
    cols = np.arange(c0, c1 + 1, dtype=np.float64)
    rows = np.arange(r0, r1 + 1, dtype=np.float64)
    us, _ = t.to_crop(cols, 0.0)
    _, vs = t.to_crop(0.0, rows)
    vals, _, _ = _bilinear(mask_crop, vs, us)
    weight = _coverage(rows, y0, y1)[:, None] * _coverage(cols, x0, x1)[None, :]
    out[r0 : r1 + 1, c0 : c1 + 1] = vals * weight
    return out


def mask_to_crop(mask: np.ndarray, t: CropTransform) -> np.ndarray:
    """Crop a full-frame binary mask; out-of-frame area counts as background."""
    return crop_and_resize(np.asarray(mask, dtype=np.float64), t, fill=0.0) >= 0.5


def clamp_box(box: Box, frame_shape, min_size: float = 4.0) -> Box:
    """Keep the center inside the frame and the size within sane limits."""
    H, W = frame_shape[:2]
    max_side = 2.0 * max(H, W)
    return Box(
        min(max(box.cx, 0.0), W - 1.0),
        min(max(box.cy, 0.0), H - 1.0),
        min(max(box.w, min_size), max_side),
        min(max(box.h, min_size), max_side),
    )
