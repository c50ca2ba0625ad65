"""Synthetic videos with scripted events, plus a ground-truth-driven oracle segmenter.

Scenes are fully determined by a :class:`SceneScript` (JSON-serializable).
Objects are drawn without anti-aliasing so every ground-truth mask is the
exact visible support of its object.

Event kinds and their ``params``:

``occlusion``
    A rectangle covers the left (``side="left"``) or right part of the target.
    ``cover`` is the covered fraction of the target width (default 0.8).
``truncation``
    The target is pushed across the nearest frame border (or ``side``) so that
    ``depth`` (default 0.5) of its width is outside, ramping in and out over
    ``ramp`` frames (default 2).
``fast_motion``
    At ``start`` the target jumps by ``(dx, dy)`` and stays displaced. Without
    explicit values the jump is ``factor`` (default 0.9) times the saliency
    search side, toward the frame center.
``disappearance``
    The target is not drawn.
``distractor``
    An identical copy of the target is drawn beneath it at offset ``(dx, dy)``
    (default 1.5 object sizes to the right).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import ndimage

from .geometry import Box, crop_and_resize, make_search_region, mask_to_crop, search_side
from .maskops import mask_bbox

SHAPES = ("disk", "rectangle", "L-shape")
EVENT_KINDS = ("occlusion", "truncation", "fast_motion", "disappearance", "distractor")
L_BAR = 0.4


@dataclass
class ObjectSpec:
    shape: str = "disk"
    size: float = 36.0
    aspect: float = 1.0
    color: tuple = (0.85, 0.25, 0.2)
    color_end: tuple | None = None
    trajectory: list = field(default_factory=lambda: [[0, 128.0, 128.0]])
    scale: list = field(default_factory=lambda: [[0, 1.0]])

    def __post_init__(self):
        self.color = tuple(float(c) for c in self.color)
        if self.color_end is not None:
            self.color_end = tuple(float(c) for c in self.color_end)
        self.trajectory = [[float(v) for v in p] for p in self.trajectory]
        self.scale = [[float(v) for v in p] for p in self.scale]


@dataclass
class Event:
    kind: str
    start: int
    end: int
    target: int = 1
    params: dict = field(default_factory=dict)


@dataclass
class SceneScript:
    name: str = "synthetic"
    frame_count: int = 30
    height: int = 256
    width: int = 256
    objects: list = field(default_factory=list)
    events: list = field(default_factory=list)
    noise: float = 0.02
    seed: int = 0

    def __post_init__(self):
        self.objects = [o if isinstance(o, ObjectSpec) else ObjectSpec(**o) for o in self.objects]
        self.events = [e if isinstance(e, Event) else Event(**e) for e in self.events]

    def validate(self) -> None:
        if self.frame_count < 1 or self.height < 8 or self.width < 8:
            raise ValueError("scene needs at least one frame of 8x8 pixels")
        if not self.objects:
            raise ValueError("scene has no objects")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        for o in self.objects:
            if o.shape not in SHAPES:
                raise ValueError(f"unknown shape {o.shape!r}")
            if o.size <= 0 or o.aspect <= 0:
                raise ValueError("object size and aspect must be positive")
            if not o.trajectory:
                raise ValueError("object needs at least one waypoint")
        for e in self.events:
            if e.kind not in EVENT_KINDS:
                raise ValueError(f"unknown event kind {e.kind!r}")
            if not (0 <= e.start < e.end <= self.frame_count):
                raise ValueError(f"event range [{e.start}, {e.end}) outside [0, {self.frame_count})")
            if not 1 <= e.target <= len(self.objects):
                raise ValueError(f"event target {e.target} does not exist")
            if e.kind == "fast_motion":
                if e.start == 0:
                    raise ValueError("fast_motion cannot start on the first frame")
                dx, dy = _jump(self, e)
                side = search_side(_base_box(self, e.target, e.start - 1), 1.0)
                if math.hypot(dx, dy) <= 0.5 * side:
                    raise ValueError("fast_motion jump must exceed half the saliency search side")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneScript":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def load_scripts(path: str | Path) -> list[SceneScript]:
    """A script file holds one script object or a list of them."""
    data = json.loads(Path(path).read_text())
    items = data if isinstance(data, list) else [data]
    return [SceneScript.from_dict(d) for d in items]


def save_scripts(scripts, path: str | Path) -> None:
    Path(path).write_text(json.dumps([s.to_dict() for s in scripts], indent=2, sort_keys=True) + "\n")


def _interp(points, t, ncols):
    pts = np.asarray(points, dtype=np.float64).reshape(-1, ncols + 1)
    order = np.argsort(pts[:, 0], kind="stable")
    pts = pts[order]
    return [float(np.interp(t, pts[:, 0], pts[:, k + 1])) for k in range(ncols)]


def _extent(o: ObjectSpec, scale: float) -> tuple[float, float]:
    s = o.size * scale
    if o.shape == "rectangle":
        return s * o.aspect, s
    return s, s


def _base_box(script: SceneScript, target: int, t: int) -> Box:
    o = script.objects[target - 1]
    x, y = _interp(o.trajectory, t, 2)
    (sc,) = _interp(o.scale, t, 1)
    w, h = _extent(o, sc)
    return Box(x, y, w, h)


def _jump(script: SceneScript, e: Event) -> tuple[float, float]:
    if "dx" in e.params or "dy" in e.params:
        return float(e.params.get("dx", 0.0)), float(e.params.get("dy", 0.0))
    box = _base_box(script, e.target, e.start - 1)
    mag = float(e.params.get("factor", 0.9)) * search_side(box, 1.0)
    vx, vy = (script.width - 1) / 2 - box.cx, (script.height - 1) / 2 - box.cy
    norm = math.hypot(vx, vy)
    if norm < 1e-9:
        vx, vy, norm = 1.0, 0.0, 1.0
    return mag * vx / norm, mag * vy / norm


def _ramp(e: Event, t: int) -> float:
    r = max(int(e.params.get("ramp", 2)), 1)
    return float(np.clip(min((t - e.start + 1) / r, (e.end - t) / r), 0.0, 1.0))


@dataclass
class ObjectState:
    box: Box
    color: np.ndarray
    visible: bool


def object_state(script: SceneScript, target: int, t: int) -> ObjectState:
    """Amodal placement of one object at frame ``t`` after applying events."""
    o = script.objects[target - 1]
    box = _base_box(script, target, t)
    cx, cy = box.cx, box.cy
    visible = True
    for e in script.events:
        if e.target != target:
            continue
        if e.kind == "fast_motion" and t >= e.start:
            dx, dy = _jump(script, e)
            cx, cy = cx + dx, cy + dy
        elif e.kind == "disappearance" and e.start <= t < e.end:
            visible = False
    for e in script.events:
        if e.target != target or e.kind != "truncation" or not e.start <= t < e.end:
            continue
        depth = float(e.params.get("depth", 0.5))
        side = e.params.get("side") or _nearest_side(cx, cy, script)
        a = _ramp(e, t)
        if side == "left":
            cx += a * ((-0.5 + box.w / 2 - depth * box.w) - cx)
        elif side == "right":
            cx += a * ((script.width - 0.5 - box.w / 2 + depth * box.w) - cx)
        elif side == "top":
            cy += a * ((-0.5 + box.h / 2 - depth * box.h) - cy)
        else:
            cy += a * ((script.height - 0.5 - box.h / 2 + depth * box.h) - cy)
    c0 = np.asarray(o.color, dtype=np.float64)
    if o.color_end is not None and script.frame_count > 1:
        a = t / (script.frame_count - 1)
        c0 = (1 - a) * c0 + a * np.asarray(o.color_end, dtype=np.float64)
    return ObjectState(Box(cx, cy, box.w, box.h), c0, visible)


def _nearest_side(cx, cy, script):
    d = {"left": cx, "right": script.width - 1 - cx, "top": cy, "bottom": script.height - 1 - cy}
    return min(d, key=d.get)


def shape_mask(shape: str, box: Box, height: int, width: int) -> np.ndarray:
    """Exact (aliased) pixel-center rasterization."""
    xs = np.arange(width, dtype=np.float64)[None, :]
    ys = np.arange(height, dtype=np.float64)[:, None]
    if shape == "disk":
        r = box.w / 2
        return (xs - box.cx) ** 2 + (ys - box.cy) ** 2 <= r * r
    x0, y0, x1, y1 = box.corners()
    inx = (xs >= x0) & (xs < x1)
    iny = (ys >= y0) & (ys < y1)
    if shape == "rectangle":
        return inx & iny
    t = L_BAR * box.w
    vert = (xs >= x0) & (xs < x0 + t) & iny
    horiz = inx & (ys >= y1 - t) & (ys < y1)
    return vert | horiz


@lru_cache(maxsize=16)
def _background(seed: int, height: int, width: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 7919])
    coarse = rng.random((height // 16 + 2, width // 16 + 2, 3))
    zoom = ((height + 0.0) / coarse.shape[0], (width + 0.0) / coarse.shape[1], 1)
    tex = ndimage.zoom(coarse, zoom, order=1)[:height, :width]
    tex.setflags(write=False)
    return 0.3 + 0.3 * tex


@dataclass
class FrameData:
    image: np.ndarray  # H x W x 3 uint8
    masks: dict  # object id -> visible bool mask
    boxes: dict  # object id -> amodal Box, None while absent


def render_frame(script: SceneScript, t: int) -> FrameData:
    H, W = script.height, script.width
    img = _background(script.seed, H, W).copy()
    if script.noise > 0:
        img += np.random.default_rng([script.seed, t]).normal(0.0, script.noise, img.shape)
    states = {k: object_state(script, k, t) for k in range(1, len(script.objects) + 1)}

    for e in script.events:
        if e.kind == "distractor" and e.start <= t < e.end:
            st = states[e.target]
            o = script.objects[e.target - 1]
            dx = float(e.params.get("dx", 1.5 * st.box.w))
            dy = float(e.params.get("dy", 0.0))
            img[shape_mask(o.shape, st.box.shifted(dx, dy), H, W)] = st.color

    layers = []
    for k, st in states.items():
        if not st.visible:
            layers.append((k, np.zeros((H, W), bool)))
            continue
        m = shape_mask(script.objects[k - 1].shape, st.box, H, W)
        img[m] = st.color
        layers.append((k, m))

    occluders = []
    for e in script.events:
        if e.kind != "occlusion" or not e.start <= t < e.end:
            continue
        b = states[e.target].box
        x0, y0, x1, y1 = b.corners()
        cover = float(e.params.get("cover", 0.8))
        if e.params.get("side", "left") == "left":
            ox0, ox1 = x0 - 2, x0 + cover * b.w
        else:
            ox0, ox1 = x1 - cover * b.w, x1 + 2
        occ = shape_mask("rectangle", Box.from_corners(ox0, y0 - 2, ox1, y1 + 2), H, W)
        img[occ] = np.asarray(e.params.get("color", (0.12, 0.12, 0.12)), dtype=np.float64)
        occluders.append(occ)

    masks = {}
    for i, (k, m) in enumerate(layers):
        vis = m.copy()
        for _, above in layers[i + 1 :]:
            vis &= ~above
        for occ in occluders:
            vis &= ~occ
        masks[k] = vis
    boxes = {k: (st.box if st.visible else None) for k, st in states.items()}
    image = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    return FrameData(image, masks, boxes)


@dataclass
class SyntheticSequence:
    name: str
    frames: list
    masks: list  # per frame: {object id: bool mask}
    boxes: list  # per frame: {object id: amodal Box | None}
    script: SceneScript

    @property
    def object_ids(self) -> list[int]:
        return sorted(self.masks[0])

    def label_map(self, t: int) -> np.ndarray:
        out = np.zeros((self.script.height, self.script.width), np.uint8)
        for k, m in self.masks[t].items():
            out[m] = k
        return out

    def object_masks(self, k: int) -> list:
        return [fm[k] for fm in self.masks]

    def object_boxes(self, k: int) -> list:
        return [fb[k] for fb in self.boxes]


def render(script: SceneScript) -> SyntheticSequence:
    """Render every frame; bit-reproducible for a fixed script."""
    script.validate()
    data = [render_frame(script, t) for t in range(script.frame_count)]
    return SyntheticSequence(
        script.name,
        [d.image for d in data],
        [d.masks for d in data],
        [d.boxes for d in data],
        script,
    )


# ---------------------------------------------------------------------------
# oracle segmenter


@dataclass
class OracleSegmenter:
    """Noise model standing in for the segmentation network.

    ``quality`` maps frame index to a multiplier applied to all output
    probabilities. ``global_sensitivity`` adds flip noise in proportion to how
    far the tracker's global feature is from the target's true appearance.
    """

    flip_rate: float = 0.0
    jitter_radius: int = 0
    quality: dict = field(default_factory=dict)
    seed: int = 0
    global_sensitivity: float = 0.0
    global_sigma: float = 0.15
    reg_jitter: float = 0.0


def oracle_predict(
    gt_mask: np.ndarray,
    oracle: OracleSegmenter,
    frame_index: int,
    match: float = 1.0,
    object_id: int = 0,
) -> np.ndarray:
    """Corrupted copy of ``gt_mask`` as a probability map."""
    m = np.asarray(gt_mask, dtype=bool)
    rng = np.random.default_rng([oracle.seed, int(frame_index), int(object_id)])
    if oracle.jitter_radius > 0:
        k = int(rng.integers(-oracle.jitter_radius, oracle.jitter_radius + 1))
        if k > 0:
            m = ndimage.binary_dilation(m, np.ones((3, 3), bool), iterations=k)
        elif k < 0:
            m = ndimage.binary_erosion(m, np.ones((3, 3), bool), iterations=-k)
    # one uniform field per frame keeps flips nested as the rate grows
    u = rng.random(m.shape)
    rate = oracle.flip_rate + oracle.global_sensitivity * (1.0 - float(match))
    if rate > 0:
        m = m ^ (u < rate)
    q = float(oracle.quality.get(int(frame_index), 1.0))
    return q * m.astype(np.float64)


def mean_color_feature(filtered: np.ndarray) -> np.ndarray:
    """Mean color of the non-black pixels of a background-filtered crop, shape (C, 1, 1)."""
    img = np.asarray(filtered, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    fg = np.any(img > 1e-6, axis=-1)
    if not fg.any():
        return np.zeros((img.shape[-1], 1, 1))
    return img[fg].mean(axis=0).reshape(-1, 1, 1)


def quality_schedule(script: SceneScript, target: int, occlusion_quality: float = 0.7) -> dict:
    """Per-frame quality multipliers: occluded frames come out with low confidence."""
    out = {}
    for e in script.events:
        if e.kind == "occlusion" and e.target == target:
            for t in range(e.start, e.end):
                out[t] = min(out.get(t, 1.0), occlusion_quality)
    return out


class OracleBackend:
    """Adapts an :class:`OracleSegmenter` to the tracker's segmenter interface.

    Probability maps come from the ground truth inside the saliency crop; the
    regression box is the amodal (or visible) ground-truth box if its center
    lies inside the similarity crop, otherwise the prior box.
    """

    def __init__(self, oracle, gt_masks, gt_boxes=None, object_id: int = 1,
                 map_size: int = 65, saliency_input: int = 257, similarity_input: int = 303,
                 global_input: int = 129, template_input: int = 127):
        self.oracle = oracle
        self.gt_masks = list(gt_masks)
        self.gt_boxes = list(gt_boxes) if gt_boxes is not None else None
        self.object_id = object_id
        self.map_size = map_size
        self.saliency_input = saliency_input
        self.similarity_input = similarity_input
        self.global_input = global_input
        self.template_input = template_input

    def embed_template(self, template_crop):
        return None

    def extract_global(self, filtered, request=None):
        return mean_color_feature(filtered)

    def _gt(self, t):
        if 0 <= t < len(self.gt_masks) and self.gt_masks[t] is not None:
            return np.asarray(self.gt_masks[t], dtype=bool)
        return None

    def _match(self, request, gt) -> float:
        if self.oracle.global_sensitivity == 0 or request.global_values is None or gt is None:
            return 1.0
        gt_t = request.saliency_t.resized(self.global_input)
        gt_crop = mask_to_crop(gt, gt_t)
        if not gt_crop.any():
            return 1.0
        img = crop_and_resize(request.image, gt_t)
        ref = mean_color_feature(img * gt_crop[..., None])
        dist = float(np.linalg.norm(np.asarray(request.global_values).ravel() - ref.ravel()))
        return math.exp(-dist / self.oracle.global_sigma)

    def _reg_box(self, request, gt, rng) -> Box:
        sim_t = request.similarity_t
        target = None
        if self.gt_boxes is not None and request.frame_index < len(self.gt_boxes):
            target = self.gt_boxes[request.frame_index]
        elif gt is not None and gt.any():
            target = mask_bbox(gt)
        if target is not None:
            x0, y0, x1, y1 = sim_t.source_box.corners()
            if not (x0 <= target.cx <= x1 and y0 <= target.cy <= y1):
                target = None
        if target is None:
            target = request.box
        j = self.oracle.reg_jitter
        if j > 0:
            dx, dy, ds = rng.normal(0.0, j, 3)
            target = Box(target.cx + dx * target.w, target.cy + dy * target.h,
                         target.w * math.exp(ds), target.h * math.exp(ds))
        crop_box = sim_t.box_to_crop(target)
        lo, hi = -0.5, sim_t.output_size - 0.5
        cx0, cy0, cx1, cy1 = crop_box.corners()
        clipped = Box.try_make(
            (max(cx0, lo) + min(cx1, hi)) / 2, (max(cy0, lo) + min(cy1, hi)) / 2,
            min(cx1, hi) - max(cx0, lo), min(cy1, hi) - max(cy0, lo),
        )
        return clipped if clipped is not None else sim_t.box_to_crop(request.box)

    def segment(self, request):
        from .tracker import SegResult

        gt = self._gt(request.frame_index)
        map_t = request.saliency_t.resized(self.map_size)
        if gt is None:
            crop = np.zeros((self.map_size, self.map_size), bool)
        else:
            crop = mask_to_crop(gt, map_t)
        match = self._match(request, gt)
        prob = oracle_predict(crop, self.oracle, request.frame_index, match, self.object_id)
        rng = np.random.default_rng([self.oracle.seed, request.frame_index, self.object_id, 1])
        return SegResult(prob, self._reg_box(request, gt, rng))


def oracle_backends(seq: SyntheticSequence, oracle: OracleSegmenter, amodal: bool = True,
                    occlusion_quality: float | None = 0.7, **kw) -> dict:
    """One oracle backend per object of a rendered sequence."""
    out = {}
    for k in seq.object_ids:
        o = oracle
        if occlusion_quality is not None:
            q = dict(oracle.quality)
            for t, v in quality_schedule(seq.script, k, occlusion_quality).items():
                q[t] = min(q.get(t, 1.0), v)
            o = OracleSegmenter(**{**asdict(oracle), "quality": q})
        out[k] = OracleBackend(o, seq.object_masks(k), seq.object_boxes(k) if amodal else None,
                               object_id=k, **kw)
    return out


# ---------------------------------------------------------------------------
# scripted suites


def _color(rng):
    hue = rng.random()
    base = np.array([hue, (hue + 1 / 3) % 1, (hue + 2 / 3) % 1])
    return tuple(float(v) for v in 0.15 + 0.8 * np.clip(np.abs(base - 0.5) * 2, 0, 1))


def event_suite(count: int = 10, seed: int = 0, frame_count: int = 50, size: int = 256) -> list[SceneScript]:
    """Single-object scenes with one fast-motion jump and one occlusion each.

    The target drifts slowly, then jumps fully out of its saliency region while
    staying inside the wider similarity region, keeps moving away from where
    it was, and later passes behind an occluder.
    """
    rng = np.random.default_rng([seed, 2024])
    scripts = []
    for i in range(count):
        shape = SHAPES[i % 3]
        obj_size = float(rng.uniform(28, 38))
        direction = 1.0 if rng.random() < 0.5 else -1.0
        vertical = rng.random() < 0.3
        start = size * (0.22 if direction > 0 else 0.78)
        speed = float(rng.uniform(0.5, 1.0)) * direction
        jump_at = int(rng.integers(8, 14))
        jump = direction * obj_size * float(rng.uniform(1.7, 1.85))
        occ_at = int(rng.integers(28, 36))
        lateral = float(rng.uniform(0.35, 0.65)) * size
        end_pos = start + speed * (frame_count - 1)
        if vertical:
            traj = [[0, lateral, start], [frame_count - 1, lateral, end_pos]]
            jump_params = {"dx": 0.0, "dy": jump}
        else:
            traj = [[0, start, lateral], [frame_count - 1, end_pos, lateral]]
            jump_params = {"dx": jump, "dy": 0.0}
        scripts.append(SceneScript(
            name=f"suite{i:02d}",
            frame_count=frame_count,
            height=size,
            width=size,
            objects=[ObjectSpec(shape=shape, size=obj_size, aspect=float(rng.uniform(0.8, 1.25)),
                                color=_color(rng), trajectory=traj)],
            events=[
                Event("fast_motion", jump_at, jump_at + 1, 1, jump_params),
                Event("occlusion", occ_at, occ_at + 4, 1, {"cover": 0.75}),
            ],
            noise=0.02,
            seed=int(seed * 1000 + i),
        ))
    return scripts


def drift_suite(count: int = 6, seed: int = 0, frame_count: int = 40, size: int = 256) -> list[SceneScript]:
    """Slow-moving single objects whose color drifts strongly over the sequence."""
    rng = np.random.default_rng([seed, 77])
    scripts = []
    for i in range(count):
        c0 = np.array(_color(rng))
        c1 = np.clip(1.0 - c0 + rng.uniform(-0.1, 0.1, 3), 0.1, 0.95)
        x0, y0 = rng.uniform(0.3, 0.7, 2) * size
        x1, y1 = rng.uniform(0.3, 0.7, 2) * size
        scripts.append(SceneScript(
            name=f"drift{i:02d}",
            frame_count=frame_count,
            height=size,
            width=size,
            objects=[ObjectSpec(shape=SHAPES[i % 3], size=float(rng.uniform(30, 40)),
                                color=tuple(map(float, c0)), color_end=tuple(map(float, c1)),
                                trajectory=[[0, float(x0), float(y0)], [frame_count - 1, float(x1), float(y1)]])],
            noise=0.02,
            seed=int(seed * 1000 + 500 + i),
        ))
    return scripts


def random_script(rng: np.random.Generator, frame_count: int = 12, size: int = 128,
                  max_objects: int = 2, name: str = "train") -> SceneScript:
    """Easy random scene for training pairs: smooth motion, mild scale change."""
    n = int(rng.integers(1, max_objects + 1))
    objects = []
    for _ in range(n):
        s = float(rng.uniform(0.15, 0.3) * size)
        p0 = rng.uniform(0.25, 0.75, 2) * size
        p1 = p0 + rng.uniform(-0.2, 0.2, 2) * size
        objects.append(ObjectSpec(
            shape=SHAPES[int(rng.integers(0, 3))], size=s, aspect=float(rng.uniform(0.7, 1.4)),
            color=_color(rng),
            trajectory=[[0, float(p0[0]), float(p0[1])], [frame_count - 1, float(p1[0]), float(p1[1])]],
            scale=[[0, 1.0], [frame_count - 1, float(rng.uniform(0.8, 1.25))]],
        ))
    return SceneScript(name=name, frame_count=frame_count, height=size, width=size,
                       objects=objects, noise=0.02, seed=int(rng.integers(0, 2**31 - 1)))


def easy_script(frame_count: int = 100, size: int = 256, seed: int = 0, name: str = "easy") -> SceneScript:
    """One object on a slow, smooth path with a mild scale change."""
    return SceneScript(
        name=name, frame_count=frame_count, height=size, width=size, seed=seed, noise=0.02,
        objects=[ObjectSpec(
            shape="disk", size=0.16 * size, color=(0.9, 0.3, 0.2),
            trajectory=[[0, 0.3 * size, 0.4 * size], [frame_count // 2, 0.6 * size, 0.55 * size],
                        [frame_count - 1, 0.45 * size, 0.65 * size]],
            scale=[[0, 1.0], [frame_count - 1, 1.2]],
        )],
    )
