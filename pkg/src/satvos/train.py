"""Desk-scale training on synthetic pairs: segmentation losses, warmup + cosine
schedule, SGD with a frozen similarity branch, and a box-head pretraining routine.

The box-head pretraining stands in for large-scale tracker training, which is
out of reach here; it only has to make the regression box usable.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .feedback import filter_background
from .geometry import Box, crop_and_resize, make_search_region, mask_to_crop
from .maskops import mask_bbox
from .segnet import JointSegNet, NetworkConfig, build_network, normalize, save_checkpoint
from .synthdata import random_script, render_frame

log = logging.getLogger(__name__)

STRIDES = (4, 8, 16)
MIN_AREA = 30


@dataclass
class TrainConfig:
    epochs: int = 20
    warmup_epochs: int = 2
    lr_start: float = 1e-5
    lr_peak: float = 1e-2
    momentum: float = 0.9
    batch_size: int = 4
    aux_weights: tuple = (0.5, 0.3)  # stride 8, stride 16
    samples_per_epoch: int = 2000
    pool_size: int = 2000  # distinct synthetic pairs cycled through
    val_pairs: int = 64
    pretrain_steps: int = 600
    pretrain_lr: float = 2e-3
    grad_clip: float = 5.0
    seed: int = 0

    def __post_init__(self):
        self.aux_weights = tuple(float(w) for w in self.aux_weights)
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError("need 0 <= warmup_epochs < epochs")
        if min(self.aux_weights) < 0 or len(self.aux_weights) != 2:
            raise ValueError("aux_weights are two nonnegative numbers")
        if self.batch_size < 1 or self.samples_per_epoch < 1 or self.pool_size < 1:
            raise ValueError("batch size and sample counts must be positive")

    @property
    def steps_per_epoch(self) -> int:
        return max(1, self.samples_per_epoch // self.batch_size)

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup from ``lr_start`` to ``lr_peak``, then cosine down to 0."""
    w = cfg.warmup_epochs * cfg.steps_per_epoch
    total = cfg.total_steps
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    if step < w:
        return cfg.lr_start + (cfg.lr_peak - cfg.lr_start) * step / w
    u = (step - w) / (total - w)
    return cfg.lr_peak * 0.5 * (1.0 + math.cos(math.pi * u))


# ---------------------------------------------------------------------------
# ground truth at each output stride


def _area_matrix(src: int, dst: int) -> np.ndarray:
    """Row i averages the source pixels overlapping output cell i (exact overlaps)."""
    edges = np.arange(dst + 1) * (src / dst)
    lo = np.maximum(edges[:-1, None], np.arange(src)[None, :])
    hi = np.minimum(edges[1:, None], np.arange(src)[None, :] + 1)
    return np.clip(hi - lo, 0.0, None) / (src / dst)


def area_pool(mask: np.ndarray, size: int) -> np.ndarray:
    a = _area_matrix(mask.shape[0], size)
    b = _area_matrix(mask.shape[1], size)
    return a @ mask.astype(np.float64) @ b.T


def stride_targets(mask: np.ndarray, cfg: NetworkConfig) -> dict:
    """Binary targets per stride: area-average then threshold at 0.5."""
    return {s: (area_pool(mask, n) >= 0.5).astype(np.float32) for s, n in cfg.map_sizes.items()}


def seg_loss(logits: dict, targets: dict, aux_weights=(0.5, 0.3)) -> tuple[torch.Tensor, dict]:
    """``CE4 + w8 * CE8 + w16 * CE16``, each pixel-averaged."""
    parts = {}
    for s in STRIDES:
        lg, tg = logits[s], targets[s]
        if lg.shape != tg.shape:
            raise ValueError(f"stride {s}: logits {tuple(lg.shape)} vs target {tuple(tg.shape)}")
        parts[s] = F.binary_cross_entropy_with_logits(lg, tg.to(lg.dtype))
    total = parts[4] + aux_weights[0] * parts[8] + aux_weights[1] * parts[16]
    return total, parts


def soft_iou(prob: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    inter = (prob * target).sum(dim=(-2, -1))
    union = (prob + target - prob * target).sum(dim=(-2, -1))
    return torch.where(union > 0, inter / union.clamp_min(1e-12), torch.ones_like(union)).mean()


# ---------------------------------------------------------------------------
# training pairs


@dataclass
class TrainingPair:
    template: np.ndarray  # 3 x t x t
    global_crop: np.ndarray  # 3 x g x g, background removed with the target-frame mask
    saliency: np.ndarray  # 3 x S x S, search frame
    search: np.ndarray  # 3 x Q x Q, search frame
    targets: dict  # stride -> 1 x n x n
    reg_box: tuple  # search-frame box in similarity-crop coordinates
    same_sequence: bool = True


def _chw(img):
    return np.ascontiguousarray(np.transpose(img, (2, 0, 1)), dtype=np.float32)


def pair_from_frames(img_a, mask_a, img_b, mask_b, cfg: NetworkConfig, rng: np.random.Generator) -> TrainingPair:
    """Crops and targets for one (target frame, search frame) pair of a sequence.

    Images are float arrays in [0, 1]; masks are the object's boolean masks.
    """
    box_a = mask_bbox(mask_a)
    t_t = make_search_region(box_a, 1.0, cfg.template_input)
    g_t = make_search_region(box_a, 1.0, cfg.global_input)
    glob = filter_background(crop_and_resize(img_a, g_t), mask_to_crop(mask_a, g_t))

    box_b = mask_bbox(mask_b)
    # the tracker crops around last frame's box, so perturb the true one
    dx, dy = rng.normal(0.0, 0.12, 2) * np.sqrt(box_b.w * box_b.h)
    ds = float(np.exp(rng.normal(0.0, 0.12)))
    prior = Box(box_b.cx + dx, box_b.cy + dy, box_b.w * ds, box_b.h * ds)
    sal_t = make_search_region(prior, 1.0, cfg.saliency_input)
    sim_t = make_search_region(prior, 2.0, cfg.similarity_input)
    full = mask_to_crop(mask_b, sal_t)
    targets = {s: v[None] for s, v in stride_targets(full, cfg).items()}
    return TrainingPair(
        _chw(crop_and_resize(img_a, t_t)),
        _chw(glob),
        _chw(crop_and_resize(img_b, sal_t)),
        _chw(crop_and_resize(img_b, sim_t)),
        targets,
        sim_t.box_to_crop(box_b).as_tuple(),
    )


def make_pair(index: int, cfg: NetworkConfig, seed: int = 0, frame_size: int = 128,
              max_gap: int = 6) -> TrainingPair:
    """Pair ``index`` of the procedural synthetic stream."""
    rng = np.random.default_rng([seed, 31, index])
    while True:
        script = random_script(rng, frame_count=12, size=frame_size)
        k = int(rng.integers(1, len(script.objects) + 1))
        a = int(rng.integers(0, script.frame_count))
        b = int(np.clip(a + rng.integers(-max_gap, max_gap + 1), 0, script.frame_count - 1))
        fa, fb = render_frame(script, a), render_frame(script, b)
        if fa.masks[k].sum() >= MIN_AREA and fb.masks[k].sum() >= MIN_AREA:
            break
    return pair_from_frames(fa.image / 255.0, fa.masks[k], fb.image / 255.0, fb.masks[k], cfg, rng)


def pair_from_sequences(index: int, sequences: list, cfg: NetworkConfig, seed: int = 0,
                        max_gap: int = 6) -> TrainingPair:
    """Pair ``index`` drawn from loaded sequences of (frames, label maps)."""
    rng = np.random.default_rng([seed, 37, index])
    for _ in range(1000):
        frames, labels = sequences[int(rng.integers(0, len(sequences)))]
        a = int(rng.integers(0, len(frames)))
        b = int(np.clip(a + rng.integers(-max_gap, max_gap + 1), 0, len(frames) - 1))
        ids = [int(k) for k in np.unique(labels[a]) if k != 0]
        if not ids:
            continue
        k = ids[int(rng.integers(0, len(ids)))]
        ma, mb = labels[a] == k, labels[b] == k
        if ma.sum() >= MIN_AREA and mb.sum() >= MIN_AREA:
            return pair_from_frames(np.asarray(frames[a]) / 255.0, ma, np.asarray(frames[b]) / 255.0, mb, cfg, rng)
    raise ValueError("no usable object pairs in the training data")


class PairPool:
    """Lazily generated, memoized pairs ``offset .. offset + size - 1``.

    Pairs come from the procedural synthetic stream, or from ``sequences``
    (a list of (frames, label maps)) when given.
    """

    def __init__(self, cfg: NetworkConfig, size: int, seed: int = 0, offset: int = 0, sequences=None):
        self.cfg, self.size, self.seed, self.offset = cfg, size, seed, offset
        self.sequences = sequences
        self._cache: dict = {}

    def __len__(self):
        return self.size

    def __getitem__(self, i: int) -> TrainingPair:
        if not 0 <= i < self.size:
            raise IndexError(i)
        if i not in self._cache:
            if self.sequences is None:
                self._cache[i] = make_pair(self.offset + i, self.cfg, self.seed)
            else:
                self._cache[i] = pair_from_sequences(self.offset + i, self.sequences, self.cfg, self.seed)
        return self._cache[i]

    def batch(self, idx, dtype=torch.float32) -> dict:
        items = [self[int(i)] for i in idx]

        def stack(get):
            return torch.from_numpy(np.stack([get(p) for p in items])).to(dtype)

        return {
            "template": stack(lambda p: p.template),
            "global": stack(lambda p: p.global_crop),
            "saliency": stack(lambda p: p.saliency),
            "search": stack(lambda p: p.search),
            "targets": {s: stack(lambda p, s=s: p.targets[s]) for s in STRIDES},
            "reg_box": torch.tensor([p.reg_box for p in items], dtype=dtype),
        }


def forward_batch(net: JointSegNet, b: dict) -> dict:
    return net(b["saliency"], b["search"], net.embed_template(b["template"]), net.global_feature(b["global"]))


# ---------------------------------------------------------------------------
# box head pretraining


def box_targets(net: JointSegNet, reg, template_cells: int, boxes: torch.Tensor):
    cls = reg[0]
    r = cls.shape[-1]
    pts = net.similarity.points(r, template_cells, dtype=cls.dtype)
    py, px = pts[:, None], pts[None, :]
    cx, cy, w, h = (boxes[:, i, None, None] for i in range(4))
    l = px - (cx - w / 2)
    t = py - (cy - h / 2)
    rr = (cx + w / 2) - px
    bb = (cy + h / 2) - py
    l, t, rr, bb = torch.broadcast_tensors(l, t, rr, bb)
    pos = (l > 0) & (t > 0) & (rr > 0) & (bb > 0)
    ltrb = torch.stack([l, t, rr, bb], 1).clamp_min(1e-3)
    ctr = torch.sqrt(
        (torch.minimum(l, rr) / torch.maximum(l, rr)).clamp(0, 1)
        * (torch.minimum(t, bb) / torch.maximum(t, bb)).clamp(0, 1)
    )
    return pos.unsqueeze(1), ctr.unsqueeze(1), ltrb


def box_loss(net: JointSegNet, reg, template_cells: int, boxes: torch.Tensor) -> torch.Tensor:
    cls, ctr, ltrb = reg
    pos, ctr_t, ltrb_t = box_targets(net, reg, template_cells, boxes)
    posf = pos.to(cls.dtype)
    loss = F.binary_cross_entropy_with_logits(cls, posf)
    n = posf.sum().clamp_min(1.0)
    ctr_l = F.binary_cross_entropy_with_logits(ctr, ctr_t, reduction="none")
    loss = loss + (ctr_l * posf).sum() / n
    log_t = torch.log(ltrb_t / net.similarity.stride)
    reg_l = F.smooth_l1_loss(ltrb, log_t, reduction="none").sum(1, keepdim=True)
    return loss + (reg_l * posf).sum() / n


def similarity_parameters(net: JointSegNet):
    return [p for n, p in net.named_parameters() if n.startswith("similarity.")]


def pretrain_similarity(net: JointSegNet, pool: PairPool, cfg: TrainConfig) -> list[float]:
    """Fit the similarity embedding and box head on synthetic pairs."""
    params = similarity_parameters(net)
    opt = torch.optim.Adam(params, lr=cfg.pretrain_lr)
    rng = np.random.default_rng([cfg.seed, 5])
    losses = []
    net.train()
    for _ in range(cfg.pretrain_steps):
        b = pool.batch(rng.integers(0, len(pool), cfg.batch_size))
        tmpl = net.embed_template(b["template"])
        _, reg = net.similarity(normalize(b["search"]), tmpl)
        loss = box_loss(net, reg, tmpl.shape[-1], b["reg_box"])
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
    return losses


def freeze_similarity(net: JointSegNet) -> None:
    for p in similarity_parameters(net):
        p.requires_grad_(False)


def parameter_hash(params) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# main loop


class TrainingDiverged(RuntimeError):
    def __init__(self, message, snapshot):
        super().__init__(message)
        self.snapshot = snapshot


@torch.no_grad()
def evaluate_pairs(net: JointSegNet, pool: PairPool, batch_size: int = 16) -> float:
    net.eval()
    vals = []
    for s in range(0, len(pool), batch_size):
        b = pool.batch(range(s, min(s + batch_size, len(pool))))
        prob = torch.sigmoid(forward_batch(net, b)["logits"][4])
        vals.append(float(soft_iou(prob, b["targets"][4])) * prob.shape[0])
    return sum(vals) / len(pool)


def make_optimizer(net: JointSegNet, cfg: TrainConfig):
    params = [p for p in net.parameters() if p.requires_grad]
    return torch.optim.SGD(params, lr=cfg.lr_start, momentum=cfg.momentum)


def train_step(net, opt, batch, cfg: TrainConfig, lr: float) -> tuple[float, dict]:
    net.train()
    for g in opt.param_groups:
        g["lr"] = lr
    out = forward_batch(net, batch)
    loss, parts = seg_loss(out["logits"], batch["targets"], cfg.aux_weights)
    if not torch.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss {loss.item()}", {
            "lr": lr, "parts": {s: v.item() for s, v in parts.items()},
            "state": {k: v.detach().clone() for k, v in net.state_dict().items()},
        })
    opt.zero_grad()
    loss.backward()
    if cfg.grad_clip:
        torch.nn.utils.clip_grad_norm_([p for p in net.parameters() if p.requires_grad], cfg.grad_clip)
    opt.step()
    return loss.item(), {s: v.item() for s, v in parts.items()}


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    head_losses: dict
    val_soft_iou: float


@dataclass
class TrainState:
    net: JointSegNet
    optimizer: object
    step: int = 0
    curve: list = field(default_factory=list)


def train_epoch(state: TrainState, pool: PairPool, val: PairPool, cfg: TrainConfig, epoch: int) -> EpochRecord:
    rng = np.random.default_rng([cfg.seed, 11, epoch])
    order = rng.permutation(np.resize(rng.permutation(len(pool)), cfg.samples_per_epoch))
    losses, heads = [], {s: [] for s in STRIDES}
    for i in range(cfg.steps_per_epoch):
        idx = order[i * cfg.batch_size:(i + 1) * cfg.batch_size]
        if len(idx) == 0:
            break
        lr = lr_at(state.step, cfg)
        loss, parts = train_step(state.net, state.optimizer, pool.batch(idx), cfg, lr)
        losses.append(loss)
        for s in STRIDES:
            heads[s].append(parts[s])
        state.curve.append({"step": state.step, "lr": lr, "loss": loss,
                            "loss4": parts[4], "loss8": parts[8], "loss16": parts[16], "val_iou": ""})
        state.step += 1
    v = evaluate_pairs(state.net, val)
    state.curve[-1]["val_iou"] = v
    rec = EpochRecord(epoch, float(np.mean(losses)), {s: float(np.mean(h)) for s, h in heads.items()}, v)
    log.info("epoch %d loss %.4f val soft IoU %.3f", epoch, rec.mean_loss, v)
    return rec


def write_curve(curve: list, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, ["step", "lr", "loss", "loss4", "loss8", "loss16", "val_iou"])
        w.writeheader()
        w.writerows(curve)
    return path


def train(net_cfg: NetworkConfig | str = "toy", cfg: TrainConfig | None = None,
          out_dir: str | Path | None = None, sequences=None) -> tuple[JointSegNet, list[EpochRecord]]:
    """Box-head pretraining, then segmentation training with that branch frozen.

    ``sequences`` optionally replaces the procedural stream with loaded
    (frames, label maps) pairs; held-out pairs then come from the same data.
    """
    cfg = cfg or TrainConfig()
    torch.manual_seed(cfg.seed)
    net = build_network(net_cfg, cfg.seed)
    pool = PairPool(net.cfg, cfg.pool_size, cfg.seed, sequences=sequences)
    val = PairPool(net.cfg, cfg.val_pairs, cfg.seed, offset=10_000_000, sequences=sequences)
    if cfg.pretrain_steps:
        pretrain_similarity(net, pool, cfg)
    freeze_similarity(net)
    state = TrainState(net, make_optimizer(net, cfg))
    records = [train_epoch(state, pool, val, cfg, e) for e in range(cfg.epochs)]
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(net, out / "checkpoint.npz", {"train": _jsonable(asdict(cfg))})
        write_curve(state.curve, out / "curve.csv")
    return net, records


def _jsonable(d):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def heldout_scripts(count: int = 6, seed: int = 0, frame_count: int = 20, size: int = 128) -> list:
    """Scenes disjoint from the training stream (separate seed stream)."""
    rng = np.random.default_rng([seed, 99_991])
    return [random_script(rng, frame_count, size, max_objects=1, name=f"heldout{i:02d}") for i in range(count)]


def heldout_jf(net: JointSegNet, scripts=None, seed: int = 0) -> float:
    """Mean J&F of the full tracker driven by ``net`` on held-out synthetic scenes."""
    from .evaluation import evaluate_dataset, evaluate_labels
    from .segnet import NetworkSegmenter
    from .synthdata import render
    from .tracker import track_sequence

    seg = NetworkSegmenter(net)
    results = []
    for script in scripts if scripts is not None else heldout_scripts(seed=seed):
        seq = render(script)
        out = track_sequence(seq.frames, seq.label_map(0), lambda k: seg)
        gts = [seq.label_map(t) for t in range(len(seq.frames))]
        results += evaluate_labels(out.labels, gts, name=seq.name)
    return evaluate_dataset(results).JF_mean
