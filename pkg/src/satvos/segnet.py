"""Joint segmentation network: saliency encoder, correlation-based similarity encoder
with a box regression head, additive three-way fusion, and a skip-connection decoder.

All encoders use 3x3 stride-2 convolutions with padding 1, so an input of
``16m + 1`` pixels gives stride-4/8/16 grids of ``4m + 1``, ``2m + 1`` and
``m + 1`` cells, and bilinear upsampling with aligned corners maps them onto
each other exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .geometry import Box, crop_and_resize

MEAN, STD = 0.45, 0.25


@dataclass
class NetworkConfig:
    saliency_input: int = 257
    similarity_input: int = 303
    global_input: int = 129
    template_input: int = 127
    # stem (stride 2), then stages at strides 4, 8, 16
    saliency_channels: tuple = (32, 64, 128, 256)
    saliency_blocks: tuple = (3, 4, 6)
    # strides 2, 4, 8
    similarity_channels: tuple = (48, 128, 192)
    global_channels: tuple = (32, 64, 128)
    fusion_channels: int = 128
    decoder_channels: int = 64
    residual: bool = True
    use_saliency: bool = True
    use_similarity: bool = True
    use_global: bool = True

    def __post_init__(self):
        for k in ("saliency_channels", "saliency_blocks", "similarity_channels", "global_channels"):
            setattr(self, k, tuple(int(v) for v in getattr(self, k)))
        sizes = (self.saliency_input, self.similarity_input, self.global_input, self.template_input)
        if min(sizes) <= 0 or self.fusion_channels <= 0 or self.decoder_channels <= 0:
            raise ValueError("sizes and channel counts must be positive")
        if self.saliency_input % 16 != 1:
            raise ValueError("saliency_input must be 16m + 1 so the decoder grids nest")
        if len(self.saliency_channels) != 4 or len(self.saliency_blocks) != 3:
            raise ValueError("saliency encoder needs 4 channel counts and 3 block counts")
        if len(self.similarity_channels) != 3 or len(self.global_channels) != 3:
            raise ValueError("similarity and global encoders need 3 channel counts")
        if self.template_input > self.similarity_input:
            raise ValueError("template larger than the search crop")

    @property
    def map_sizes(self) -> dict:
        """Output grid size at each stride."""
        m = (self.saliency_input - 1) // 16
        return {4: 4 * m + 1, 8: 2 * m + 1, 16: m + 1}

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown network keys: {sorted(unknown)}")
        return cls(**d)


PRESETS = {
    # gradient checks: at most 8 channels per stage, 33-pixel inputs
    "tiny": dict(saliency_input=33, similarity_input=33, global_input=17, template_input=17,
                 saliency_channels=(4, 6, 8, 8), saliency_blocks=(1, 1, 1),
                 similarity_channels=(4, 6, 8), global_channels=(4, 6, 8),
                 fusion_channels=8, decoder_channels=6, residual=False),
    # desk-scale training and tracking
    "toy": dict(saliency_input=65, similarity_input=97, global_input=33, template_input=33,
                saliency_channels=(12, 16, 24, 32), saliency_blocks=(1, 1, 1),
                similarity_channels=(12, 24, 32), global_channels=(8, 16, 24),
                fusion_channels=32, decoder_channels=16, residual=False),
    # shrunk bottleneck saliency encoder (expansion 1) and an AlexNet-like similarity stack
    "full": dict(),
}


def preset(name: str, **overrides) -> NetworkConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return NetworkConfig(**{**PRESETS[name], **overrides})


def conv3(cin, cout, stride=1):
    return nn.Conv2d(cin, cout, 3, stride, 1)


class Bottleneck(nn.Module):
    """1x1 / 3x3 / 1x1 residual block with expansion rate 1."""

    def __init__(self, c):
        super().__init__()
        self.a = nn.Conv2d(c, c, 1)
        self.b = conv3(c, c)
        self.c = nn.Conv2d(c, c, 1)

    def forward(self, x):
        y = F.relu(self.a(x))
        y = F.relu(self.b(y))
        return F.relu(x + self.c(y))


def _stage(cin, cout, blocks, residual):
    layers = [conv3(cin, cout, 2), nn.ReLU()]
    for _ in range(blocks - 1):
        layers += [Bottleneck(cout)] if residual else [conv3(cout, cout), nn.ReLU()]
    return nn.Sequential(*layers)


class SaliencyEncoder(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        c = cfg.saliency_channels
        self.stem = nn.Sequential(conv3(3, c[0], 2), nn.ReLU())
        self.s4 = _stage(c[0], c[1], cfg.saliency_blocks[0], cfg.residual)
        self.s8 = _stage(c[1], c[2], cfg.saliency_blocks[1], cfg.residual)
        self.s16 = _stage(c[2], c[3], cfg.saliency_blocks[2], cfg.residual)
        self.project = nn.Conv2d(c[3], cfg.fusion_channels, 1)

    def forward(self, x):
        f4 = self.s4(self.stem(x))
        f8 = self.s8(f4)
        f16 = self.s16(f8)
        return (f4, f8), self.project(f16)


def _plain(channels, cin=3):
    layers = []
    for c in channels:
        layers += [conv3(cin, c, 2), nn.ReLU()]
        cin = c
    return nn.Sequential(*layers[:-1])  # linear last layer


class SimilarityEncoder(nn.Module):
    """Shared embedding for template and search crops, depthwise correlation,
    and a dense box head (classification, centerness, side distances)."""

    stride = 8

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        c = cfg.similarity_channels
        self.embed = _plain(c)
        self.adjust = nn.Conv2d(c[-1], cfg.fusion_channels, 1)
        self.head = nn.Sequential(conv3(c[-1], c[-1]), nn.ReLU())
        self.cls = nn.Conv2d(c[-1], 1, 1)
        self.ctr = nn.Conv2d(c[-1], 1, 1)
        self.ltrb = nn.Conv2d(c[-1], 4, 1)

    def correlate(self, search_emb, template_emb):
        b, c, h, w = search_emb.shape
        k = template_emb.shape[-1]
        if template_emb.shape[0] != b:
            template_emb = template_emb.expand(b, -1, -1, -1)
        out = F.conv2d(search_emb.reshape(1, b * c, h, w), template_emb.reshape(b * c, 1, k, k), groups=b * c)
        return out.reshape(b, c, out.shape[-2], out.shape[-1]) / (k * k)

    def forward(self, search, template_emb):
        r = self.correlate(self.embed(search), template_emb)
        h = self.head(r)
        return self.adjust(r), (self.cls(h), self.ctr(h), self.ltrb(h))

    def points(self, response_size: int, template_cells: int, device=None, dtype=None):
        """Search-crop pixel coordinate of each response cell."""
        j = torch.arange(response_size, device=device, dtype=dtype or torch.float32)
        return self.stride * (j + (template_cells - 1) / 2.0)


class GlobalEncoder(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.body = nn.Sequential(_plain(cfg.global_channels), nn.ReLU())
        self.project = nn.Conv2d(cfg.global_channels[-1], cfg.fusion_channels, 1)

    def forward(self, x):
        return self.project(self.body(x))


def _up(x, size):
    return F.interpolate(x, size=(size, size), mode="bilinear", align_corners=True)


class Decoder(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        c, d = cfg.saliency_channels, cfg.decoder_channels
        self.c16 = conv3(cfg.fusion_channels, d)
        self.c8 = conv3(d + c[2], d)
        self.c4 = conv3(d + c[1], d)
        self.h16 = nn.Conv2d(d, 1, 1)
        self.h8 = nn.Conv2d(d, 1, 1)
        self.h4 = nn.Conv2d(d, 1, 1)

    def forward(self, fused, low):
        f4, f8 = low
        x16 = F.relu(self.c16(fused))
        x8 = F.relu(self.c8(torch.cat([_up(x16, f8.shape[-1]), f8], 1)))
        x4 = F.relu(self.c4(torch.cat([_up(x8, f4.shape[-1]), f4], 1)))
        return {4: self.h4(x4), 8: self.h8(x8), 16: self.h16(x16)}


def fuse(saliency_high, correlated, global_feature):
    """Elementwise sum of three same-shaped features."""
    parts = (saliency_high, correlated, global_feature)
    if len({tuple(p.shape) for p in parts}) != 1:
        raise ValueError(f"fusion inputs differ in shape: {[tuple(p.shape) for p in parts]}")
    return saliency_high + correlated + global_feature


def normalize(x):
    return (x - MEAN) / STD


class JointSegNet(nn.Module):
    """Inputs are float images in [0, 1], shape (B, 3, S, S)."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        self.saliency = SaliencyEncoder(cfg)
        self.similarity = SimilarityEncoder(cfg)
        self.glob = GlobalEncoder(cfg)
        self.decoder = Decoder(cfg)

    def _check(self, x, size, what):
        if x.dim() != 4 or x.shape[1] != 3 or x.shape[-2:] != (size, size):
            raise ValueError(f"{what} must be (B, 3, {size}, {size}), got {tuple(x.shape)}")

    def embed_template(self, template):
        self._check(template, self.cfg.template_input, "template crop")
        return self.similarity.embed(normalize(template))

    def global_feature(self, filtered):
        self._check(filtered, self.cfg.global_input, "global crop")
        return self.glob(normalize(filtered))

    def forward(self, saliency_crop, search_crop, template_emb, global_feature):
        cfg = self.cfg
        self._check(saliency_crop, cfg.saliency_input, "saliency crop")
        self._check(search_crop, cfg.similarity_input, "search crop")
        if template_emb is None:
            raise ValueError("similarity encoder needs a template embedding")
        low, high = self.saliency(normalize(saliency_crop))
        n16 = high.shape[-1]
        corr, reg = self.similarity(normalize(search_crop), template_emb)
        corr = _up(corr, n16)
        g = _up(global_feature, n16) if global_feature is not None else torch.zeros_like(high)
        fused = fuse(
            high if cfg.use_saliency else torch.zeros_like(high),
            corr if cfg.use_similarity else torch.zeros_like(high),
            g if cfg.use_global else torch.zeros_like(high),
        )
        logits = self.decoder(fused, low)
        return {"logits": logits, "reg": reg, "template_cells": template_emb.shape[-1]}

    def decode_box(self, reg, template_cells: int) -> list:
        """Best box per batch item in search-crop coordinates, clipped to the crop."""
        cls, ctr, ltrb = reg
        b, _, r, _ = cls.shape
        score = (torch.sigmoid(cls) * torch.sigmoid(ctr)).reshape(b, -1)
        pts = self.similarity.points(r, template_cells, dtype=ltrb.dtype)
        dist = self.similarity.stride * torch.exp(ltrb.clamp(-6.0, 6.0))
        lo, hi = -0.5, self.cfg.similarity_input - 0.5
        out = []
        for i in range(b):
            k = int(torch.argmax(score[i]))
            y, x = divmod(k, r)
            px, py = float(pts[x]), float(pts[y])
            l, t, rr, bb = (float(v) for v in dist[i, :, y, x])
            x0, y0 = min(max(px - l, lo), hi), min(max(py - t, lo), hi)
            x1, y1 = min(max(px + rr, lo), hi), min(max(py + bb, lo), hi)
            out.append(Box.try_make((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0))
        return out


def build_network(cfg: NetworkConfig | str = "toy", seed: int = 0) -> JointSegNet:
    if isinstance(cfg, str):
        cfg = preset(cfg)
    gen = torch.Generator().manual_seed(int(seed))
    net = JointSegNet(cfg)
    with torch.no_grad():
        for m in net.modules():
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels // m.groups * m.kernel_size[0] * m.kernel_size[1]
                m.weight.normal_(0.0, math.sqrt(2.0 / fan_in), generator=gen)
                m.bias.zero_()
    return net


def probabilities(out: dict) -> dict:
    return {s: torch.sigmoid(v) for s, v in out["logits"].items()}


# ---------------------------------------------------------------------------
# checkpoints: npz of named tensors plus the config as JSON


def save_checkpoint(net: JointSegNet, path: str | Path, extra: dict | None = None) -> Path:
    path = Path(path)
    arrays = {f"param/{k}": v.detach().cpu().numpy() for k, v in net.state_dict().items()}
    meta = {"config": net.cfg.to_dict(), "extra": extra or {}}
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path: str | Path) -> tuple[JointSegNet, dict]:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        net = JointSegNet(NetworkConfig.from_dict(meta["config"]))
        state = {k[len("param/"):]: torch.from_numpy(data[k].copy()) for k in data.files if k.startswith("param/")}
    net.load_state_dict(state)
    return net, meta.get("extra", {})


# ---------------------------------------------------------------------------
# tracker adapter


def _to_tensor(img: np.ndarray, dtype) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(np.transpose(img, (2, 0, 1)))).to(dtype)[None]


class NetworkSegmenter:
    """Runs a :class:`JointSegNet` behind the tracker's segmenter interface."""

    def __init__(self, net: JointSegNet):
        self.net = net.eval()
        cfg = net.cfg
        self.saliency_input = cfg.saliency_input
        self.similarity_input = cfg.similarity_input
        self.global_input = cfg.global_input
        self.template_input = cfg.template_input
        self.dtype = next(net.parameters()).dtype

    @torch.no_grad()
    def embed_template(self, template_crop):
        return self.net.embed_template(_to_tensor(template_crop, self.dtype))

    @torch.no_grad()
    def extract_global(self, filtered):
        return self.net.global_feature(_to_tensor(filtered, self.dtype))[0].double().numpy()

    @torch.no_grad()
    def segment(self, request):
        from .tracker import SegResult

        sal = _to_tensor(crop_and_resize(request.image, request.saliency_t), self.dtype)
        sim = _to_tensor(crop_and_resize(request.image, request.similarity_t), self.dtype)
        g = None
        if request.global_values is not None:
            g = torch.from_numpy(np.asarray(request.global_values)).to(self.dtype)[None]
        out = self.net(sal, sim, request.template, g)
        prob = torch.sigmoid(out["logits"][4])[0, 0].double().numpy()
        box = self.net.decode_box(out["reg"], out["template_cells"])[0]
        return SegResult(prob, box)
