"""Flat run configuration shared by every command; JSON files override the defaults."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .feedback import DEFAULT_MU, DEFAULT_SMOOTHING
from .maskops import DEFAULT_BINARIZE_THRESHOLD, DEFAULT_STATE_THRESHOLD
from .synthdata import OracleSegmenter
from .tracker import TrackerConfig
from .train import TrainConfig


@dataclass
class RunConfig:
    # state estimation and feedback
    state_threshold: float = DEFAULT_STATE_THRESHOLD
    binarize_threshold: float = DEFAULT_BINARIZE_THRESHOLD
    mu: float = DEFAULT_MU
    smoothing_lambda: float = DEFAULT_SMOOTHING
    saliency_context: float = 1.0
    similarity_context: float = 2.0
    template_context: float = 1.0
    strategy: str = "sat"  # sat | mask | regression
    global_mode: str = "ema"  # ema | frozen | none
    score_weighted: bool = True
    min_box: float = 4.0
    # segmenter: "network" (checkpoint or seeded random init) or "oracle" (needs all-frame annotations)
    segmenter: str = "network"
    network_preset: str = "toy"
    checkpoint: str = ""
    oracle_flip_rate: float = 0.0
    oracle_jitter_radius: int = 0
    oracle_reg_jitter: float = 0.0
    oracle_global_sensitivity: float = 0.0
    # training
    epochs: int = 20
    warmup_epochs: int = 2
    lr_start: float = 1e-5
    lr_peak: float = 1e-2
    momentum: float = 0.9
    batch_size: int = 4
    aux_weight_stride8: float = 0.5
    aux_weight_stride16: float = 0.3
    samples_per_epoch: int = 2000
    pool_size: int = 2000
    pretrain_steps: int = 600
    # run
    seed: int = 0
    jobs: int = 1
    output_dir: str = ""

    def __post_init__(self):
        if self.segmenter not in ("network", "oracle"):
            raise ValueError("segmenter must be 'network' or 'oracle'")
        self.tracker_config()  # validates strategy and global mode

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path | None, **overrides) -> "RunConfig":
        d = json.loads(Path(path).read_text()) if path else {}
        if not isinstance(d, dict):
            raise ValueError("config file must hold a JSON object")
        d.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)

    def tracker_config(self) -> TrackerConfig:
        return TrackerConfig(
            state_threshold=self.state_threshold,
            binarize_threshold=self.binarize_threshold,
            mu=self.mu,
            smoothing=self.smoothing_lambda,
            saliency_context=self.saliency_context,
            similarity_context=self.similarity_context,
            template_context=self.template_context,
            strategy=self.strategy,
            global_mode=self.global_mode,
            score_weighted=self.score_weighted,
            min_box=self.min_box,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            warmup_epochs=self.warmup_epochs,
            lr_start=self.lr_start,
            lr_peak=self.lr_peak,
            momentum=self.momentum,
            batch_size=self.batch_size,
            aux_weights=(self.aux_weight_stride8, self.aux_weight_stride16),
            samples_per_epoch=self.samples_per_epoch,
            pool_size=self.pool_size,
            pretrain_steps=self.pretrain_steps,
            seed=self.seed,
        )

    def oracle(self) -> OracleSegmenter:
        return OracleSegmenter(
            flip_rate=self.oracle_flip_rate,
            jitter_radius=self.oracle_jitter_radius,
            reg_jitter=self.oracle_reg_jitter,
            global_sensitivity=self.oracle_global_sensitivity,
            seed=self.seed,
        )
