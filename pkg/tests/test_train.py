import csv
import math
from fractions import Fraction

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from satvos.segnet import build_network, load_checkpoint, preset
from satvos.train import (
    PairPool,
    TrainConfig,
    TrainingDiverged,
    area_pool,
    freeze_similarity,
    lr_at,
    make_optimizer,
    make_pair,
    parameter_hash,
    seg_loss,
    similarity_parameters,
    stride_targets,
    train,
    train_epoch,
    train_step,
    TrainState,
)

LN2 = math.log(2.0)


def logits_like(value, sizes=(17, 9, 5)):
    return {s: torch.full((2, 1, n, n), float(value), dtype=torch.float64) for s, n in zip((4, 8, 16), sizes)}


def test_lr_schedule_examples():
    cfg = TrainConfig()
    w = cfg.warmup_epochs * cfg.steps_per_epoch
    assert lr_at(0, cfg) == pytest.approx(1e-5, rel=1e-12)
    assert lr_at(w, cfg) == pytest.approx(1e-2, rel=1e-12)
    mid = w + (cfg.total_steps - w) // 2
    assert (cfg.total_steps - w) % 2 == 0
    assert lr_at(mid, cfg) == pytest.approx(5e-3, rel=1e-12)
    assert lr_at(cfg.total_steps, cfg) == pytest.approx(0.0, abs=1e-18)
    with pytest.raises(ValueError):
        lr_at(cfg.total_steps + 1, cfg)


def test_lr_continuous_at_warmup_junction():
    cfg = TrainConfig()
    w = cfg.warmup_epochs * cfg.steps_per_epoch
    left = cfg.lr_start + (cfg.lr_peak - cfg.lr_start) * (w - 1e-9) / w
    assert left == pytest.approx(lr_at(w, cfg), rel=1e-9)
    assert lr_at(w - 1, cfg) < lr_at(w, cfg)
    assert lr_at(w + 1, cfg) < lr_at(w, cfg)


def test_uniform_half_probability_loss_closed_form():
    lg = logits_like(0.0)
    for tgt in (0.0, 1.0):
        total, parts = seg_loss(lg, {s: torch.full_like(v, tgt) for s, v in lg.items()})
        assert float(total) == pytest.approx(1.8 * LN2, rel=1e-12)
        assert all(float(p) == pytest.approx(LN2, rel=1e-12) for p in parts.values())


def test_perfect_prediction_loss_vanishes():
    targets = {s: (torch.rand(v.shape, generator=torch.Generator().manual_seed(s)) > 0.5).double()
               for s, v in logits_like(0.0).items()}
    prev = None
    for eps in (1e-2, 1e-4, 1e-8):
        lg = {s: (2 * t - 1) * math.log((1 - eps) / eps) for s, t in targets.items()}
        loss = float(seg_loss(lg, targets)[0])
        assert loss < 2 * eps
        assert prev is None or loss < prev
        prev = loss


def test_zero_aux_weights_leave_stride4_alone():
    g = torch.Generator().manual_seed(0)
    lg = {s: torch.randn(v.shape, generator=g, dtype=torch.float64) for s, v in logits_like(0.0).items()}
    tg = {s: (torch.rand(v.shape, generator=g) > 0.5).double() for s, v in lg.items()}
    total, parts = seg_loss(lg, tg, (0.0, 0.0))
    assert float(total) == float(parts[4])
    t2, _ = seg_loss(lg, tg, (0.5, 0.3))
    assert float(t2) == pytest.approx(float(parts[4] + 0.5 * parts[8] + 0.3 * parts[16]), rel=1e-14)


def test_loss_rejects_shape_mismatch():
    lg = logits_like(0.0)
    tg = {s: torch.zeros_like(v) for s, v in lg.items()}
    tg[8] = torch.zeros(2, 1, 8, 8)
    with pytest.raises(ValueError):
        seg_loss(lg, tg)


def brute_area_pool(mask, size):
    h, w = mask.shape
    out = np.zeros((size, size))
    for i in range(size):
        for j in range(size):
            acc = Fraction(0)
            y0, y1 = Fraction(i * h, size), Fraction((i + 1) * h, size)
            x0, x1 = Fraction(j * w, size), Fraction((j + 1) * w, size)
            for r in range(h):
                oy = min(y1, r + 1) - max(y0, r)
                if oy <= 0:
                    continue
                for c in range(w):
                    ox = min(x1, c + 1) - max(x0, c)
                    if ox > 0 and mask[r, c]:
                        acc += oy * ox
            out[i, j] = float(acc / ((y1 - y0) * (x1 - x0)))
    return out


@settings(max_examples=60, deadline=None)
@given(arrays(bool, st.tuples(st.integers(3, 13), st.integers(3, 13))), st.integers(1, 5))
def test_area_pool_matches_fraction_oracle(mask, size):
    np.testing.assert_allclose(area_pool(mask, size), brute_area_pool(mask, size), atol=1e-12)


def test_stride_targets_shapes_and_values():
    cfg = preset("toy")
    m = np.zeros((65, 65), bool)
    m[16:48, 16:48] = True
    t = stride_targets(m, cfg)
    assert {s: v.shape for s, v in t.items()} == {4: (17, 17), 8: (9, 9), 16: (5, 5)}
    assert set(np.unique(t[4])) == {0.0, 1.0}
    assert t[4][8, 8] == 1.0 and t[4][0, 0] == 0.0


def test_pairs_are_deterministic_and_same_sequence():
    cfg = preset("toy")
    a, b = make_pair(5, cfg, seed=1), make_pair(5, cfg, seed=1)
    assert a.saliency.tobytes() == b.saliency.tobytes() and a.reg_box == b.reg_box
    assert a.same_sequence
    assert a.template.shape == (3, 33, 33) and a.global_crop.shape == (3, 33, 33)
    assert a.saliency.shape == (3, 65, 65) and a.search.shape == (3, 97, 97)
    assert a.targets[4].shape == (1, 17, 17) and a.targets[4].any()


def tiny_cfg(**kw):
    base = dict(epochs=2, warmup_epochs=1, samples_per_epoch=8, pool_size=8, val_pairs=4, pretrain_steps=3)
    return TrainConfig(**{**base, **kw})


def test_frozen_parameters_unchanged_after_epoch():
    cfg = tiny_cfg()
    net = build_network("toy", 0)
    freeze_similarity(net)
    before = parameter_hash(similarity_parameters(net))
    others = parameter_hash([p for p in net.parameters() if p.requires_grad])
    state = TrainState(net, make_optimizer(net, cfg))
    pool, val = PairPool(net.cfg, 8), PairPool(net.cfg, 4, offset=1000)
    rec = train_epoch(state, pool, val, cfg, 0)
    state.step = cfg.steps_per_epoch
    rec = train_epoch(state, pool, val, cfg, 1)
    assert parameter_hash(similarity_parameters(net)) == before
    assert parameter_hash([p for p in net.parameters() if p.requires_grad]) != others
    assert math.isfinite(rec.mean_loss) and 0 <= rec.val_soft_iou <= 1
    assert set(rec.head_losses) == {4, 8, 16}


def test_single_pair_loss_strictly_decreases():
    torch.manual_seed(0)
    cfg = TrainConfig()
    net = build_network("toy", 0)
    batch = PairPool(net.cfg, 1, seed=3).batch([0])
    opt = make_optimizer(net, cfg)
    losses = [train_step(net, opt, batch, cfg, cfg.lr_peak)[0] for _ in range(51)]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_non_finite_loss_aborts_with_snapshot():
    cfg = TrainConfig()
    net = build_network("toy", 0)
    batch = PairPool(net.cfg, 1).batch([0])
    batch["saliency"][0, 0, 0, 0] = float("nan")
    with pytest.raises(TrainingDiverged) as exc:
        train_step(net, make_optimizer(net, cfg), batch, cfg, 1e-3)
    snap = exc.value.snapshot
    assert snap["lr"] == 1e-3 and set(snap["parts"]) == {4, 8, 16}
    assert set(snap["state"]) == set(net.state_dict())


def test_training_is_reproducible_and_writes_outputs(tmp_path):
    cfg = tiny_cfg()
    net_a, rec_a = train("tiny", cfg, tmp_path / "a")
    net_b, rec_b = train("tiny", cfg, tmp_path / "b")
    assert parameter_hash(net_a.parameters()) == parameter_hash(net_b.parameters())
    assert [r.mean_loss for r in rec_a] == [r.mean_loss for r in rec_b]
    assert (tmp_path / "a" / "checkpoint.npz").read_bytes() == (tmp_path / "b" / "checkpoint.npz").read_bytes()
    with open(tmp_path / "a" / "curve.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == cfg.total_steps
    assert list(rows[0]) == ["step", "lr", "loss", "loss4", "loss8", "loss16", "val_iou"]
    assert rows[-1]["val_iou"] != ""
    loaded, extra = load_checkpoint(tmp_path / "a" / "checkpoint.npz")
    assert parameter_hash(loaded.parameters()) == parameter_hash(net_a.parameters())
    assert extra["train"]["epochs"] == 2


def test_config_invariants():
    with pytest.raises(ValueError):
        TrainConfig(epochs=2, warmup_epochs=2)
    with pytest.raises(ValueError):
        TrainConfig(aux_weights=(-0.1, 0.3))
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"epochz": 3})
