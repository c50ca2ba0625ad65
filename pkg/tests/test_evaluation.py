import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from satvos.evaluation import (
    boundary_F,
    decay,
    default_tolerance,
    evaluate_dataset,
    evaluate_labels,
    evaluate_sequence,
    region_J,
    summarize,
    write_report,
)

import oracles


def square(shape, r0, c0, side):
    m = np.zeros(shape, bool)
    m[r0 : r0 + side, c0 : c0 + side] = True
    return m


def test_region_j_examples():
    a = square((10, 10), 2, 2, 4)
    assert region_J(a, a) == 1.0
    assert region_J(a, square((10, 10), 7, 7, 2)) == 0.0
    half = a.copy()
    half[:, 4:] = False
    assert region_J(half, a) == 0.5
    assert region_J(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0
    with pytest.raises(ValueError):
        region_J(np.zeros((3, 3)), np.zeros((3, 4)))


def test_boundary_f_examples():
    a = square((40, 40), 10, 10, 12)
    assert boundary_F(a, a) == 1.0
    assert boundary_F(np.zeros_like(a), a) == 0.0
    assert boundary_F(np.zeros_like(a), np.zeros_like(a)) == 1.0
    tol = 3
    shifted = square((40, 40), 10, 10 + tol, 12)
    assert boundary_F(shifted, a, tolerance=tol) == 1.0
    assert oracles.boundary_f(shifted.tolist(), a.tolist(), tol) == 1.0
    assert boundary_F(square((40, 40), 10, 10 + tol + 1, 12), a, tolerance=tol) < 1.0


def test_default_tolerance():
    assert default_tolerance((480, 854)) == 8
    assert default_tolerance((256, 256)) == 3


small_masks = st.integers(1, 8).flatmap(
    lambda h: st.integers(1, 8).flatmap(
        lambda w: st.tuples(arrays(np.bool_, (h, w)), arrays(np.bool_, (h, w)))
    )
)


@settings(max_examples=300, deadline=None)
@given(small_masks, st.integers(0, 3))
def test_metrics_match_brute_force(pair, tol):
    p, g = pair
    assert region_J(p, g) == oracles.iou(p.tolist(), g.tolist())
    assert boundary_F(p, g, tolerance=tol) == oracles.boundary_f(p.tolist(), g.tolist(), tol)


@settings(max_examples=200, deadline=None)
@given(small_masks, st.integers(0, 3), st.integers(0, 4), st.integers(0, 4))
def test_symmetry_and_translation(pair, tol, dy, dx):
    p, g = pair
    assert region_J(p, g) == region_J(g, p)
    assert boundary_F(p, g, tol) == pytest.approx(boundary_F(g, p, tol), abs=1e-15)
    h, w = p.shape
    P = np.zeros((h + 8, w + 8), bool)
    G = np.zeros_like(P)
    P[dy : dy + h, dx : dx + w] = p
    G[dy : dy + h, dx : dx + w] = g
    P0, G0 = np.zeros_like(P), np.zeros_like(P)
    P0[:h, :w] = p
    G0[:h, :w] = g
    assert region_J(P, G) == region_J(P0, G0)
    assert boundary_F(P, G, tol) == boundary_F(P0, G0, tol)
    assert 0 <= boundary_F(p, g, tol) <= 1


def test_decay_examples():
    assert decay([0.7] * 40) == 0.0
    ramp = [1.0 - i / 100 for i in range(100)]
    assert decay(ramp) == pytest.approx(0.75, abs=1e-12)
    # remainder frames fall into the last bin
    assert decay([1, 1, 0, 0, 0, 0]) == pytest.approx(1 - 0.0)


def test_jf_mean_matches_reported_columns():
    r = summarize([0.686], [0.760])
    assert r.JF_mean == pytest.approx(0.723, abs=1e-12)


def test_evaluate_sequence_skips_first_frame():
    gt = [square((20, 20), 5, 5, 6)] * 5
    preds = [np.zeros((20, 20), bool)] + gt[1:]
    r = evaluate_sequence(preds, gt)
    assert len(r.per_frame_J) == 4
    assert r.J_mean == r.F_mean == r.JF_mean == 1.0
    with pytest.raises(ValueError):
        evaluate_sequence(preds[:3], gt)


def test_dataset_report_and_files(tmp_path):
    gt = [np.where(square((20, 20), 5, 5, 6), 1, 0) + np.where(square((20, 20), 12, 12, 4), 2, 0)] * 4
    pred = [gt[0]] + [np.where(square((20, 20), 5, 5, 6), 1, 0)] * 3
    res = evaluate_labels(pred, gt, name="s")
    assert [r.object_id for r in res] == [1, 2]
    rep = evaluate_dataset(res)
    assert rep.J_mean == pytest.approx(0.5)
    js, cs = write_report(rep, tmp_path / "report.json")
    data = json.loads(js.read_text())
    assert set(data) >= {"J_mean", "F_mean", "JF_mean", "J_decay"}
    assert len(cs.read_text().strip().splitlines()) == 3
