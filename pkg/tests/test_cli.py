import json
import shutil

import numpy as np
import pytest
from PIL import Image

from satvos import davis_io
from satvos.cli import cmd_synth, cmd_track, main
from satvos.config import RunConfig
from satvos.synthdata import ObjectSpec, SceneScript, save_scripts


def scripts(frames=6, objects=None, name="calm"):
    objs = objects or [ObjectSpec(shape="disk", size=24, trajectory=[[0, 48, 48]])]
    return [SceneScript(name=name, frame_count=frames, height=96, width=96, objects=objs, seed=2)]


@pytest.fixture
def dataset(tmp_path):
    save_scripts(scripts() + [SceneScript(
        name="pair", frame_count=6, height=96, width=96, seed=3, objects=[
            ObjectSpec(shape="disk", size=20, trajectory=[[0, 30, 40], [5, 40, 44]]),
            ObjectSpec(shape="rectangle", size=18, color=(0.2, 0.4, 0.9), trajectory=[[0, 70, 60], [5, 62, 58]]),
        ])], tmp_path / "s.json")
    assert main(["synth", "--script", str(tmp_path / "s.json"), "--out", str(tmp_path / "data")]) == 0
    return tmp_path / "data"


def seq_args(root, name, out, *extra):
    return ["track", "--sequence", str(root / "JPEGImages" / name),
            "--annotations", str(root / "Annotations" / name), "--out", str(out), *extra]


def tree_bytes(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_synth_twice_is_byte_identical(tmp_path, dataset):
    again = tmp_path / "again"
    main(["synth", "--script", str(tmp_path / "s.json"), "--out", str(again)])
    assert tree_bytes(dataset) == tree_bytes(again)
    assert (dataset / "JPEGImages" / "calm" / "00005.png").exists()


def test_synth_seed_flag_changes_noise(tmp_path, dataset):
    main(["synth", "--script", str(tmp_path / "s.json"), "--out", str(tmp_path / "o"), "--seed", "9"])
    a = (dataset / "JPEGImages" / "calm" / "00000.png").read_bytes()
    assert a != (tmp_path / "o" / "JPEGImages" / "calm" / "00000.png").read_bytes()


def test_track_is_deterministic(tmp_path, dataset):
    for run in ("a", "b"):
        assert main(seq_args(dataset, "pair", tmp_path / run, "--seed", "1", "--overlay")) == 0
    a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
    assert a == b and "telemetry.csv" in a and "overlay/00003.png" in a


def test_oracle_tracking_of_static_scene_reproduces_annotation(tmp_path, dataset):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"segmenter": "oracle"}))
    assert main(seq_args(dataset, "calm", tmp_path / "out", "--config", str(cfg))) == 0
    gt = davis_io.read_label_dir(dataset / "Annotations" / "calm")
    pred = davis_io.read_label_dir(tmp_path / "out")
    assert sorted(gt) == sorted(pred)
    for s in gt:
        np.testing.assert_array_equal(pred[s], gt[s])


def test_multi_object_tracking_fans_out(tmp_path, dataset):
    out = tmp_path / "out"
    summary = cmd_track(dataset / "JPEGImages" / "pair", dataset / "Annotations" / "pair", out,
                        RunConfig(segmenter="oracle"))
    assert summary["objects"] == [1, 2]
    labels = sorted(out.glob("0*.png"))
    assert len(labels) == 6
    rows = (out / "telemetry.csv").read_text().splitlines()
    assert len(rows) == 1 + 2 * 5
    assert set(np.unique(davis_io.read_labels(labels[-1]))) == {0, 1, 2}


def test_single_frame_sequence_succeeds(tmp_path):
    save_scripts(scripts(frames=1), tmp_path / "s.json")
    cmd_synth(tmp_path / "s.json", tmp_path / "d")
    assert main(seq_args(tmp_path / "d", "calm", tmp_path / "out")) == 0
    assert (tmp_path / "out" / "telemetry.csv").read_text().strip().count("\n") == 0
    assert json.loads((tmp_path / "out" / "summary.json").read_text())["frames"] == 1


def test_missing_initial_annotation_fails(tmp_path, dataset, capsys):
    ann = tmp_path / "ann"
    ann.mkdir()
    args = ["track", "--sequence", str(dataset / "JPEGImages" / "calm"),
            "--annotations", str(ann), "--out", str(tmp_path / "out")]
    assert main(args) != 0
    assert "00000.png" in capsys.readouterr().err


def test_unreadable_frame_is_named(tmp_path, dataset, capsys):
    seq = tmp_path / "frames"
    shutil.copytree(dataset / "JPEGImages" / "calm", seq)
    (seq / "00003.png").write_bytes(b"not an image")
    code = main(["track", "--sequence", str(seq), "--annotations", str(dataset / "Annotations" / "calm"),
                 "--out", str(tmp_path / "out")])
    assert code != 0
    assert "00003.png" in capsys.readouterr().err


def test_eval_identical_dirs_scores_one(tmp_path, dataset):
    ann = dataset / "Annotations"
    assert main(["eval", "--pred", str(ann), "--gt", str(ann), "--out", str(tmp_path / "r.json")]) == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["J_mean"] == 1.0 and rep["F_mean"] == 1.0 and rep["JF_mean"] == 1.0
    assert (tmp_path / "r_per_sequence.csv").exists()


def test_unknown_config_key_rejected(tmp_path, dataset, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"state_treshold": 0.9}))
    assert main(seq_args(dataset, "calm", tmp_path / "out", "--config", str(cfg))) == 2
    assert "state_treshold" in capsys.readouterr().err


def test_run_config_defaults():
    cfg = RunConfig()
    t = cfg.tracker_config()
    assert (t.state_threshold, t.mu, t.smoothing, t.binarize_threshold) == (0.85, 0.5, 0.3, 0.5)
    assert (t.saliency_context, t.similarity_context, t.template_context) == (1.0, 2.0, 1.0)
    assert cfg.train_config().aux_weights == (0.5, 0.3)
    assert RunConfig.from_dict(cfg.to_dict()) == cfg


def test_thread_cap_env(tmp_path, dataset, monkeypatch):
    monkeypatch.setenv("SAT_NUM_THREADS", "0")
    assert main(seq_args(dataset, "calm", tmp_path / "out")) == 2


def test_palette_round_trip_is_bit_exact(tmp_path):
    lab = np.random.default_rng(0).integers(0, 256, (37, 23)).astype(np.uint8)
    davis_io.write_labels(tmp_path / "l.png", lab)
    img = Image.open(tmp_path / "l.png")
    assert img.mode == "P"
    assert img.getpalette()[3:6] == davis_io.PALETTE[3:6]
    np.testing.assert_array_equal(davis_io.read_labels(tmp_path / "l.png"), lab)


def test_missing_frames_dir_rejected(tmp_path):
    with pytest.raises(FileNotFoundError):
        davis_io.FrameSequence(tmp_path / "nothing")
    (tmp_path / "empty").mkdir()
    with pytest.raises((FileNotFoundError, davis_io.FrameReadError)):
        davis_io.FrameSequence(tmp_path / "empty")
