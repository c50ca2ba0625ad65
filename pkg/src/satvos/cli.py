"""Command-line entry points: ``satvos track | eval | synth | train``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import davis_io
from .config import RunConfig
from .evaluation import evaluate_dataset, evaluate_labels, write_report
from .synthdata import OracleBackend, load_scripts, render
from .tracker import track_sequence

log = logging.getLogger("satvos")

TELEMETRY_FIELDS = ["frame", "object", "S_cf", "S_cc", "S_state", "strategy", "cx", "cy", "w", "h"]


class CommandError(Exception):
    """A user-facing failure; the message is printed and the exit code is nonzero."""


def thread_cap() -> int | None:
    v = os.environ.get("SAT_NUM_THREADS")
    if not v:
        return None
    n = int(v)
    if n < 1:
        raise CommandError("SAT_NUM_THREADS must be a positive integer")
    return n


def _apply_thread_cap() -> None:
    n = thread_cap()
    if n is not None:
        import torch

        torch.set_num_threads(n)


def _network_segmenter(cfg: RunConfig):
    from .segnet import NetworkSegmenter, build_network, load_checkpoint

    if cfg.checkpoint:
        net, _ = load_checkpoint(cfg.checkpoint)
    else:
        log.warning("no checkpoint given; using randomly initialized %s weights", cfg.network_preset)
        net = build_network(cfg.network_preset, cfg.seed)
    seg = NetworkSegmenter(net)
    return lambda k: seg


def _oracle_segmenters(cfg: RunConfig, ann_dir: Path, stems: list):
    labels = davis_io.read_label_dir(ann_dir)
    per_frame = [labels.get(s) for s in stems]
    oracle = cfg.oracle()

    def make(k):
        masks = [None if lab is None else lab == k for lab in per_frame]
        return OracleBackend(oracle, masks, None, object_id=k)

    return make


def cmd_track(sequence: str | Path, annotations: str | Path, out: str | Path, cfg: RunConfig,
              overlay: bool = False) -> dict:
    """Track every object of the first-frame annotation through the sequence."""
    frames = davis_io.FrameSequence(sequence)
    stems = [p.stem for p in frames.paths]
    ann_dir = Path(annotations)
    init_path = ann_dir / f"{stems[0]}.png"
    if not init_path.exists():
        init_path = ann_dir / "00000.png"
    if not init_path.exists():
        raise CommandError(f"missing initial annotation: {ann_dir / (stems[0] + '.png')}")
    init = davis_io.read_labels(init_path)
    first = frames[0]
    if init.shape != first.shape[:2]:
        raise CommandError(f"annotation {init_path} is {init.shape}, frame is {first.shape[:2]}")
    if not init.any():
        raise CommandError(f"initial annotation {init_path} has no objects")

    if cfg.segmenter == "oracle":
        factory = _oracle_segmenters(cfg, ann_dir, stems)
    else:
        factory = _network_segmenter(cfg)

    class Frames:
        def __len__(self):
            return len(frames)

        def __getitem__(self, i):
            return first if i == 0 else frames[i]

    result = track_sequence(Frames(), init, factory, cfg.tracker_config(), jobs=max(1, cfg.jobs))

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if overlay:
        (out / "overlay").mkdir(exist_ok=True)
    for i, (stem, lab) in enumerate(zip(stems, result.labels)):
        davis_io.write_labels(out / f"{stem}.png", lab)
        if overlay:
            davis_io.write_frame(out / "overlay" / f"{stem}.png", davis_io.overlay(frames[i], lab))
    with open(out / "telemetry.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, TELEMETRY_FIELDS)
        w.writeheader()
        for r in result.telemetry:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    summary = {
        "sequence": Path(sequence).name,
        "frames": len(frames),
        "objects": [int(k) for k in np.unique(init) if k],
        "strategy_counts": result.strategy_counts(),
        "strategy_rates": result.strategy_rates(),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _eval_pairs(pred: Path, gt: Path):
    if any(gt.glob("*.png")):
        return [(gt.name, pred, gt)]
    seqs = sorted(p for p in gt.iterdir() if p.is_dir())
    if not seqs:
        raise CommandError(f"no annotations under {gt}")
    return [(s.name, pred / s.name, s) for s in seqs]


def cmd_eval(pred: str | Path, gt: str | Path, out: str | Path) -> dict:
    pred, gt = Path(pred), Path(gt)
    if not gt.is_dir():
        raise CommandError(f"ground-truth directory not found: {gt}")
    results = []
    for name, pdir, gdir in _eval_pairs(pred, gt):
        gts = davis_io.read_label_dir(gdir)
        if not pdir.is_dir():
            raise CommandError(f"no predictions for sequence {name}: {pdir}")
        preds = davis_io.read_label_dir(pdir)
        missing = [s for s in gts if s not in preds]
        if missing:
            raise CommandError(f"{name}: missing predicted frames {missing[:5]}")
        stems = sorted(gts)
        results += evaluate_labels([preds[s] for s in stems], [gts[s] for s in stems], name=name)
    report = evaluate_dataset(results)
    write_report(report, out)
    return report.summary()


def cmd_synth(script: str | Path, out: str | Path, seed: int | None = None) -> list:
    scripts = load_scripts(script)
    names = []
    for i, s in enumerate(scripts):
        if seed is not None:
            s.seed = seed + i
        seq = render(s)
        davis_io.write_sequence(out, s.name, seq.frames, [seq.label_map(t) for t in range(len(seq.frames))])
        names.append(s.name)
    Path(out, "scripts.json").write_text(json.dumps([s.to_dict() for s in scripts], indent=2, sort_keys=True) + "\n")
    return names


def cmd_train(cfg: RunConfig, data: str | Path | None, out: str | Path) -> dict:
    from .train import heldout_jf, train

    sequences = davis_io.load_dataset(data) if data else None
    net, records = train(cfg.network_preset, cfg.train_config(), out, sequences)
    last = records[-1]
    summary = {"epochs": len(records), "final_loss": last.mean_loss, "val_soft_iou": last.val_soft_iou}
    if sequences is None:
        summary["heldout_JF"] = heldout_jf(net, seed=cfg.seed)
    Path(out, "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    Path(out, "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="satvos", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file overriding default settings")
        sp.add_argument("--seed", type=int)

    t = sub.add_parser("track", help="track objects from the first-frame annotation")
    t.add_argument("--sequence", required=True, help="directory of frames")
    t.add_argument("--annotations", required=True, help="directory with the first-frame label PNG")
    t.add_argument("--out", required=True)
    t.add_argument("--jobs", type=int)
    t.add_argument("--overlay", action="store_true")
    common(t)

    e = sub.add_parser("eval", help="J / F report for predicted label maps")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--out", required=True, help="report JSON path; a per-sequence CSV is written beside it")
    common(e)

    s = sub.add_parser("synth", help="render scripted synthetic sequences")
    s.add_argument("--script", required=True)
    s.add_argument("--out", required=True)
    common(s)

    r = sub.add_parser("train", help="train a network on synthetic or DAVIS-layout data")
    r.add_argument("--data", help="DAVIS-layout root annotated on every frame; default: procedural stream")
    r.add_argument("--out", required=True)
    common(r)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _apply_thread_cap()
        cfg = RunConfig.load(args.config, seed=args.seed, jobs=getattr(args, "jobs", None))
        cap = thread_cap()
        if cap is not None and cfg.jobs > cap:
            cfg.jobs = cap
        if args.command == "track":
            res = cmd_track(args.sequence, args.annotations, args.out, cfg, args.overlay)
        elif args.command == "eval":
            res = cmd_eval(args.pred, args.gt, args.out)
        elif args.command == "synth":
            res = cmd_synth(args.script, args.out, args.seed)
        else:
            res = cmd_train(cfg, args.data, args.out)
    except (CommandError, davis_io.FrameReadError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(res, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
