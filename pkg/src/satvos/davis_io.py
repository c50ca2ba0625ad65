"""DAVIS-layout reading and writing: RGB frames and palette-indexed label PNGs."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

FRAME_SUFFIXES = (".jpg", ".jpeg", ".png")


class FrameReadError(IOError):
    pass


def davis_palette() -> list[int]:
    """The standard 256-entry palette used by DAVIS annotations (bit-interleaved)."""
    pal = []
    for i in range(256):
        r = g = b = 0
        c = i
        for j in range(8):
            r |= ((c >> 0) & 1) << (7 - j)
            g |= ((c >> 1) & 1) << (7 - j)
            b |= ((c >> 2) & 1) << (7 - j)
            c >>= 3
        pal += [r, g, b]
    return pal


PALETTE = davis_palette()


def list_frames(seq_dir: str | Path) -> list[Path]:
    d = Path(seq_dir)
    if not d.is_dir():
        raise FileNotFoundError(f"sequence directory not found: {d}")
    files = sorted(p for p in d.iterdir() if p.suffix.lower() in FRAME_SUFFIXES)
    if not files:
        raise FileNotFoundError(f"no frames in {d}")
    return files


def read_frame(path: str | Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise FrameReadError(f"cannot read frame {path}: {exc}") from exc


class FrameSequence:
    """Frames of one sequence, decoded on access."""

    def __init__(self, seq_dir: str | Path):
        self.paths = list_frames(seq_dir)

    def __len__(self):
        return len(self.paths)

    def __getitem__(self, i: int) -> np.ndarray:
        return read_frame(self.paths[i])


def read_labels(path: str | Path) -> np.ndarray:
    """Palette-indexed (or grayscale) PNG to a uint8 id map."""
    try:
        with Image.open(path) as im:
            if im.mode not in ("P", "L"):
                raise ValueError(f"expected a palette or grayscale PNG, got mode {im.mode}")
            return np.asarray(im, dtype=np.uint8).copy()
    except (OSError, ValueError) as exc:
        raise FrameReadError(f"cannot read annotation {path}: {exc}") from exc


def write_labels(path: str | Path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 2 or labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
        raise ValueError("labels must be a 2-D map of ids in [0, 255]")
    lab = np.ascontiguousarray(labels, dtype=np.uint8)
    im = Image.frombytes("P", (lab.shape[1], lab.shape[0]), lab.tobytes())
    im.putpalette(PALETTE)
    im.save(path, format="PNG")


def write_frame(path: str | Path, image: np.ndarray) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path, format="PNG")


def overlay(image: np.ndarray, labels: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    colors = np.asarray(PALETTE, dtype=np.float64).reshape(256, 3)
    img = np.asarray(image, dtype=np.float64)
    fg = labels > 0
    out = img.copy()
    out[fg] = (1 - alpha) * img[fg] + alpha * colors[labels[fg]]
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


def frame_name(i: int) -> str:
    return f"{i:05d}.png"


def write_sequence(root: str | Path, name: str, frames, label_maps) -> Path:
    """Write frames and per-frame annotations under ``root`` in DAVIS layout."""
    root = Path(root)
    img_dir = root / "JPEGImages" / name
    ann_dir = root / "Annotations" / name
    img_dir.mkdir(parents=True, exist_ok=True)
    ann_dir.mkdir(parents=True, exist_ok=True)
    for i, (f, lab) in enumerate(zip(frames, label_maps)):
        write_frame(img_dir / frame_name(i), f)
        write_labels(ann_dir / frame_name(i), lab)
    return root


def read_label_dir(d: str | Path) -> dict:
    """Every annotation PNG in ``d`` keyed by file stem."""
    d = Path(d)
    if not d.is_dir():
        raise FileNotFoundError(f"annotation directory not found: {d}")
    return {p.stem: read_labels(p) for p in sorted(d.glob("*.png"))}


def load_dataset(root: str | Path) -> list:
    """(frames, label maps) per sequence of a fully annotated DAVIS-layout root."""
    root = Path(root)
    img_root, ann_root = root / "JPEGImages", root / "Annotations"
    if not img_root.is_dir() or not ann_root.is_dir():
        raise FileNotFoundError(f"{root} lacks JPEGImages/ and Annotations/")
    out = []
    for seq in sorted(p for p in img_root.iterdir() if p.is_dir()):
        frames = FrameSequence(seq)
        labels = read_label_dir(ann_root / seq.name)
        stems = [p.stem for p in frames.paths]
        if not all(s in labels for s in stems):
            raise FileNotFoundError(f"sequence {seq.name} is not annotated on every frame")
        out.append(([frames[i] for i in range(len(frames))], [labels[s] for s in stems]))
    if not out:
        raise FileNotFoundError(f"no sequences under {img_root}")
    return out
