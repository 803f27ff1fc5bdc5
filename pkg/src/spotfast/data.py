"""Synthetic lip-motion datasets and readers for the LRW directory layout.

Layout: ``root/<WORD>/<split>/<WORD>_<nnnnn>.sft``. Labels come from the
sorted word-directory names, so no index file is needed.
"""
import json
import logging
import os
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensorio import encode_tensor, read_header, read_tensor

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
CLIP_EXTS = (".sft", ".npy")


@dataclass
class Clip:
    frames: np.ndarray  # [T, H, W, C]
    label: int
    clip_id: str
    boundary: tuple | None = None

    @property
    def num_frames(self):
        return self.frames.shape[0]

    def replace(self, frames):
        return Clip(frames, self.label, self.clip_id, self.boundary)

    def check(self, num_classes=None):
        """Raise ``ValueError`` if the clip violates its invariants."""
        if self.frames.ndim != 4:
            raise ValueError(f"{self.clip_id}: frames must be [T, H, W, C]")
        if self.frames.dtype == np.uint8:
            pass
        elif not np.issubdtype(self.frames.dtype, np.floating):
            raise ValueError(f"{self.clip_id}: unsupported dtype {self.frames.dtype}")
        if self.label < 0 or (num_classes is not None and self.label >= num_classes):
            raise ValueError(f"{self.clip_id}: label {self.label} out of range")
        if self.boundary is not None:
            s, e = self.boundary
            if not 0 <= s <= e < self.num_frames:
                raise ValueError(f"{self.clip_id}: boundary {self.boundary} outside clip")


@dataclass
class DatasetManifest:
    root: str
    split: str
    num_classes: int
    clip_count: int
    class_names: list = field(default_factory=list)

    def to_json(self):
        return dict(root=self.root, split=self.split, num_classes=self.num_classes,
                    clip_count=self.clip_count, class_names=self.class_names)


@dataclass
class SyntheticSpec:
    num_classes: int = 10
    clips_per_class: int = 50
    T: int = 29
    H: int = 96
    W: int = 96
    seed: int = 0
    channels: int = 3
    # extra held-out clips per class; clips_per_class always goes to train
    val_per_class: int = 0
    test_per_class: int = 0
    # word duration distribution in frames (scaled LRW-like statistics)
    duration_mean: float = 10.59
    duration_std: float = 3.2
    noise: float = 6.0


def class_names(num_classes):
    return [f"W{c:03d}" for c in range(num_classes)]


def _class_motion(c):
    """Tilt (radians), opening frequency (cycles per word) and opening depth of class c.

    Tilts stay within [0, pi/2] so a horizontal flip (tilt -> -tilt) never
    maps one class onto another. Frequencies stay at 1 or 2 cycles: three
    cycles alias in short words.
    """
    orient = 0.5 * np.pi * (c % 4) / 3
    level = c // 4
    freq = 1.0 + level % 2
    depth = 0.65 * (1.0 + (level // 2))
    return orient, freq, depth


def render_clip(spec: SyntheticSpec, label: int, rng: np.random.Generator):
    """Render one clip; returns ``(frames uint8 [T,H,W,C], (start, end))``.

    A dark ellipse (the "mouth") sits near the frame center. Outside the word
    span it is nearly closed and still; during the span it opens and closes
    with a class-specific frequency and depth while its tilt is class-specific. Both
    cues are local, so they survive global spatial pooling. Position, size,
    timing, phase and pixel noise vary per clip.
    """
    T, H, W = spec.T, spec.H, spec.W
    orient, freq, depth = _class_motion(label)
    orient += rng.uniform(-0.08, 0.08)
    phase = rng.uniform(-0.3, 0.3)

    dur = int(np.clip(np.round(rng.normal(spec.duration_mean, spec.duration_std)), min(6, T), T))
    start = (T - dur) // 2 + int(rng.integers(-1, 2))
    start = int(np.clip(start, 0, T - dur))
    end = start + dur - 1

    cy = H / 2 + rng.uniform(-0.03, 0.03) * H
    cx = W / 2 + rng.uniform(-0.03, 0.03) * W
    scale = rng.uniform(0.9, 1.1)
    rx0, ry0 = 0.30 * W * scale, 0.08 * H * scale

    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    cos, sin = np.cos(orient), np.sin(orient)
    u_ = (xx - cx) * cos + (yy - cy) * sin
    v_ = -(xx - cx) * sin + (yy - cy) * cos
    if spec.channels == 3:
        base, blob = np.array([170.0, 120.0, 110.0]), np.array([60.0, 20.0, 30.0])
    else:
        base, blob = np.array([140.0] * spec.channels), np.array([35.0] * spec.channels)

    frames = np.empty((T, H, W, spec.channels), dtype=np.uint8)
    for t in range(T):
        if start <= t <= end:
            s = (t - start) / max(dur - 1, 1)
            opening = 0.25 + depth * (1 - np.cos(2 * np.pi * freq * s + phase))
        else:
            opening = 0.25
        mask = (u_ / rx0) ** 2 + (v_ / (ry0 * opening)) ** 2 <= 1.0
        img = np.where(mask[..., None], blob, base)
        img = img + rng.normal(0.0, spec.noise, size=img.shape)
        frames[t] = np.clip(np.round(img), 0, 255).astype(np.uint8)
    return frames, (start, end)


def _clip_rng(seed, split, label, index):
    key = zlib.crc32(f"{split}/{label}/{index}".encode())
    return np.random.default_rng([seed, key])


def generate_synthetic_dataset(spec: SyntheticSpec, root) -> DatasetManifest:
    """Write a synthetic dataset under ``root``; returns the train manifest.

    Files already holding identical bytes are left untouched, so a rerun with
    the same spec is a no-op (see :func:`last_write_status`).
    """
    if spec.num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if spec.T < 5:
        raise ValueError("T must be >= 5")
    if spec.H < 16 or spec.W < 16:
        raise ValueError("degenerate spec: H and W must be >= 16")
    root = Path(root)
    names = class_names(spec.num_classes)
    counts = {"train": spec.clips_per_class, "val": spec.val_per_class, "test": spec.test_per_class}
    written = unchanged = 0
    for label, word in enumerate(names):
        for split, n in counts.items():
            if n == 0:
                continue
            d = root / word / split
            d.mkdir(parents=True, exist_ok=True)
            for i in range(n):
                frames, boundary = render_clip(spec, label, _clip_rng(spec.seed, split, label, i))
                blob = encode_tensor(frames, order="THWC", boundary=list(boundary))
                path = d / f"{word}_{i:05d}.sft"
                if path.exists() and path.read_bytes() == blob:
                    unchanged += 1
                    continue
                path.write_bytes(blob)
                written += 1
    meta = dict(spec.__dict__)
    meta["splits"] = {k: v * spec.num_classes for k, v in counts.items()}
    blob = json.dumps(meta, sort_keys=True, indent=1).encode()
    mpath = root / "synthetic.json"
    if mpath.exists() and mpath.read_bytes() == blob:
        unchanged += 1
    else:
        mpath.write_bytes(blob)
        written += 1
    _STATUS[str(root)] = "unchanged" if written == 0 else ("created" if unchanged == 0 else "updated")
    return DatasetManifest(str(root), "train", spec.num_classes,
                           spec.num_classes * spec.clips_per_class, names)


_STATUS: dict = {}


def last_write_status(root):
    """``created``, ``updated`` or ``unchanged`` for the last generation into root."""
    return _STATUS.get(str(Path(root)))


def list_classes(root):
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} does not exist")
    names = sorted(p.name for p in root.iterdir() if p.is_dir() and not p.name.startswith("."))
    if not names:
        raise ValueError(f"no classes found under {root}")
    return names


def _clip_files(root, split):
    root = Path(root)
    for label, word in enumerate(list_classes(root)):
        d = root / word / split
        if not d.is_dir():
            raise FileNotFoundError(f"missing split directory {d}")
        for name in sorted(os.listdir(d)):
            if name.endswith(CLIP_EXTS):
                yield label, d / name


def scan_manifest(root, split) -> DatasetManifest:
    names = list_classes(root)
    count = sum(1 for _ in _clip_files(root, split))
    return DatasetManifest(str(root), split, len(names), count, names)


def read_clip(path, label):
    path = Path(path)
    if path.suffix == ".npy":
        frames, boundary = np.load(path), None
    else:
        frames, header = read_tensor(path)
        if header.get("order", "THWC") != "THWC":
            raise ValueError(f"{path}: expected THWC order, got {header['order']}")
        boundary = tuple(header["boundary"]) if "boundary" in header else None
    return Clip(frames, label, path.stem, boundary)


def load_lrw_layout(root, split, expected_frames=29):
    """Yield every clip of ``split`` in lexicographic (word, clip id) order.

    Clips whose frame count differs from ``expected_frames`` are logged and
    skipped; a single warning with the total is issued at the end. Pass
    ``expected_frames=None`` to accept any length.
    """
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    skipped = 0
    for label, path in _clip_files(root, split):
        clip = read_clip(path, label)
        if expected_frames is not None and clip.num_frames != expected_frames:
            log.warning("skipping %s: %d frames, expected %d", path, clip.num_frames, expected_frames)
            skipped += 1
            continue
        yield clip
    if skipped:
        warnings.warn(f"skipped {skipped} clip(s) with wrong frame count", RuntimeWarning)


def boundary_durations(root, split="train"):
    """Word durations (frames) from clip headers; clips without one are ignored."""
    out = []
    for _, path in _clip_files(root, split):
        if path.suffix != ".sft":
            continue
        header = read_header(path)
        if "boundary" in header:
            s, e = header["boundary"]
            out.append(e - s + 1)
    return out
