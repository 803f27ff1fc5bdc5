"""Mouth crop, normalization and per-clip augmentation.

Random augmentation parameters are drawn once per clip and applied to every
frame, so both pathways (which read the same clip) see the same transform.
Interpolation is bilinear with ``align_corners=False``.
"""
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .config import PreprocessConfig
from .data import Clip


def crop_mouth(clip: Clip, box) -> Clip:
    top, left, h, w = box
    T, H, W, _ = clip.frames.shape
    if top < 0 or left < 0 or h < 1 or w < 1 or top + h > H or left + w > W:
        raise ValueError(f"crop box {tuple(box)} outside {H}x{W} frame")
    return clip.replace(clip.frames[:, top:top + h, left:left + w, :])


def normalize(clip: Clip, mean=0.45, std=0.225) -> Clip:
    x = clip.frames
    if x.dtype == np.uint8:
        x = x.astype(np.float32) / 255.0
    return clip.replace(((x - mean) / std).astype(np.float32, copy=False))


def to_grayscale(clip: Clip) -> Clip:
    x = clip.frames
    if x.shape[-1] == 1:
        return clip
    gray = x.astype(np.float32) @ np.array([0.299, 0.587, 0.114], dtype=np.float32)
    if x.dtype == np.uint8:
        gray = np.clip(np.round(gray), 0, 255).astype(np.uint8)
    return clip.replace(gray[..., None])


def resize(frames: np.ndarray, size) -> np.ndarray:
    """Bilinear resize of a [T, H, W, C] stack to ``size`` = (h, w)."""
    h, w = size
    if frames.shape[1:3] == (h, w):
        return frames
    t = torch.from_numpy(np.ascontiguousarray(frames, dtype=np.float32)).permute(0, 3, 1, 2)
    out = F.interpolate(t, size=(h, w), mode="bilinear", align_corners=False)
    out = out.permute(0, 2, 3, 1).numpy()
    if frames.dtype == np.uint8:
        return np.clip(np.round(out), 0, 255).astype(np.uint8)
    return out.astype(frames.dtype, copy=False)


@dataclass(frozen=True)
class AugmentParams:
    size: int
    top: int
    left: int
    flip: bool

    def to_json(self):
        return asdict(self)


def sample_augment(rng: np.random.Generator, cfg: PreprocessConfig = PreprocessConfig()) -> AugmentParams:
    lo, hi = cfg.train_upsample
    size = int(rng.integers(lo, hi + 1))
    span = size - cfg.crop_size
    top = int(rng.integers(0, span + 1))
    left = int(rng.integers(0, span + 1))
    flip = bool(rng.random() < cfg.flip_prob)
    return AugmentParams(size, top, left, flip)


def apply_augment(clip: Clip, params: AugmentParams, crop_size=112) -> Clip:
    x = resize(clip.frames, (params.size, params.size))
    x = x[:, params.top:params.top + crop_size, params.left:params.left + crop_size]
    if params.flip:
        x = x[:, :, ::-1]
    return clip.replace(np.ascontiguousarray(x))


def train_augment(clip: Clip, rng: np.random.Generator, cfg: PreprocessConfig = PreprocessConfig(),
                  return_params=False):
    params = sample_augment(rng, cfg)
    out = apply_augment(clip, params, cfg.crop_size)
    return (out, params) if return_params else out


def center_crop(frames, size):
    H, W = frames.shape[1:3]
    top, left = (H - size) // 2, (W - size) // 2
    return frames[:, top:top + size, left:left + size]


def eval_transform(clip: Clip, cfg: PreprocessConfig = PreprocessConfig()) -> Clip:
    x = resize(clip.frames, (cfg.eval_upsample, cfg.eval_upsample))
    return clip.replace(np.ascontiguousarray(center_crop(x, cfg.crop_size)))


def prepare(clip: Clip, cfg: PreprocessConfig, rng=None, train=False):
    """Crop, normalize, then augment (train) or resize/center-crop (eval).

    Normalization is affine and bilinear weights sum to one, so normalizing
    before resizing gives the same result as after, without u8 rounding.
    Returns ``(clip, params)`` where params is None at eval.
    """
    clip = crop_mouth(clip, cfg.crop_box)
    if cfg.grayscale:
        clip = to_grayscale(clip)
    clip = normalize(clip, cfg.mean, cfg.std)
    if train:
        params = sample_augment(rng, cfg)
        return apply_augment(clip, params, cfg.crop_size), params
    return eval_transform(clip, cfg), None
