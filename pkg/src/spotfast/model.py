"""Full lipreading network and checkpoint helpers.

Pipeline: two-pathway backbone -> 1x4x4 spatial average pool -> mean over
the remaining spatial positions -> (optional) lateral transformers ->
dual temporal-conv back-end -> logits.
"""
import dataclasses

import numpy as np
import torch
from torch import nn

from . import config as C
from .backbone import SpotFast, spatial_pool
from .lateralxf import LateralTransformer
from .tcback import DualTCHead
from .tensorio import load_archive, save_archive
from .windowing import window_offset

GROUPS = ("backbone", "transformer", "head")


class SpotFastLipreader(nn.Module):
    def __init__(self, cfg: C.ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        bb = cfg.backbone
        self.backbone = SpotFast(bb)
        self.transformer = LateralTransformer(bb.c_spot, bb.c_fast, cfg.transformer, cfg.memory)
        self.head = DualTCHead(bb.c_spot, bb.c_fast, cfg.num_classes, tuple(cfg.tc_kernels))
        self.use_transformer = cfg.transformer.enabled

    def features(self, full_clip):
        """Backbone features as [B, C, T] sequences for both pathways."""
        spot, fast = self.backbone.forward_clip(full_clip)
        spot = spatial_pool(spot).mean(dim=(3, 4))
        fast = spatial_pool(fast).mean(dim=(3, 4))
        return spot, fast

    def forward(self, full_clip):
        """full_clip [B, C, T, H, W] -> logits [B, num_classes]."""
        spot, fast = self.features(full_clip)
        if self.use_transformer:
            offset = window_offset(self.cfg.backbone.num_frames, self.cfg.backbone.window_size)
            s, f = self.transformer(spot.transpose(1, 2), fast.transpose(1, 2), offset)
            spot, fast = s.transpose(1, 2), f.transpose(1, 2)
        return self.head(spot, fast)

    def group(self, name):
        if name not in GROUPS:
            raise KeyError(f"unknown parameter group {name!r}")
        return getattr(self, name)


def build_model(cfg: C.ModelConfig, seed=0, dtype=torch.float32):
    torch.manual_seed(seed)
    return SpotFastLipreader(cfg).to(dtype)


def state_arrays(model):
    """Named state as numpy arrays, in ``state_dict`` order."""
    return {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}


def save_checkpoint(path, model, meta=None):
    cfg = {"model": dataclasses.asdict(model.cfg), "meta": meta or {}}
    save_archive(path, state_arrays(model), cfg)


def load_checkpoint(path, dtype=None):
    """Return ``(model, meta)``; the model is rebuilt from the echoed config."""
    tensors, cfg = load_archive(path)
    model = SpotFastLipreader(C.model_config_from_dict(cfg["model"]))
    first = next(v for v in tensors.values() if np.issubdtype(v.dtype, np.floating))
    model.to(dtype or torch.from_numpy(first).dtype)
    model.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
    return model, cfg["meta"]
