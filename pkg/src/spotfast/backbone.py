"""Two-pathway 3D CNN front-end with fast-to-spot lateral fusion.

The spot pathway sees the centered temporal window, the fast pathway sees
every frame. Neither pathway downsamples in time. After the stem and after
every residual stage except the last, fast features are pooled in time to
the spot length, widened by a temporal conv and concatenated onto the spot
features.

The body is a plain residual 3D CNN whose widths, depths and strides come
from :class:`~spotfast.config.BackboneConfig`; the full-scale
preset gives 2048/256 output widths.
"""
import torch
import torch.nn.functional as F
from torch import nn

from .config import BackboneConfig
from .windowing import extract_window


def adaptive_avg_pool_time(x, target_t):
    """Average ``x`` [B, C, T, H, W] into ``target_t`` temporal bins.

    Bin t covers input steps ``[floor(t*T/target_t), ceil((t+1)*T/target_t))``.
    """
    if target_t < 1:
        raise ValueError("target_t must be >= 1")
    if x.shape[2] == target_t:
        return x
    return F.adaptive_avg_pool3d(x, (target_t, x.shape[3], x.shape[4]))


def spatial_pool(x):
    """1x4x4 average pooling with stride 1."""
    if x.shape[3] < 4 or x.shape[4] < 4:
        raise ValueError(f"spatial size {tuple(x.shape[3:])} smaller than the 4x4 kernel")
    return F.avg_pool3d(x, kernel_size=(1, 4, 4), stride=1)


class ResBlock3d(nn.Module):
    def __init__(self, c_in, c_out, stride=1, kt=3):
        super().__init__()
        self.conv1 = nn.Conv3d(c_in, c_out, (kt, 3, 3), (1, stride, stride), (kt // 2, 1, 1), bias=False)
        self.bn1 = nn.BatchNorm3d(c_out)
        self.conv2 = nn.Conv3d(c_out, c_out, (1, 3, 3), 1, (0, 1, 1), bias=False)
        self.bn2 = nn.BatchNorm3d(c_out)
        self.shortcut = None
        if stride != 1 or c_in != c_out:
            self.shortcut = nn.Sequential(
                nn.Conv3d(c_in, c_out, 1, (1, stride, stride), bias=False),
                nn.BatchNorm3d(c_out),
            )

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        skip = x if self.shortcut is None else self.shortcut(x)
        return F.relu(out + skip)


def _stem(c_in, c_out, kernel, stride, pool):
    kt, kh, kw = kernel
    layers = [
        nn.Conv3d(c_in, c_out, (kt, kh, kw), (1, stride, stride), (kt // 2, kh // 2, kw // 2), bias=False),
        nn.BatchNorm3d(c_out),
        nn.ReLU(inplace=True),
    ]
    if pool:
        layers.append(nn.MaxPool3d((1, 3, 3), (1, 2, 2), (0, 1, 1)))
    return nn.Sequential(*layers)


def _stage(c_in, c_out, blocks, stride, kt):
    mods = [ResBlock3d(c_in, c_out, stride, kt)]
    mods += [ResBlock3d(c_out, c_out, 1, kt) for _ in range(blocks - 1)]
    return nn.Sequential(*mods)


class LateralFuse(nn.Module):
    """Fast -> spot fusion: time pooling, (k,1,1) conv to beta*C_fast, concat."""

    def __init__(self, c_fast, beta=2, kernel=5):
        super().__init__()
        self.conv = nn.Conv3d(c_fast, beta * c_fast, (kernel, 1, 1), 1, (kernel // 2, 0, 0), bias=False)

    def forward(self, fast, spot):
        if fast.shape[3:] != spot.shape[3:]:
            raise ValueError(f"spatial mismatch: fast {tuple(fast.shape[3:])} vs spot {tuple(spot.shape[3:])}")
        lateral = self.conv(adaptive_avg_pool_time(fast, spot.shape[2]))
        return torch.cat([spot, lateral], dim=1)


def lateral_fuse(fast, spot, fuse: LateralFuse):
    return fuse(fast, spot)


class SpotFast(nn.Module):
    """Returns ``(spot, fast)`` feature maps [B, C, T, H', W']."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        cs, cf = cfg.stage_channels_spot, cfg.stage_channels_fast
        beta = cfg.lateral_beta
        stem_s, *stage_s = cfg.spatial_strides
        # spot stem sees a short window: no temporal extent
        self.spot_stem = _stem(cfg.in_channels, cs[0], [1] + cfg.stem_kernel[1:], stem_s, cfg.stem_pool)
        self.fast_stem = _stem(cfg.in_channels, cf[0], cfg.stem_kernel, stem_s, cfg.stem_pool)
        self.spot_stages = nn.ModuleList()
        self.fast_stages = nn.ModuleList()
        self.fuse = nn.ModuleList()
        n = len(cfg.blocks_per_stage)
        for i in range(n):
            self.fuse.append(LateralFuse(cf[i], beta, cfg.fusion_kernel))
            self.spot_stages.append(_stage(cs[i] + beta * cf[i], cs[i + 1], cfg.blocks_per_stage[i],
                                           stage_s[i], cfg.temporal_kernel))
            self.fast_stages.append(_stage(cf[i], cf[i + 1], cfg.blocks_per_stage[i],
                                           stage_s[i], cfg.temporal_kernel))

    def forward(self, window_clip, full_clip):
        self._check(window_clip, full_clip)
        spot = self.spot_stem(window_clip)
        fast = self.fast_stem(full_clip)
        for fuse, s_stage, f_stage in zip(self.fuse, self.spot_stages, self.fast_stages):
            spot = fuse(fast, spot)
            spot = s_stage(spot)
            fast = f_stage(fast)
        return spot, fast

    def forward_clip(self, full_clip):
        return self(extract_window(full_clip, self.cfg.window_size, axis=2), full_clip)

    def _check(self, window_clip, full_clip):
        cfg = self.cfg
        want_s = (cfg.in_channels, cfg.window_size, cfg.input_size, cfg.input_size)
        want_f = (cfg.in_channels, cfg.num_frames, cfg.input_size, cfg.input_size)
        if tuple(window_clip.shape[1:]) != want_s or tuple(full_clip.shape[1:]) != want_f:
            raise ValueError(f"input shapes {tuple(window_clip.shape)}, {tuple(full_clip.shape)} "
                             f"do not match config {want_s}, {want_f}")
        if window_clip.shape[0] != full_clip.shape[0]:
            raise ValueError("batch sizes differ between pathways")


def spotfast_forward(window_clip, full_clip, model: SpotFast):
    return model(window_clip, full_clip)


def _conv_len(n, k, s, p):
    return (n + 2 * p - k) // s + 1


def output_shapes(cfg: BackboneConfig, batch=1):
    """Shape arithmetic for ``SpotFast(cfg)`` without building tensors."""
    side = cfg.input_size
    kh = cfg.stem_kernel[1]
    side = _conv_len(side, kh, cfg.spatial_strides[0], kh // 2)
    if cfg.stem_pool:
        side = _conv_len(side, 3, 2, 1)
    for s in cfg.spatial_strides[1:]:
        side = _conv_len(side, 3, s, 1)
    spot = (batch, cfg.c_spot, cfg.window_size, side, side)
    fast = (batch, cfg.c_fast, cfg.num_frames, side, side)
    return spot, fast
