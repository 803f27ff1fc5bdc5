import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from spotfast import config as C
from spotfast.backbone import (LateralFuse, SpotFast, adaptive_avg_pool_time, lateral_fuse,
                               output_shapes, spatial_pool, spotfast_forward)
from spotfast.windowing import extract_window


def pool_oracle(x, target):
    """Explicit bin loop over the floor/ceil boundaries."""
    T = x.shape[2]
    out = []
    for t in range(target):
        lo, hi = math.floor(t * T / target), math.ceil((t + 1) * T / target)
        out.append(x[:, :, lo:hi].mean(dim=2))
    return torch.stack(out, dim=2)


def test_pool_first_bin_29_to_23():
    # bin 0 covers [floor(0), ceil(29/23)) = [0, 2)
    x = torch.arange(29, dtype=torch.float64).reshape(1, 1, 29, 1, 1)
    assert adaptive_avg_pool_time(x, 23)[0, 0, 0, 0, 0] == pytest.approx(0.5)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40))
def test_pool_matches_oracle(T, target):
    x = torch.randn(2, 3, T, 2, 2, dtype=torch.float64)
    torch.testing.assert_close(adaptive_avg_pool_time(x, target), pool_oracle(x, target))


def test_pool_examples():
    x = torch.randn(1, 2, 7, 3, 3)
    assert adaptive_avg_pool_time(x, 7) is x
    y = torch.tensor([1.0, 2, 3, 4]).reshape(1, 1, 4, 1, 1)
    assert adaptive_avg_pool_time(y, 2).ravel().tolist() == [1.5, 3.5]
    with pytest.raises(ValueError):
        adaptive_avg_pool_time(y, 0)


@pytest.mark.parametrize("T,target", [(29, 29), (28, 7), (24, 8), (30, 5)])
def test_pool_preserves_mean_when_dividing(T, target):
    x = torch.randn(2, 3, T, 4, 4, dtype=torch.float64)
    out = adaptive_avg_pool_time(x, target)
    assert torch.allclose(out.mean(dim=2), x.mean(dim=2), atol=1e-6)


def test_lateral_fuse_widths_and_time():
    fuse = LateralFuse(8, beta=2)
    spot = torch.randn(2, 64, 7, 5, 5)
    for t_fast in (7, 13, 29):
        out = lateral_fuse(torch.randn(2, 8, t_fast, 5, 5), spot, fuse)
        assert out.shape == (2, 80, 7, 5, 5)


def test_lateral_fuse_zero_conv_keeps_spot():
    fuse = LateralFuse(8)
    torch.nn.init.zeros_(fuse.conv.weight)
    spot = torch.randn(2, 64, 7, 5, 5)
    out = fuse(torch.randn(2, 8, 29, 5, 5), spot)
    assert torch.equal(out[:, :64], spot) and not out[:, 64:].any()


def test_lateral_fuse_spatial_mismatch():
    with pytest.raises(ValueError, match="spatial"):
        LateralFuse(8)(torch.randn(1, 8, 29, 4, 4), torch.randn(1, 16, 7, 5, 5))


def test_spatial_pool_examples():
    x = torch.full((1, 2, 3, 6, 6), 2.5)
    out = spatial_pool(x)
    assert out.shape == (1, 2, 3, 3, 3) and torch.all(out == 2.5)
    block = torch.arange(1, 17, dtype=torch.float64).reshape(1, 1, 1, 4, 4)
    assert spatial_pool(block).shape == (1, 1, 1, 1, 1)
    assert spatial_pool(block).item() == 8.5
    with pytest.raises(ValueError):
        spatial_pool(torch.zeros(1, 1, 1, 3, 8))


@pytest.fixture(scope="module")
def desk_net():
    cfg = C.desk_backbone(window_size=7)
    torch.manual_seed(0)
    return SpotFast(cfg).double().eval()


def _inputs(cfg, B=2, seed=0):
    g = torch.Generator().manual_seed(seed)
    full = torch.randn(B, 3, 29, cfg.input_size, cfg.input_size, generator=g, dtype=torch.float64)
    return extract_window(full, cfg.window_size, axis=2), full


def test_desk_shapes_and_finite(desk_net):
    cfg = desk_net.cfg
    w, full = _inputs(cfg)
    spot, fast = spotfast_forward(w, full, desk_net)
    # 32 -> stem /2 -> 16 -> /2 -> 8 -> /2 -> 4
    assert spot.shape == (2, 64, 7, 4, 4) and fast.shape == (2, 16, 29, 4, 4)
    assert (tuple(spot.shape), tuple(fast.shape)) == output_shapes(cfg, 2)
    assert torch.isfinite(spot).all() and torch.isfinite(fast).all()


@pytest.mark.parametrize("w", [15, 19, 23])
def test_full_scale_shapes_on_meta(w):
    cfg = C.paper_config(window_size=w).model.backbone
    with torch.device("meta"):
        net = SpotFast(cfg)
        full = torch.empty(2, 3, 29, 112, 112)
        spot, fast = net.forward_clip(full)
    assert spot.shape == (2, 2048, w, 4, 4) and fast.shape == (2, 256, 29, 4, 4)
    assert (tuple(spot.shape), tuple(fast.shape)) == output_shapes(cfg, 2)


def test_batch_independence_in_eval(desk_net):
    w, full = _inputs(desk_net.cfg, B=2)
    s2, f2 = desk_net(w, full)
    s1, f1 = desk_net(w[:1], full[:1])
    torch.testing.assert_close(s1[0], s2[0])
    torch.testing.assert_close(f1[0], f2[0])


def test_shape_mismatch_rejected(desk_net):
    w, full = _inputs(desk_net.cfg)
    with pytest.raises(ValueError):
        desk_net(w[:, :, :5], full)
    with pytest.raises(ValueError):
        desk_net(w, full[:, :, :28])


@pytest.mark.parametrize("train_mode", [False, True])
def test_spot_ignores_outside_frames_without_laterals(train_mode):
    cfg = C.desk_backbone(window_size=7)
    torch.manual_seed(1)
    net = SpotFast(cfg).double().train(train_mode)
    for fuse in net.fuse:
        torch.nn.init.zeros_(fuse.conv.weight)
    _, full = _inputs(cfg)
    spot_a, fast_a = net.forward_clip(full)
    perturbed = full.clone()
    perturbed[:, :, :11] += torch.randn_like(perturbed[:, :, :11])
    perturbed[:, :, 18:] -= 3.0
    spot_b, fast_b = net.forward_clip(perturbed)
    assert torch.equal(spot_a, spot_b)
    assert not torch.equal(fast_a, fast_b)


def test_laterals_carry_outside_information(desk_net):
    _, full = _inputs(desk_net.cfg)
    perturbed = full.clone()
    perturbed[:, :, 0] += 5.0
    assert not torch.equal(desk_net.forward_clip(full)[0], desk_net.forward_clip(perturbed)[0])


def test_config_invariants():
    with pytest.raises(C.ConfigError):
        C.desk_backbone(window_size=8).validate()
    bad = C.desk_backbone()
    bad.stage_channels_spot = [16, 32, 40]
    with pytest.raises(C.ConfigError):
        bad.validate()
    full = C.paper_config().model.backbone
    full.window_size = 21
    with pytest.raises(C.ConfigError):
        full.validate()
