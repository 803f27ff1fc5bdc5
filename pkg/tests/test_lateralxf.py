import math

import pytest
import torch
from torch import nn

from spotfast import config as C
from spotfast.lateralxf import (LateralConnect, LateralTransformer, PositionalEncoding, encode,
                                lateral_connect, positional_encode, sinusoid_table)
from spotfast.windowing import window_offset


def test_offset_for_23_in_29():
    assert window_offset(29, 23) == 3


def test_spot_and_fast_encodings_align():
    d = 16
    spot = positional_encode(torch.zeros(23, d, dtype=torch.float64), offset=3)
    fast = positional_encode(torch.zeros(29, d, dtype=torch.float64), offset=0)
    torch.testing.assert_close(spot[0], fast[3], rtol=0, atol=0)
    torch.testing.assert_close(spot, fast[3:26], rtol=0, atol=0)


def test_offset_zero_is_standard_table():
    d, T = 8, 5
    pe = positional_encode(torch.zeros(T, d, dtype=torch.float64))
    for p in range(T):
        for i in range(0, d, 2):
            angle = p / 10000 ** (i / d)
            assert pe[p, i].item() == pytest.approx(math.sin(angle), abs=1e-12)
            assert pe[p, i + 1].item() == pytest.approx(math.cos(angle), abs=1e-12)


def test_module_and_function_agree():
    pe = PositionalEncoding(6, dropout=0.1).eval()
    x = torch.randn(2, 4, 6)
    torch.testing.assert_close(pe(x, offset=2), positional_encode(x, offset=2).float())
    with pytest.raises(ValueError):
        pe(x, offset=-1)


def test_pe_dropout_only_in_training():
    pe = PositionalEncoding(6, dropout=0.5)
    x = torch.randn(2, 4, 6)
    assert torch.equal(pe.eval()(x), pe.eval()(x))
    torch.manual_seed(0)
    assert not torch.equal(pe.train()(x), pe.train()(x))


def test_odd_dim_table():
    assert sinusoid_table(range(3), 5).shape == (3, 5)


def test_lateral_output_length():
    lat = LateralConnect(6, 8)
    for tf in (7, 13, 29):
        assert lateral_connect(torch.randn(2, tf, 6), torch.randn(2, 7, 8), lat).shape == (2, 7, 8)


def test_lateral_zero_path_depends_only_on_spot():
    lat = LateralConnect(6, 8).eval()
    for lin in (lat.proj, lat.fuse):
        nn.init.zeros_(lin.weight)
        nn.init.zeros_(lin.bias)
    spot = torch.randn(2, 7, 8)
    a = lat(torch.randn(2, 29, 6), spot)
    b = lat(torch.randn(2, 29, 6) * 10, spot)
    assert torch.equal(a, b) and torch.equal(a, spot)


def test_lateral_same_length_skips_pooling():
    lat = LateralConnect(6, 8).eval()
    fast, spot = torch.randn(2, 7, 6), torch.randn(2, 7, 8)
    h = lat.fuse(torch.cat([spot, lat.proj(fast)], -1))
    expected = spot + torch.relu(lat.bn(h.transpose(1, 2)).transpose(1, 2))
    torch.testing.assert_close(lat(fast, spot), expected)


@pytest.fixture
def desk_xf():
    cfg = C.desk_config()
    torch.manual_seed(0)
    return LateralTransformer(64, 16, cfg.model.transformer, cfg.model.memory).double()


def test_encode_shapes_and_finite(desk_xf):
    assert len(desk_xf.spot_layers) == 6 and desk_xf.cfg.memory_layer == 5
    assert [l.memory is not None for l in desk_xf.spot_layers] == [False] * 4 + [True, False]
    for l in desk_xf.spot_out, desk_xf.fast_out:
        nn.init.normal_(l.weight)
    spot = torch.randn(3, 7, 64, dtype=torch.float64, requires_grad=True)
    fast = torch.randn(3, 29, 16, dtype=torch.float64, requires_grad=True)
    s, f = encode(spot, fast, desk_xf, offset=11)
    assert s.shape == spot.shape and f.shape == fast.shape
    (s.sum() + f.sum()).backward()
    assert torch.isfinite(spot.grad).all() and torch.isfinite(fast.grad).all()
    assert all(torch.isfinite(p.grad).all() for p in desk_xf.parameters() if p.grad is not None)


def test_fresh_transformer_passes_features_through(desk_xf):
    spot, fast = torch.randn(2, 7, 64, dtype=torch.float64), torch.randn(2, 29, 16, dtype=torch.float64)
    s, f = desk_xf.eval()(spot, fast, 11)
    assert torch.equal(s, spot) and torch.equal(f, fast)


def _vanilla_from(layers, norm, d, heads, ff):
    layer = nn.TransformerEncoderLayer(d, heads, ff, dropout=0.0, batch_first=True, norm_first=True)
    ref = nn.TransformerEncoder(layer, len(layers), norm=nn.LayerNorm(d), enable_nested_tensor=False).double()
    for mine, theirs in zip(layers, ref.layers):
        state = {k: v for k, v in mine.state_dict().items() if not k.startswith("memory.")}
        theirs.load_state_dict(state)
    ref.norm.load_state_dict(norm.state_dict())
    return ref.eval()


def test_zeroed_laterals_and_memory_reduce_to_vanilla(desk_xf):
    with torch.no_grad():
        for lat in desk_xf.laterals:
            for p in lat.parameters():
                p.zero_()
        for mem in desk_xf.memories():
            for p in mem.parameters():
                p.zero_()
    desk_xf.eval()
    spot = torch.randn(2, 7, 64, dtype=torch.float64)
    fast = torch.randn(2, 29, 64, dtype=torch.float64)
    s, f = desk_xf.encode(spot, fast, offset=11)
    cfg = desk_xf.cfg
    ref_s = _vanilla_from(desk_xf.spot_layers, desk_xf.spot_norm, 64, cfg.attn_heads, cfg.ff_dim)
    ref_f = _vanilla_from(desk_xf.fast_layers, desk_xf.fast_norm, 64, cfg.attn_heads, cfg.ff_dim)
    torch.testing.assert_close(s, ref_s(positional_encode(spot, 11)), atol=1e-5, rtol=0)
    torch.testing.assert_close(f, ref_f(positional_encode(fast, 0)), atol=1e-5, rtol=0)


@pytest.mark.parametrize("train_mode", [False, True])
def test_spot_never_reaches_fast(desk_xf, train_mode):
    desk_xf.train(train_mode)
    fast = torch.randn(2, 29, 64, dtype=torch.float64)
    spot = torch.randn(2, 7, 64, dtype=torch.float64)
    other = spot + torch.randn_like(spot)
    torch.manual_seed(5)
    _, f1 = desk_xf.encode(spot, fast, 11)
    torch.manual_seed(5)
    _, f2 = desk_xf.encode(other, fast, 11)
    assert torch.equal(f1, f2)


def test_batch_permutation_equivariance(desk_xf):
    desk_xf.eval()
    for l in desk_xf.spot_out, desk_xf.fast_out:
        nn.init.normal_(l.weight)
    spot, fast = torch.randn(4, 7, 64, dtype=torch.float64), torch.randn(4, 29, 16, dtype=torch.float64)
    perm = torch.tensor([2, 0, 3, 1])
    s, f = desk_xf(spot, fast, 11)
    sp, fp = desk_xf(spot[perm], fast[perm], 11)
    torch.testing.assert_close(sp, s[perm])
    torch.testing.assert_close(fp, f[perm])


def test_config_invariants():
    with pytest.raises(C.ConfigError):
        C.TransformerConfig(layers=6, memory_layer=4).validate()
    with pytest.raises(C.ConfigError):
        C.TransformerConfig(model_dim=60, attn_heads=8).validate()
