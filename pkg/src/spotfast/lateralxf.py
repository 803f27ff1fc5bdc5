"""Memory-augmented lateral transformers.

One pre-norm encoder per pathway, run layer by layer in lockstep. After
every layer but the last, the spot stream receives a residual update from
the fast stream. The layer before the last passes its feed-forward output
through a product-key memory with a skip connection.

Positional encodings use absolute frame indices: the spot window starts at
``offset`` frames into the clip, so equal frames get equal encodings in both
pathways.
"""
import math

import torch
import torch.nn.functional as F
from torch import nn

from .config import MemoryConfig, TransformerConfig
from .pkmem import ProductKeyMemory


def sinusoid_table(positions, dim):
    """Standard sin/cos encodings for integer ``positions`` -> [len, dim]."""
    pos = torch.as_tensor(positions, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    pe = torch.zeros(len(pos), dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)[:, : dim // 2]
    return pe


class PositionalEncoding(nn.Module):
    def __init__(self, dim, dropout=0.1, max_len=512):
        super().__init__()
        self.dropout = nn.Dropout(dropout)
        self.register_buffer("table", sinusoid_table(range(max_len), dim).float(), persistent=False)

    def forward(self, x, offset=0):
        """x: [B, T, dim]."""
        if offset < 0:
            raise ValueError("offset must be >= 0")
        pe = self.table[offset:offset + x.shape[1]].to(x.dtype)
        return self.dropout(x + pe)


def positional_encode(seq, offset=0, dropout=0.0, training=False):
    """Add encodings for positions ``offset .. offset+T-1`` to ``seq`` [..., T, dim]."""
    pe = sinusoid_table(range(offset, offset + seq.shape[-2]), seq.shape[-1]).to(seq)
    return F.dropout(seq + pe, dropout, training)


class LateralConnect(nn.Module):
    """Residual fast -> spot update.

    fast is projected pointwise, pooled in time to the spot length,
    concatenated with spot, then linear -> batchnorm -> ReLU back to the spot
    width and added to spot.
    """

    def __init__(self, d_fast, d_spot):
        super().__init__()
        self.proj = nn.Linear(d_fast, d_spot)
        self.fuse = nn.Linear(2 * d_spot, d_spot)
        self.bn = nn.BatchNorm1d(d_spot)

    def forward(self, fast, spot):
        lateral = self.proj(fast)                                        # [B, Tf, d]
        if lateral.shape[1] != spot.shape[1]:
            lateral = F.adaptive_avg_pool1d(lateral.transpose(1, 2), spot.shape[1]).transpose(1, 2)
        h = self.fuse(torch.cat([spot, lateral], dim=-1))
        h = self.bn(h.transpose(1, 2)).transpose(1, 2)
        return spot + F.relu(h)


def lateral_connect(fast_hidden, spot_hidden, module: LateralConnect):
    return module(fast_hidden, spot_hidden)


class EncoderLayer(nn.Module):
    """Pre-norm encoder layer; optional memory on the feed-forward output."""

    def __init__(self, dim, heads, ff_dim, dropout=0.1, memory=None):
        super().__init__()
        self.self_attn = nn.MultiheadAttention(dim, heads, dropout=dropout, batch_first=True)
        self.linear1 = nn.Linear(dim, ff_dim)
        self.linear2 = nn.Linear(ff_dim, dim)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.dropout = nn.Dropout(dropout)
        self.dropout1 = nn.Dropout(dropout)
        self.dropout2 = nn.Dropout(dropout)
        self.memory = memory

    def feed_forward(self, x):
        out = self.linear2(self.dropout(F.relu(self.linear1(self.norm2(x)))))
        if self.memory is not None:
            out = out + self.memory(out)
        return out

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.dropout1(self.self_attn(h, h, h, need_weights=False)[0])
        return x + self.dropout2(self.feed_forward(x))


def _memory(mcfg: MemoryConfig, dim, n_keys):
    return ProductKeyMemory(dim, dim, n_keys, mcfg.heads, mcfg.key_dim, mcfg.k,
                            mcfg.value_dropout, mcfg.query_batchnorm)


class LateralTransformer(nn.Module):
    """Two encoders (spot, fast) with fast -> spot lateral connections.

    Inputs are time-major [B, T, C] feature sequences at backbone width;
    they are projected to ``model_dim``, encoded, projected back and added
    to the input. The output projections start at zero, so a freshly built
    transformer passes backbone features through unchanged.
    """

    def __init__(self, c_spot, c_fast, cfg: TransformerConfig, mcfg: MemoryConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        d = cfg.model_dim
        self.spot_in = nn.Linear(c_spot, d)
        self.fast_in = nn.Linear(c_fast, d)
        self.pe = PositionalEncoding(d, cfg.pe_dropout)
        mem_at = cfg.memory_layer - 1
        self.spot_layers = nn.ModuleList(
            EncoderLayer(d, cfg.attn_heads, cfg.ff_dim, cfg.dropout,
                         _memory(mcfg, d, mcfg.n_keys_spot) if (mcfg.enabled and i == mem_at) else None)
            for i in range(cfg.layers))
        self.fast_layers = nn.ModuleList(
            EncoderLayer(d, cfg.attn_heads, cfg.ff_dim, cfg.dropout,
                         _memory(mcfg, d, mcfg.n_keys_fast) if (mcfg.enabled and i == mem_at) else None)
            for i in range(cfg.layers))
        self.laterals = nn.ModuleList(LateralConnect(d, d) for _ in range(cfg.layers - 1))
        self.spot_norm = nn.LayerNorm(d)
        self.fast_norm = nn.LayerNorm(d)
        self.spot_out = nn.Linear(d, c_spot)
        self.fast_out = nn.Linear(d, c_fast)
        for lin in (self.spot_out, self.fast_out):
            nn.init.zeros_(lin.weight)
            nn.init.zeros_(lin.bias)

    def encode(self, spot, fast, offset, hidden=None):
        """Run both encoders on model-width sequences [B, T, d].

        ``hidden``, when a list, collects ``(spot, fast)`` after every layer.
        """
        spot = self.pe(spot, offset)
        fast = self.pe(fast, 0)
        last = len(self.spot_layers) - 1
        for i, (s_layer, f_layer) in enumerate(zip(self.spot_layers, self.fast_layers)):
            spot = s_layer(spot)
            fast = f_layer(fast)
            if hidden is not None:
                hidden.append((spot, fast))
            if i < last:
                spot = self.laterals[i](fast, spot)
        return self.spot_norm(spot), self.fast_norm(fast)

    def forward(self, spot, fast, offset):
        s, f = self.encode(self.spot_in(spot), self.fast_in(fast), offset)
        return spot + self.spot_out(s), fast + self.fast_out(f)

    def memories(self):
        return [layer.memory for layer in (*self.spot_layers, *self.fast_layers) if layer.memory is not None]


def encode(spot_feats, fast_feats, xf: LateralTransformer, offset):
    return xf(spot_feats, fast_feats, offset)
