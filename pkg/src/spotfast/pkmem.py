"""Product-key memory: exact top-k over a factorized key set.

A full key is a pair (i, j) of sub-keys from two tables of size n; its
score against a query split into halves (q1, q2) is
``q1 . sub1[i] + q2 . sub2[j]`` and its flat index is ``i * n + j``.
The best k full keys always have both halves among the best k of their own
half, so searching the k x k candidate grid is exact. Ties are resolved
towards the smaller flat index, consistently in the halves and the grid.
"""
import json
import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn


def _stable_topk(scores, k):
    """Top-k along the last dim, ties resolved towards the lower position."""
    order = torch.sort(scores, dim=-1, descending=True, stable=True).indices[..., :k]
    return scores.gather(-1, order), order


def topk_product_keys(q, sub1, sub2, k):
    """Exact top-k full keys for queries ``q`` [..., d] against sub-key tables [n, d/2].

    Returns ``(scores, indices)``, both [..., k], best first.
    """
    n = sub1.shape[0]
    if k > n * n:
        raise ValueError(f"k={k} exceeds the {n * n} available keys")
    half = q.shape[-1] // 2
    q1, q2 = q[..., :half], q[..., half:]
    kk = min(k, n)
    s1, i1 = _stable_topk(q1 @ sub1.transpose(-1, -2), kk)     # [..., kk]
    s2, i2 = _stable_topk(q2 @ sub2.transpose(-1, -2), kk)
    grid = (s1.unsqueeze(-1) + s2.unsqueeze(-2)).flatten(-2)    # [..., kk*kk]
    flat = (i1.unsqueeze(-1) * n + i2.unsqueeze(-2)).flatten(-2)
    # order candidates by flat index first so the stable score sort breaks
    # ties towards smaller flat indices
    by_index = torch.argsort(flat, dim=-1, stable=True)
    grid, flat = grid.gather(-1, by_index), flat.gather(-1, by_index)
    scores, pos = _stable_topk(grid, k)
    return scores, flat.gather(-1, pos)


class ProductKeyMemory(nn.Module):
    """Multi-head product-key memory with a shared value table.

    Each head has its own query network (linear + optional batchnorm) and
    its own pair of sub-key tables; the n^2 values are shared. Head outputs
    (softmax-weighted sums of the k selected values) are summed, dropped out
    in training, and layer-normalized.
    """

    def __init__(self, input_dim, value_dim, n_keys, heads=4, key_dim=128, k=32,
                 value_dropout=0.1, query_batchnorm=True, layernorm=True):
        super().__init__()
        if key_dim % 2:
            raise ValueError("key_dim must be even")
        if not 1 <= k <= n_keys * n_keys:
            raise ValueError("need 1 <= k <= n_keys^2")
        self.input_dim, self.value_dim = input_dim, value_dim
        self.n_keys, self.heads, self.key_dim, self.k = n_keys, heads, key_dim, k
        self.value_dropout = value_dropout
        self.query_nets = nn.ModuleList(
            nn.Sequential(nn.Linear(input_dim, key_dim),
                          nn.BatchNorm1d(key_dim) if query_batchnorm else nn.Identity())
            for _ in range(heads))
        bound = 1 / math.sqrt(key_dim // 2)
        self.sub_keys = nn.Parameter(torch.empty(heads, 2, n_keys, key_dim // 2).uniform_(-bound, bound))
        self.values = nn.Embedding(n_keys * n_keys, value_dim)
        nn.init.normal_(self.values.weight, std=value_dim ** -0.5)
        self.norm = nn.LayerNorm(value_dim) if layernorm else nn.Identity()

    @property
    def size(self):
        return self.n_keys * self.n_keys

    def queries(self, x):
        """Per-head queries [heads, N, key_dim] for inputs [N, input_dim]."""
        return torch.stack([net(x) for net in self.query_nets])

    def lookup(self, x):
        """``(scores, indices)`` [heads, N, k] for inputs [N, input_dim]."""
        q = self.queries(x)
        out = [topk_product_keys(q[h], self.sub_keys[h, 0], self.sub_keys[h, 1], self.k)
               for h in range(self.heads)]
        return torch.stack([s for s, _ in out]), torch.stack([i for _, i in out])

    def forward(self, x):
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"expected input width {self.input_dim}, got {x.shape[-1]}")
        lead = x.shape[:-1]
        x = x.reshape(-1, self.input_dim)
        scores, idx = self.lookup(x)
        weights = F.softmax(scores, dim=-1)                             # [h, N, k]
        out = (weights.unsqueeze(-1) * self.values(idx)).sum(dim=(0, 2))  # [N, v]
        out = F.dropout(out, self.value_dropout, self.training)
        return self.norm(out).reshape(*lead, self.value_dim)


def memory_read(x, mem: ProductKeyMemory):
    """Read ``mem`` for inputs [B, input_dim]; train/eval follows ``mem.training``."""
    return mem(x)


@torch.no_grad()
def memory_usage_stats(x, mem: ProductKeyMemory):
    """Selection count per value row; totals N * heads * k."""
    x = x.reshape(-1, mem.input_dim)
    _, idx = mem.lookup(x)
    return np.bincount(idx.reshape(-1).cpu().numpy(), minlength=mem.size)


def usage_to_json(hist):
    hist = np.asarray(hist)
    return json.dumps({"size": int(hist.size), "total": int(hist.sum()),
                       "used_rows": int((hist > 0).sum()), "counts": hist.tolist()})
