"""
Exact top-k over a product key set
==================================

Each full key is a pair of sub-keys, and its score is the sum of the two
halves' scores. Searching the n best of each half and then the n x n grid
finds the exact top-k without scoring all n^2 keys.
"""
import itertools

import numpy as np
import torch

from spotfast.pkmem import ProductKeyMemory, memory_usage_stats, topk_product_keys

rng = np.random.default_rng(0)
n, half, k = 16, 8, 5
q = torch.from_numpy(rng.normal(size=2 * half))
sub1 = torch.from_numpy(rng.normal(size=(n, half)))
sub2 = torch.from_numpy(rng.normal(size=(n, half)))

scores, idx = topk_product_keys(q, sub1, sub2, k)
print("factorized:", idx.tolist())

# %%
# Scoring every pair agrees.
full = {i * n + j: float(q[:half] @ sub1[i] + q[half:] @ sub2[j]) for i, j in itertools.product(range(n), range(n))}
print("exhaustive:", sorted(full, key=lambda f: (-full[f], f))[:k])

# %%
# The memory layer reads a softmax-weighted sum of the selected value rows
# per head. Rows never selected receive no gradient.
mem = ProductKeyMemory(32, 32, n_keys=8, heads=2, key_dim=16, k=4, value_dropout=0.0)
x = torch.randn(3, 32)
mem(x).pow(2).sum().backward()
hist = memory_usage_stats(x, mem)
touched = mem.values.weight.grad.abs().sum(1) > 0
print("rows selected:", int((hist > 0).sum()), "rows with gradient:", int(touched.sum()))
