"""
Choosing temporal windows from word boundaries
==============================================

The spot pathway sees only a centred window of the clip. Its length comes
from the spread of word durations: mean, mean + std and mean + 2 std,
rounded up to odd frame counts.
"""
import tempfile

import numpy as np

from spotfast.data import SyntheticSpec, boundary_durations, generate_synthetic_dataset
from spotfast.windowing import (BoundaryStats, boundary_stats, candidate_windows, extract_window,
                                window_bounds)

# %%
# Synthetic clips store the word boundary in their header, so durations are
# read back without decoding any frames.
root = tempfile.mkdtemp()
generate_synthetic_dataset(SyntheticSpec(4, 25, 29, 32, 32, seed=1), root)
durations = boundary_durations(root, "train")
stats = boundary_stats(durations)
print(f"{stats.count} clips, mean {stats.mean:.2f}, std {stats.std:.2f}")
print("windows:", candidate_windows(stats))

# %%
# The full-scale statistics (mean 10.59 frames, std 3.2) give the 15/19/23 grid.
print(candidate_windows(BoundaryStats(10.59, 3.2, 1)))

# %%
# A window is a contiguous slice centred on the middle frame.
frames = np.arange(29)
for w in (7, 15, 23):
    lo, hi = window_bounds(29, w)
    print(w, (lo, hi), extract_window(frames, w)[[0, -1]])
