"""Word-boundary statistics and centered temporal windows."""
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BoundaryStats:
    mean: float
    std: float
    count: int

    def __post_init__(self):
        if self.std < 0 or self.count < 1:
            raise ValueError("need std >= 0 and count >= 1")


def boundary_stats(durations) -> BoundaryStats:
    """Mean and population standard deviation of word durations (frames)."""
    d = np.asarray(list(durations), dtype=np.float64)
    if d.size == 0:
        raise ValueError("no durations given")
    if np.any(d <= 0):
        raise ValueError("durations must be positive")
    return BoundaryStats(float(d.mean()), float(d.std()), int(d.size))


def candidate_windows(stats: BoundaryStats, num_frames=29):
    """Windows at mean + {1,2,3} std (the 68-95-99.7 bands).

    The mean is rounded half-up and the std rounded up before use; an even
    window is bumped to the next odd size so it has a center frame, and any
    window is capped at the largest odd size that fits in ``num_frames``.
    """
    mu = math.floor(stats.mean + 0.5)
    sigma = math.ceil(stats.std)
    cap = num_frames if num_frames % 2 else num_frames - 1
    out = []
    for m in (1, 2, 3):
        w = mu + m * sigma
        if w % 2 == 0:
            w += 1
        out.append(min(w, cap))
    return sorted(out)


def window_bounds(num_frames, w):
    """Inclusive ``(first, last)`` frame indices of the centered window."""
    if w % 2 == 0:
        raise ValueError(f"window size must be odd, got {w}")
    if not 1 <= w <= num_frames:
        raise ValueError(f"window size {w} does not fit in {num_frames} frames")
    center = num_frames // 2
    half = (w - 1) // 2
    first = center - half
    if first < 0 or center + half >= num_frames:
        raise ValueError(f"window {w} centered at {center} leaves the clip")
    return first, center + half


def window_offset(num_frames, w):
    """Absolute frame index of the window's first frame."""
    return window_bounds(num_frames, w)[0]


def extract_window(frames, w, axis=0):
    """Slice the odd-length window centered at frame ``T // 2`` along ``axis``.

    Works for numpy arrays and torch tensors alike.
    """
    first, last = window_bounds(frames.shape[axis], w)
    index = [slice(None)] * frames.ndim
    index[axis] = slice(first, last + 1)
    return frames[tuple(index)]
