"""Dual 1D temporal-convolution back-end."""
import torch
from torch import nn


class TemporalConvStack(nn.Module):
    """Two rounds of conv(k, stride 2) -> BN -> ReLU -> maxpool(2, 2); C -> 2C -> 4C.

    Convs pad by ``k // 2``. Pooling uses floor mode; a length-1 sequence
    is passed through unpooled so short windows still produce one step.
    """

    def __init__(self, channels, kernel):
        super().__init__()
        self.kernel = kernel
        self.conv1 = nn.Conv1d(channels, 2 * channels, kernel, 2, kernel // 2, bias=False)
        self.bn1 = nn.BatchNorm1d(2 * channels)
        self.conv2 = nn.Conv1d(2 * channels, 4 * channels, kernel, 2, kernel // 2, bias=False)
        self.bn2 = nn.BatchNorm1d(4 * channels)
        self.pool = nn.MaxPool1d(2, 2)

    def _pool(self, x):
        return x if x.shape[-1] < 2 else self.pool(x)

    def forward(self, x):
        if x.shape[-1] < 1:
            raise ValueError("empty time axis")
        x = self._pool(torch.relu(self.bn1(self.conv1(x))))
        return self._pool(torch.relu(self.bn2(self.conv2(x))))


def stack_length(t, kernel):
    """Output time length of :class:`TemporalConvStack` for input length ``t``."""
    if t < 1:
        raise ValueError("T too short for the temporal conv stack")
    for _ in range(2):
        t = (t + 2 * (kernel // 2) - kernel) // 2 + 1
        if t < 1:
            raise ValueError("T too short for the temporal conv stack")
        t = t if t < 2 else t // 2
    return t


def temporal_conv_stack(x, stack: TemporalConvStack):
    return stack(x)


class DualTCHead(nn.Module):
    """Per-pathway temporal convs, time average, concat, linear to logits."""

    def __init__(self, c_spot, c_fast, num_classes, kernels=(3, 5)):
        super().__init__()
        self.spot = TemporalConvStack(c_spot, kernels[0])
        self.fast = TemporalConvStack(c_fast, kernels[1])
        self.num_classes = num_classes
        self.classifier = nn.Linear(4 * (c_spot + c_fast), num_classes)

    def fuse_and_classify(self, spot_vec, fast_vec):
        logits = self.classifier(torch.cat([spot_vec, fast_vec], dim=1))
        if logits.shape[1] != self.num_classes:
            raise ValueError("class count mismatch")
        return logits

    def forward(self, spot, fast):
        """spot [B, C_s, T_s], fast [B, C_f, T_f] -> logits [B, K]."""
        s = self.spot(spot).mean(dim=-1)
        f = self.fast(fast).mean(dim=-1)
        return self.fuse_and_classify(s, f)


def fuse_and_classify(spot_vec, fast_vec, head: DualTCHead):
    return head.fuse_and_classify(spot_vec, fast_vec)
