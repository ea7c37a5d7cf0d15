"""Triple collaborative attention: channel, spatial and pixel attention.

The three attentions are wired sequentially with one outer residual::

    y = x + PA(SA(x * CA(x)))

Spatial attention uses large depthwise kernels decomposed into 1-D strips
along the three volume axes.  The 5-wide branch is a full 5x5x5 depthwise
kernel factored as three sequential strips; every longer length (7, 11, 21)
contributes three parallel single-axis strips.
"""
from __future__ import annotations

import numpy as np

from . import functional as F
from .modules import Conv3d, Module, _param
from .tensor import Tensor, add, broadcast_mul

STRIP_LENGTHS = (7, 11, 21)


class ChannelAttention(Module):
    """Shared two-layer 1x1x1 MLP over average- and max-pooled descriptors."""

    def __init__(self, channels: int, reduction: int = 4, rng=None, dtype=np.float32):
        hidden = max(1, channels // reduction)
        self.fc1 = Conv3d(channels, hidden, 1, rng=rng, dtype=dtype)
        self.fc2 = Conv3d(hidden, channels, 1, rng=rng, dtype=dtype)

    def mlp(self, v: Tensor) -> Tensor:
        return self.fc2(F.relu(self.fc1(v)))

    def forward(self, x: Tensor) -> Tensor:
        avg = self.mlp(F.global_pool(x, "avg"))
        mx = self.mlp(F.global_pool(x, "max"))
        return F.sigmoid(add(avg, mx))


class SpatialAttention(Module):
    def __init__(self, channels: int, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)

        def strip(k):
            # unit centre tap plus small noise keeps early training near identity
            w = rng.standard_normal((channels, k)) * (1.0 / k)
            w[:, k // 2] += 1.0
            return _param(w, dtype)

        self.square = [strip(5) for _ in range(3)]
        self.strips = [strip(k) for k in STRIP_LENGTHS for _ in range(3)]
        self.fuse = Conv3d(channels, channels, 1, rng=rng, dtype=dtype)
        self.fuse.weight.data /= self.n_branches

    def branch_outputs(self, x: Tensor) -> list[Tensor]:
        sq = x
        for w, axis in zip(self.square, "DHW"):
            sq = F.depthwise_strip_conv3d(sq, w, axis)
        outs = [sq]
        for i, w in enumerate(self.strips):
            outs.append(F.depthwise_strip_conv3d(x, w, "DHW"[i % 3]))
        return outs

    @property
    def n_branches(self) -> int:
        return 1 + len(self.strips)

    def forward(self, x: Tensor) -> Tensor:
        outs = self.branch_outputs(x)
        total = outs[0]
        for o in outs[1:]:
            total = add(total, o)
        return self.fuse(total)


class PixelAttention(Module):
    def __init__(self, channels: int, reduction: int = 4, rng=None, dtype=np.float32):
        hidden = max(1, channels // reduction)
        self.conv1 = Conv3d(channels, hidden, 1, rng=rng, dtype=dtype)
        self.conv2 = Conv3d(hidden, 1, 3, rng=rng, dtype=dtype)

    def attention_map(self, x: Tensor) -> Tensor:
        return F.sigmoid(self.conv2(F.relu(self.conv1(x))))

    def forward(self, x: Tensor) -> Tensor:
        return broadcast_mul(x, self.attention_map(x))


class TCA(Module):
    def __init__(self, channels: int, reduction: int = 4, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.channels = channels
        self.ca = ChannelAttention(channels, reduction, rng, dtype)
        self.sa = SpatialAttention(channels, rng, dtype)
        self.pa = PixelAttention(channels, reduction, rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return tca_forward(x, self)


def channel_attention(x: Tensor, p: ChannelAttention) -> Tensor:
    return p(x)


def spatial_attention(x: Tensor, p: SpatialAttention) -> Tensor:
    return p(x)


def pixel_attention(x: Tensor, p: PixelAttention) -> Tensor:
    return p(x)


def tca_forward(x: Tensor, p: TCA) -> Tensor:
    gated = broadcast_mul(x, p.ca(x))
    return add(x, p.pa(p.sa(gated)))
