"""3-D ResNet style feature extractors with a triple-attention head.

Shape ladder for a ``1 x S^3`` input::

    PFE   conv 7^3/2 -> norm -> relu -> maxpool 3/2   16 x (S/4)^3
    AFE   blocks 16->32 s1, 32->64 s2, 64->128 s2, 128->128 s2   128 x (S/32)^3
    TCA   shape preserving
    pool  global average -> 128-vector
"""
from __future__ import annotations

import numpy as np

from . import functional as F
from .modules import Conv3d, Module, Norm
from .tca import TCA
from .tensor import Tensor, add, reshape

PFE_CHANNELS = 16
AFE_SCHEDULE = ((16, 32, 1), (32, 64, 2), (64, 128, 2), (128, 128, 2))
FEATURE_DIM = AFE_SCHEDULE[-1][1]


class PFE(Module):
    """Primary feature extraction: 7^3 stride-2 conv, instance norm, ReLU, max-pool."""

    def __init__(self, in_ch: int = 1, out_ch: int = PFE_CHANNELS, rng=None, dtype=np.float32):
        self.conv = Conv3d(in_ch, out_ch, 7, stride=2, padding=3, bias=False, rng=rng, dtype=dtype)
        self.norm = Norm(out_ch, "instance", dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return pfe_forward(x, self)


def pfe_forward(x: Tensor, p: PFE) -> Tensor:
    s = x.shape[2:]
    if any(n < 16 or n % 4 for n in s):
        raise ValueError(f"PFE needs spatial extents divisible by 4 and >= 16, got {s}")
    h = F.relu(p.norm(p.conv(x)))
    return F.pool3d(h, "max", 3, 2, padding=1)


class ResBlock(Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1, norm: str = "batch", rng=None, dtype=np.float32):
        self.conv1 = Conv3d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False, rng=rng, dtype=dtype)
        self.norm1 = Norm(out_ch, norm, dtype=dtype)
        self.conv2 = Conv3d(out_ch, out_ch, 3, stride=1, padding=1, bias=False, rng=rng, dtype=dtype)
        self.norm2 = Norm(out_ch, norm, dtype=dtype)
        if stride != 1 or in_ch != out_ch:
            self.down_conv = Conv3d(in_ch, out_ch, 1, stride=stride, padding=0, bias=False, rng=rng, dtype=dtype)
            self.down_norm = Norm(out_ch, norm, dtype=dtype)
        else:
            self.down_conv = self.down_norm = None

    def shortcut(self, x: Tensor) -> Tensor:
        if self.down_conv is None:
            return x
        return self.down_norm(self.down_conv(x))

    def forward(self, x: Tensor) -> Tensor:
        return res_block_forward(x, self)


def res_block_forward(x: Tensor, p: ResBlock) -> Tensor:
    h = F.relu(p.norm1(p.conv1(x)))
    h = p.norm2(p.conv2(h))
    return F.relu(add(h, p.shortcut(x)))


class AFE(Module):
    """Advanced feature extraction: four residual blocks, 16 -> 128 channels."""

    def __init__(self, norm: str = "batch", rng=None, dtype=np.float32):
        self.blocks = [ResBlock(ci, co, s, norm, rng, dtype) for ci, co, s in AFE_SCHEDULE]

    def forward(self, x: Tensor) -> Tensor:
        return afe_forward(x, self)


def afe_forward(x: Tensor, p: AFE) -> Tensor:
    if x.shape[1] != AFE_SCHEDULE[0][0]:
        raise ValueError(f"AFE expects {AFE_SCHEDULE[0][0]} channels, got {x.shape[1]}")
    if any(n % 8 for n in x.shape[2:]):
        raise ValueError(f"AFE needs spatial extents divisible by 8, got {x.shape[2:]}")
    for block in p.blocks:
        x = res_block_forward(x, block)
    return x


def pooled(x: Tensor) -> Tensor:
    """Global average pool flattened to ``N x C``."""
    return reshape(F.global_pool(x, "avg"), x.shape[:2])


class Encoder(Module):
    """Full extractor PFE -> AFE -> TCA -> pooled 128-vector.

    ``use_tca=False`` drops the attention head (ablation).
    """

    def __init__(self, use_tca: bool = True, norm: str = "batch", rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.pfe = PFE(rng=rng, dtype=dtype)
        self.afe = AFE(norm, rng, dtype)
        self.tca = TCA(FEATURE_DIM, rng=rng, dtype=dtype) if use_tca else None

    def head(self, f: Tensor) -> Tensor:
        """AFE -> TCA -> pool on an already extracted PFE map."""
        h = afe_forward(f, self.afe)
        if self.tca is not None:
            h = self.tca(h)
        return pooled(h)

    def forward(self, x: Tensor) -> Tensor:
        return fe_forward(x, self)


def fe_forward(x: Tensor, p: Encoder) -> Tensor:
    return p.head(pfe_forward(x, p.pfe))


def shared_forward_stage1(x: Tensor, shared: Encoder) -> Tensor:
    """PFE of the shared extractor; call once per modality with the same object."""
    return pfe_forward(x, shared.pfe)
