"""Cross-modal consistent feature enhancement.

* :func:`ff_fuse` adds the two shared-PFE maps and refines them with
  conv -> batch norm -> ReLU.
* :func:`lpr_enhance` lets one modality's tokens attend to the other
  modality's learnable prototype bank (single-head scaled dot product).
* :func:`fcc`, :func:`consistency_loss` and :func:`mse_alignment_loss`
  are the alignment objectives.
"""
from __future__ import annotations

import logging
import math

import numpy as np

from . import functional as F
from .modules import Conv3d, Module, Norm, _param
from .tensor import Tensor, _result, add, matmul, reshape, scale, sub, transpose

logger = logging.getLogger(__name__)

N_PROTOTYPES = 64


class FF(Module):
    def __init__(self, channels: int = 16, rng=None, dtype=np.float32):
        self.conv = Conv3d(channels, channels, 3, stride=1, padding=1, rng=rng, dtype=dtype)
        self.bn = Norm(channels, "batch", dtype=dtype)

    def forward(self, f_m: Tensor, f_p: Tensor) -> Tensor:
        return ff_fuse(f_m, f_p, self)


def ff_fuse(f_m: Tensor, f_p: Tensor, p: FF) -> Tensor:
    if f_m.shape != f_p.shape:
        raise ValueError(f"ff_fuse: shape mismatch {f_m.shape} vs {f_p.shape}")
    return F.relu(p.bn(p.conv(add(f_m, f_p))))


class LPR(Module):
    """Learnable prototype bank ``R`` (``T_r x C``) with its projections."""

    def __init__(self, channels: int = 16, n_prototypes: int = N_PROTOTYPES, rng=None, dtype=np.float32):
        if n_prototypes < 1:
            raise ValueError("need at least one prototype")
        rng = rng or np.random.default_rng(0)
        bound = 1.0 / math.sqrt(channels)
        self.R = _param(rng.standard_normal((n_prototypes, channels)), dtype)
        self.Wq = _param(rng.uniform(-bound, bound, (channels, channels)), dtype)
        self.Wk = _param(rng.uniform(-bound, bound, (channels, channels)), dtype)
        self.Wv = _param(rng.uniform(-bound, bound, (channels, channels)), dtype)
        self.d = channels


def to_tokens(f: Tensor) -> Tensor:
    """``N x C x D x H x W`` -> ``(N*T) x C``."""
    n, c = f.shape[:2]
    return reshape(transpose(reshape(f, (n, c, -1)), (0, 2, 1)), (-1, c))


def from_tokens(tokens: Tensor, like_shape) -> Tensor:
    n, c = like_shape[:2]
    return reshape(transpose(reshape(tokens, (n, -1, c)), (0, 2, 1)), like_shape)


def lpr_attention(f: Tensor, lpr_other: LPR, wq: Tensor) -> tuple[Tensor, Tensor]:
    """Attention output (feature-map shaped) and the ``(N*T) x T_r`` weights."""
    c = f.shape[1]
    if lpr_other.R.shape[0] == 0:
        raise ValueError("prototype bank is empty")
    if c != lpr_other.R.shape[1]:
        raise ValueError(f"lpr_enhance: features have {c} channels, prototypes {lpr_other.R.shape[1]}")
    q = matmul(to_tokens(f), wq)
    k = matmul(lpr_other.R, lpr_other.Wk)
    v = matmul(lpr_other.R, lpr_other.Wv)
    attn = F.softmax(scale(matmul(q, transpose(k)), 1.0 / math.sqrt(lpr_other.d)))
    return from_tokens(matmul(attn, v), f.shape), attn


def lpr_enhance(f: Tensor, lpr_other: LPR, wq: Tensor | None = None, residual: bool = True) -> Tensor:
    """Enhance ``f`` with the other modality's prototypes.

    Queries come from ``f`` through ``wq`` (the input modality's query map;
    defaults to ``lpr_other.Wq``), keys and values from ``lpr_other``.
    """
    out, _ = lpr_attention(f, lpr_other, lpr_other.Wq if wq is None else wq)
    return add(f, out) if residual else out


def fcc(x: Tensor, y: Tensor) -> Tensor:
    """Feature-level cross-correlation of two ``C x ...`` arrays.

    Per channel, the Pearson correlation over every remaining position,
    then the mean over channels.  Channels where either side is constant
    contribute 0.
    """
    if x.shape != y.shape:
        raise ValueError(f"fcc: shape mismatch {x.shape} vs {y.shape}")
    c = x.shape[0]
    xd = x.data.reshape(c, -1)
    yd = y.data.reshape(c, -1)
    xc = xd - xd.mean(axis=1, keepdims=True)
    yc = yd - yd.mean(axis=1, keepdims=True)
    sxx = (xc * xc).sum(axis=1)
    syy = (yc * yc).sum(axis=1)
    sxy = (xc * yc).sum(axis=1)
    tiny = np.finfo(xd.dtype).tiny
    ok = (sxx > tiny) & (syy > tiny)
    if not ok.all():
        logger.debug("fcc: %d zero-variance channel pair(s) counted as uncorrelated", int((~ok).sum()))
    denom = np.sqrt(np.where(ok, sxx * syy, 1.0))
    r = np.where(ok, sxy / denom, 0.0)
    out = np.asarray(np.clip(r.mean(), -1.0, 1.0), dtype=xd.dtype)
    shape = x.shape

    def bw(g):
        g = g.reshape(()) / c
        rr = r[:, None]
        dn = denom[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            gx = np.where(ok[:, None], yc / dn - rr * xc / np.where(ok, sxx, 1.0)[:, None], 0.0)
            gy = np.where(ok[:, None], xc / dn - rr * yc / np.where(ok, syy, 1.0)[:, None], 0.0)
        return (g * gx).reshape(shape).astype(xd.dtype), (g * gy).reshape(shape).astype(xd.dtype)

    return _result(out, (x, y), bw, "fcc")


def pooling_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """``n_in x n_out`` matrix averaging adaptive windows of the input axis."""
    m = np.zeros((n_in, n_out), dtype=dtype)
    for j in range(n_out):
        lo = (j * n_in) // n_out
        hi = -((-(j + 1) * n_in) // n_out)
        m[lo:hi, j] = 1.0 / (hi - lo)
    return m


def canonical_f1(f1: Tensor, n_prototypes: int) -> Tensor:
    """Batch-mean of ``F1`` pooled to ``C x T_r`` so it lines up with a prototype bank."""
    n, c = f1.shape[:2]
    flat = reshape(f1, (n, -1))
    batch_mean = scale(matmul(Tensor(np.ones((1, n), dtype=f1.dtype)), flat), 1.0 / n)
    tokens = reshape(batch_mean, (c, -1))
    return matmul(tokens, Tensor(pooling_matrix(tokens.shape[1], n_prototypes, f1.dtype)))


def canonical_prototypes(lpr: LPR) -> Tensor:
    return transpose(lpr.R)


def consistency_loss(lpr_m: LPR, lpr_p: LPR, f1: Tensor) -> Tensor:
    """``-FCC(R_m, F1) - FCC(R_p, F1)`` in the shared ``C x T_r`` geometry."""
    target = canonical_f1(f1, lpr_m.R.shape[0])
    if lpr_p.R.shape != lpr_m.R.shape:
        raise ValueError("prototype banks differ in shape")
    return sub(scale(fcc(canonical_prototypes(lpr_m), target), -1.0), fcc(canonical_prototypes(lpr_p), target))


def mse_alignment_loss(f_m_prime: Tensor, f_p_prime: Tensor, paper_exact: bool = False) -> Tensor:
    """Squared Frobenius distance over the spatial volume ``H*W*D``.

    By default the result is additionally averaged over batch and channels;
    ``paper_exact`` keeps the bare ``H*W*D`` denominator.
    """
    if f_m_prime.shape != f_p_prime.shape:
        raise ValueError(f"mse: shape mismatch {f_m_prime.shape} vs {f_p_prime.shape}")
    diff = sub(f_m_prime, f_p_prime)
    sq = (diff * diff).sum()
    spatial = int(np.prod(f_m_prime.shape[2:]))
    denom = spatial if paper_exact else f_m_prime.size
    return scale(sq, 1.0 / denom)
