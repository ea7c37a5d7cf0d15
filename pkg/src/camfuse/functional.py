"""Differentiable neural operators on 5-D volumes ``N x C x D x H x W``.

Convolutions are cross-correlations.  They are evaluated as a loop over
kernel offsets, each offset contributing one strided slice times a
``C_out x C_in`` matrix, which keeps peak memory at a few copies of the
input instead of a full im2col buffer.
"""
from __future__ import annotations

import itertools
import logging

import numpy as np

from .tensor import Tensor, _result

logger = logging.getLogger(__name__)


def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, (tuple, list)):
        if len(v) != 3:
            raise ValueError(f"expected 3 values, got {v}")
        return tuple(int(x) for x in v)
    return (int(v),) * 3


def conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _pad5(x: np.ndarray, pad, value=0.0) -> np.ndarray:
    if not any(pad):
        return x
    pd, ph, pw = pad
    return np.pad(x, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)), constant_values=value)


def _offset_slice(a, b, c, stride, out_shape):
    sd, sh, sw = stride
    od, oh, ow = out_shape
    return (
        slice(None),
        slice(None),
        slice(a, a + sd * (od - 1) + 1, sd),
        slice(b, b + sh * (oh - 1) + 1, sh),
        slice(c, c + sw * (ow - 1) + 1, sw),
    )


def _conv_geometry(x_shape, k, stride, pad):
    spatial = x_shape[2:]
    out = tuple(conv_out_size(n, kk, s, p) for n, kk, s, p in zip(spatial, k, stride, pad))
    if any(o < 1 for o in out):
        raise ValueError(
            f"kernel {k} larger than padded input {tuple(n + 2 * p for n, p in zip(spatial, pad))}"
        )
    return out


def _dense_forward(xp, w, stride, out_sp):
    n = xp.shape[0]
    co, ci, kd, kh, kw = w.shape
    out = np.zeros((n,) + out_sp + (co,), dtype=xp.dtype)
    for a, b, c in itertools.product(range(kd), range(kh), range(kw)):
        patch = xp[_offset_slice(a, b, c, stride, out_sp)]
        # (N, Ci, D, H, W) x (Co, Ci) -> (N, D, H, W, Co)
        out += np.tensordot(patch, w[:, :, a, b, c], axes=([1], [1]))
    return np.ascontiguousarray(out.transpose(0, 4, 1, 2, 3))


def _dense_backward(g, xp, w, stride, out_sp):
    co, ci, kd, kh, kw = w.shape
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    for a, b, c in itertools.product(range(kd), range(kh), range(kw)):
        sl = _offset_slice(a, b, c, stride, out_sp)
        patch = xp[sl]
        gw[:, :, a, b, c] = np.tensordot(g, patch, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
        gxp[sl] += np.tensordot(w[:, :, a, b, c], g, axes=([0], [1])).transpose(1, 0, 2, 3, 4)
    return gxp, gw


def _depthwise_forward(xp, w, stride, out_sp):
    n, ch = xp.shape[:2]
    _, _, kd, kh, kw = w.shape
    out = np.zeros((n, ch) + out_sp, dtype=xp.dtype)
    for a, b, c in itertools.product(range(kd), range(kh), range(kw)):
        out += xp[_offset_slice(a, b, c, stride, out_sp)] * w[:, 0, a, b, c][None, :, None, None, None]
    return out


def _depthwise_backward(g, xp, w, stride, out_sp):
    _, _, kd, kh, kw = w.shape
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    for a, b, c in itertools.product(range(kd), range(kh), range(kw)):
        sl = _offset_slice(a, b, c, stride, out_sp)
        gw[:, 0, a, b, c] = (g * xp[sl]).sum(axis=(0, 2, 3, 4))
        gxp[sl] += g * w[:, 0, a, b, c][None, :, None, None, None]
    return gxp, gw


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0, groups: int = 1) -> Tensor:
    """3-D cross-correlation.

    ``weight`` has shape ``(C_out, C_in // groups, kd, kh, kw)``.
    """
    if x.ndim != 5:
        raise ValueError(f"conv3d expects N x C x D x H x W input, got {x.shape}")
    stride, padding = _triple(stride), _triple(padding)
    co, cig, *k = weight.shape
    cin = x.shape[1]
    if groups < 1 or cin % groups or co % groups:
        raise ValueError(f"conv3d: channels {cin}->{co} not divisible by groups={groups}")
    if cin != cig * groups:
        raise ValueError(f"conv3d: input has {cin} channels, weight expects {cig * groups}")
    out_sp = _conv_geometry(x.shape, k, stride, padding)
    xp = _pad5(x.data, padding)
    wd = weight.data
    depthwise = groups == cin and co == cin and groups > 1

    if groups == 1:
        out = _dense_forward(xp, wd, stride, out_sp)
    elif depthwise:
        out = _depthwise_forward(xp, wd, stride, out_sp)
    else:
        gi, go = cin // groups, co // groups
        out = np.concatenate(
            [_dense_forward(xp[:, i * gi:(i + 1) * gi], wd[i * go:(i + 1) * go], stride, out_sp) for i in range(groups)],
            axis=1,
        )
    if bias is not None:
        out += bias.data[None, :, None, None, None]

    pd, ph, pw = padding
    full = xp.shape

    def bw(g):
        if groups == 1:
            gxp, gw = _dense_backward(g, xp, wd, stride, out_sp)
        elif depthwise:
            gxp, gw = _depthwise_backward(g, xp, wd, stride, out_sp)
        else:
            gxp = np.zeros_like(xp)
            gw = np.zeros_like(wd)
            gi, go = cin // groups, co // groups
            for i in range(groups):
                a, b = _dense_backward(g[:, i * go:(i + 1) * go], xp[:, i * gi:(i + 1) * gi], wd[i * go:(i + 1) * go], stride, out_sp)
                gxp[:, i * gi:(i + 1) * gi] = a
                gw[i * go:(i + 1) * go] = b
        gx = gxp[:, :, pd:full[2] - pd, ph:full[3] - ph, pw:full[4] - pw]
        gb = g.sum(axis=(0, 2, 3, 4)) if bias is not None else None
        return (np.ascontiguousarray(gx), gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, bw, "conv3d")


_AXES = {"D": 0, "H": 1, "W": 2}


def depthwise_strip_conv3d(x: Tensor, weight: Tensor, axis: str) -> Tensor:
    """Per-channel 1-D convolution of odd length ``k`` along one spatial axis.

    ``weight`` has shape ``(C, k)``; padding ``(k - 1) / 2`` keeps the
    spatial shape.
    """
    if axis not in _AXES:
        raise ValueError(f"axis must be one of D, H, W; got {axis!r}")
    ch, k = weight.shape
    if k % 2 == 0:
        raise ValueError(f"strip kernel length must be odd, got {k}")
    if x.shape[1] != ch:
        raise ValueError(f"strip conv: input has {x.shape[1]} channels, weight has {ch}")
    ksize = [1, 1, 1]
    ksize[_AXES[axis]] = k
    pad = [0, 0, 0]
    pad[_AXES[axis]] = (k - 1) // 2
    w5 = _result(weight.data.reshape((ch, 1, *ksize)), (weight,), lambda g: (g.reshape(ch, k),), "reshape")
    return conv3d(x, w5, None, stride=1, padding=pad, groups=ch)


def pool3d(x: Tensor, kind: str, k: int, stride: int | None = None, padding: int = 0) -> Tensor:
    """Max or average pooling with cubic window ``k``.

    Max padding uses -inf; average padding counts the zero pad.  Max
    backward routes each gradient to the first maximum in scan order.
    """
    if k <= 0:
        raise ValueError(f"pool kernel must be positive, got {k}")
    stride = k if stride is None else stride
    kk, ss, pp = _triple(k), _triple(stride), _triple(padding)
    out_sp = _conv_geometry(x.shape, kk, ss, pp)
    if kind == "max":
        xp = _pad5(x.data, pp, value=-np.inf)
        win = np.lib.stride_tricks.sliding_window_view(xp, kk, axis=(2, 3, 4))
        win = win[:, :, ::ss[0], ::ss[1], ::ss[2]][:, :, :out_sp[0], :out_sp[1], :out_sp[2]]
        flat = win.reshape(win.shape[:5] + (-1,))
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        full = xp.shape

        def bw(g):
            n, c, od, oh, ow = g.shape
            a, rem = np.divmod(arg, kk[1] * kk[2])
            b, cc = np.divmod(rem, kk[2])
            di = np.arange(od)[:, None, None] * ss[0] + a
            hi = np.arange(oh)[None, :, None] * ss[1] + b
            wi = np.arange(ow)[None, None, :] * ss[2] + cc
            vol = full[2] * full[3] * full[4]
            lin = ((di * full[3] + hi) * full[4] + wi).reshape(n * c, -1)
            lin = lin + (np.arange(n * c) * vol)[:, None]
            gxp = np.bincount(lin.ravel(), weights=g.reshape(-1), minlength=n * c * vol).astype(g.dtype)
            gxp = gxp.reshape(full)
            return (np.ascontiguousarray(gxp[:, :, pp[0]:full[2] - pp[0], pp[1]:full[3] - pp[1], pp[2]:full[4] - pp[2]]),)

        return _result(np.ascontiguousarray(out), (x,), bw, "maxpool3d")
    if kind == "avg":
        xp = _pad5(x.data, pp)
        inv = 1.0 / (kk[0] * kk[1] * kk[2])
        out = np.zeros(x.shape[:2] + out_sp, dtype=x.dtype)
        offsets = list(itertools.product(*(range(v) for v in kk)))
        for a, b, c in offsets:
            out += xp[_offset_slice(a, b, c, ss, out_sp)]
        out *= inv
        full = xp.shape

        def bw(g):
            gxp = np.zeros(full, dtype=g.dtype)
            for a, b, c in offsets:
                gxp[_offset_slice(a, b, c, ss, out_sp)] += g * inv
            return (np.ascontiguousarray(gxp[:, :, pp[0]:full[2] - pp[0], pp[1]:full[3] - pp[1], pp[2]:full[4] - pp[2]]),)

        return _result(out, (x,), bw, "avgpool3d")
    raise ValueError(f"unknown pool kind {kind!r}")


def global_pool(x: Tensor, kind: str = "avg") -> Tensor:
    """Reduce every spatial position per channel, keeping ``N x C x 1 x 1 x 1``."""
    n, c = x.shape[:2]
    flat = x.data.reshape(n, c, -1)
    src = x.shape
    if kind == "avg":
        count = flat.shape[2]
        out = flat.mean(axis=2).reshape(n, c, 1, 1, 1)
        return _result(out, (x,), lambda g: (np.broadcast_to(g / count, src).copy(),), "global_avg")
    if kind == "max":
        arg = flat.argmax(axis=2)
        out = np.take_along_axis(flat, arg[..., None], axis=2).reshape(n, c, 1, 1, 1)

        def bw(g):
            gx = np.zeros_like(flat)
            np.put_along_axis(gx, arg[..., None], g.reshape(n, c, 1), axis=2)
            return (gx.reshape(src),)

        return _result(out, (x,), bw, "global_max")
    raise ValueError(f"unknown global pool kind {kind!r}")


def _standardize(x: np.ndarray, axes, eps: float):
    mu = x.mean(axis=axes, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    return xc * inv, inv, mu, var


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize each (sample, channel) over space, then apply the affine."""
    return _norm(x, gamma, beta, eps, axes=tuple(range(2, x.ndim)), op="instance_norm")[0]


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over batch and space.

    In training mode the running buffers are updated in place; the running
    variance uses the unbiased estimate.
    """
    axes = (0,) + tuple(range(2, x.ndim))
    if training:
        out, mu, var = _norm(x, gamma, beta, eps, axes=axes, op="batch_norm")
        m = x.size // x.shape[1]
        unbiased = var.reshape(-1) * (m / (m - 1) if m > 1 else 1.0)
        running_mean *= 1 - momentum
        running_mean += momentum * mu.reshape(-1)
        running_var *= 1 - momentum
        running_var += momentum * unbiased
        return out
    shape = (1, -1) + (1,) * (x.ndim - 2)
    inv = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype).reshape(shape)
    xhat = (x.data - running_mean.astype(x.dtype).reshape(shape)) * inv
    gd = gamma.data.reshape(shape)
    out = xhat * gd + beta.data.reshape(shape)

    def bw(g):
        return g * gd * inv, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _result(out, (x, gamma, beta), bw, "batch_norm_eval")


def _norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float, axes, op: str):
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"{op}: {c} channels but gamma {gamma.shape}, beta {beta.shape}")
    shape = (1, c) + (1,) * (x.ndim - 2)
    xhat, inv, mu, var = _standardize(x.data, axes, eps)
    gd = gamma.data.reshape(shape)
    out = xhat * gd + beta.data.reshape(shape)
    pa = tuple(i for i in range(x.ndim) if i != 1)

    def bw(g):
        gx_hat = g * gd
        m1 = gx_hat.mean(axis=axes, keepdims=True)
        m2 = (gx_hat * xhat).mean(axis=axes, keepdims=True)
        gx = inv * (gx_hat - m1 - xhat * m2)
        return gx, (g * xhat).sum(axis=pa), g.sum(axis=pa)

    return _result(out, (x, gamma, beta), bw, op), mu, var


def relu(x: Tensor) -> Tensor:
    xd = x.data
    mask = xd > 0
    # maximum (unlike where) lets NaN through, so divergence stays visible
    return _result(np.maximum(xd, 0).astype(xd.dtype), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(xd))
    out = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(xd.dtype)
    return _result(out, (x,), lambda g: (g * out * (1 - out),), "sigmoid")


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _result(out, (x,), bw, "softmax")


def log_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _result(out, (x,), bw, "log_softmax")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` for ``x`` of shape ``N x F`` and ``w`` of shape ``F x K``."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"linear: cannot apply weight {w.shape} to input {x.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ValueError(f"linear: bias {b.shape} does not match {w.shape[1]} outputs")
    xd, wd = x.data, w.data
    out = xd @ wd
    if b is not None:
        out = out + b.data

    def bw(g):
        return g @ wd.T, xd.T @ g, (g.sum(axis=0) if b is not None else None)

    parents = (x, w) if b is None else (x, w, b)
    return _result(out, parents, bw, "linear")


def concat(xs: list[Tensor], axis: int = 1) -> Tensor:
    if not xs:
        raise ValueError("concat of an empty list")
    if len(xs) == 1:
        return xs[0]
    sizes = [t.shape[axis] for t in xs]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in xs], axis=axis)

    def bw(g):
        sl = [slice(None)] * g.ndim
        grads = []
        for i in range(len(xs)):
            sl[axis] = slice(bounds[i], bounds[i + 1])
            grads.append(np.ascontiguousarray(g[tuple(sl)]))
        return tuple(grads)

    return _result(out, xs, bw, "concat")
