"""Volume resampling and intensity normalization."""
from __future__ import annotations

import numpy as np


def _linear_axis(x: np.ndarray, axis: int, n_out: int) -> np.ndarray:
    n_in = x.shape[axis]
    if n_in == n_out:
        return x
    # half-pixel centres (align_corners=False), negative sources clamp to 0
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, None)
    i0 = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w = (src - i0).astype(x.dtype)
    shape = [1] * x.ndim
    shape[axis] = n_out
    w = w.reshape(shape)
    return np.take(x, i0, axis=axis) * (1 - w) + np.take(x, i1, axis=axis) * w


def resize_volume(x: np.ndarray, target) -> np.ndarray:
    """Trilinear resize of the last three axes to ``target`` (int or triple)."""
    if np.isscalar(target):
        target = (int(target),) * 3
    x = np.asarray(x)
    out = x.astype(np.float64) if x.dtype != np.float32 else x
    for i, n in enumerate(target):
        out = _linear_axis(out, x.ndim - 3 + i, int(n))
    return out.astype(x.dtype if x.dtype.kind == "f" else np.float32)


def normalize_volume(x: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Z-score over the whole volume; a constant volume maps to zeros."""
    x = np.asarray(x)
    work = x.astype(np.float64)
    mu = work.mean()
    sd = work.std()
    return ((work - mu) / max(sd, eps) if sd > eps else work - mu).astype(x.dtype if x.dtype.kind == "f" else np.float32)
