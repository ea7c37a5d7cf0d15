"""Shared-specific feature fusion, classification head and losses."""
from __future__ import annotations

import numpy as np

from . import functional as F
from .modules import Linear
from .tensor import Tensor, _result, add, as_tensor, scale

N_CLASSES = 2


def joint_fuse(f_sh: Tensor, sf_m: Tensor, sf_p: Tensor) -> Tensor:
    """Concatenate as ``[shared, MRI-specific, PET-specific]``."""
    return F.concat([f_sh, sf_m, sf_p], axis=1)


class Classifier(Linear):
    def __init__(self, in_features: int, n_classes: int = N_CLASSES, rng=None, dtype=np.float32):
        super().__init__(in_features, n_classes, rng=rng, dtype=dtype)


def classify(f_joint: Tensor, p: Classifier) -> tuple[Tensor, Tensor]:
    """Return ``(logits, probabilities)``."""
    logits = p(f_joint)
    return logits, F.softmax(logits)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of the true class, from logits."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, k = logits.shape
    if labels.shape[0] != n:
        raise ValueError(f"{labels.shape[0]} labels for {n} rows")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"labels must lie in [0, {k - 1}], got {np.unique(labels)}")
    logp = F.log_softmax(logits)
    rows = np.arange(n)
    out = np.asarray(-logp.data[rows, labels].mean(), dtype=logits.dtype)

    def bw(g):
        gl = np.zeros_like(logp.data)
        gl[rows, labels] = -g.reshape(()) / n
        return (gl,)

    return _result(out, (logp,), bw, "nll")


def cross_entropy_probs(probs: np.ndarray, labels, eps: float = 1e-12) -> float:
    """Probability-level cross-entropy (mean over rows) for reporting."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    return float(-np.log(np.clip(probs[np.arange(len(labels)), labels], eps, None)).mean())


def total_loss(l_consi: Tensor, l_mse: Tensor, l_c: Tensor, lam: float = 0.5) -> Tensor:
    """``l_consi + lam * l_mse + l_c``."""
    l_c = as_tensor(l_c)
    l_consi, l_mse = as_tensor(l_consi, l_c), as_tensor(l_mse, l_c)
    return add(add(l_consi, scale(l_mse, lam)), l_c)
