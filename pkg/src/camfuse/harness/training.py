"""Training loops: specific-branch pretraining, joint fusion training, evaluation."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..data.synth import VolumePair
from ..data.volume import normalize_volume, resize_volume
from ..encoders import fe_forward
from ..model import FusionNet
from ..ssff import classify, cross_entropy, total_loss
from ..tensor import Tensor, backward, no_grad
from .metrics import binary_metrics
from .optim import Adam

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class EpochLoss:
    epoch: int
    l_total: float
    l_consi: float
    l_mse: float
    l_c: float


def prepare_volumes(subjects: list[VolumePair], volume_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack subjects into ``X`` (``n x 2 x S x S x S``, MRI then PET) and labels."""
    X = np.empty((len(subjects), 2) + (volume_size,) * 3, dtype=np.float32)
    for i, s in enumerate(subjects):
        for j, vol in enumerate((s.mri, s.pet)):
            v = vol[0] if vol.ndim == 4 else vol
            if v.shape != (volume_size,) * 3:
                v = resize_volume(v, volume_size)
            X[i, j] = normalize_volume(v.astype(np.float32))
    return X, np.array([s.label for s in subjects], dtype=np.int64)


def batches(n: int, batch_size: int, rng: np.random.Generator | None) -> list[np.ndarray]:
    """Shuffled index batches; a trailing batch of one joins the previous one
    (batch statistics need at least two samples)."""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    out = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(out) > 1 and len(out[-1]) == 1:
        last = out.pop()
        out[-1] = np.concatenate([out[-1], last])
    return out


def _modality(X: np.ndarray, idx, channel: int, dtype) -> Tensor:
    return Tensor(X[idx, channel:channel + 1], dtype=dtype)


def _check_finite(loss: Tensor, context: dict) -> None:
    if not np.isfinite(loss.data).all():
        stats = ", ".join(f"{k}={v}" for k, v in context.items())
        raise TrainingDiverged(f"non-finite loss; last batch: {stats}")


def pretrain_specific(model: FusionNet, X: np.ndarray, y: np.ndarray, epochs: int, batch_size: int, lr: float, rng) -> list[tuple[int, float, float]]:
    """Train each specific extractor with its own head on single-modality cross-entropy."""
    trace = []
    if not model.use_ssff or epochs == 0:
        return trace
    branches = [(model.fe_m, model.head_m, 0), (model.fe_p, model.head_p, 1)]
    opts = [Adam(enc.parameters() + head.parameters(), lr=lr) for enc, head, _ in branches]
    for enc, head, _ in branches:
        enc.train()
    for epoch in range(1, epochs + 1):
        sums = [0.0, 0.0]
        idx_batches = batches(len(X), batch_size, rng)
        for idx in idx_batches:
            for k, ((enc, head, ch), opt) in enumerate(zip(branches, opts)):
                opt.zero_grad()
                logits, _ = classify(fe_forward(_modality(X, idx, ch, model.dtype), enc), head)
                loss = cross_entropy(logits, y[idx])
                _check_finite(loss, {"phase": "pretrain", "branch": k, "labels": y[idx].tolist()})
                backward(loss)
                opt.step()
                sums[k] += loss.item()
        trace.append((epoch, sums[0] / len(idx_batches), sums[1] / len(idx_batches)))
        logger.info("pretrain epoch %d: mri %.4f pet %.4f", *trace[-1])
    return trace


def specific_features(model: FusionNet, X: np.ndarray, batch_size: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Frozen specific-branch features for every row of ``X`` (eval mode)."""
    sfm, sfp = [], []
    for idx in batches(len(X), batch_size, None):
        a, b = model.specific_features(_modality(X, idx, 0, model.dtype), _modality(X, idx, 1, model.dtype))
        sfm.append(a.data)
        sfp.append(b.data)
    return np.concatenate(sfm), np.concatenate(sfp)


def train_fusion(
    model: FusionNet,
    X: np.ndarray,
    y: np.ndarray,
    epochs: int,
    batch_size: int,
    lr: float,
    lam: float,
    rng,
    freeze_specific: bool = True,
    mse_paper_exact: bool = False,
) -> list[EpochLoss]:
    """Minimize ``l_consi + lam * l_mse + l_c`` over the shared stack, CCFE and classifier."""
    if model.use_ssff and freeze_specific:
        model.fe_m.requires_grad_(False)
        model.fe_p.requires_grad_(False)
        sf_all = specific_features(model, X)
        params = model.fusion_parameters()
    else:
        sf_all = None
        params = [p for p in model.parameters() if p.requires_grad]
        if model.use_ssff:
            # heads only serve pretraining
            heads = {id(p) for p in model.head_m.parameters() + model.head_p.parameters()}
            params = [p for p in params if id(p) not in heads]
    opt = Adam(params, lr=lr)
    model.train()
    if sf_all is not None:
        model.fe_m.eval()
        model.fe_p.eval()
    trace = []
    for epoch in range(1, epochs + 1):
        sums = np.zeros(4)
        idx_batches = batches(len(X), batch_size, rng)
        for idx in idx_batches:
            opt.zero_grad()
            mri, pet = _modality(X, idx, 0, model.dtype), _modality(X, idx, 1, model.dtype)
            sf = (Tensor(sf_all[0][idx]), Tensor(sf_all[1][idx])) if sf_all is not None else (None, None)
            out = model(mri, pet, *sf, frozen_specific=freeze_specific, mse_paper_exact=mse_paper_exact)
            l_c = cross_entropy(out.logits, y[idx])
            loss = total_loss(out.l_consi, out.l_mse, l_c, lam)
            _check_finite(loss, {
                "l_consi": out.l_consi.item(), "l_mse": out.l_mse.item(), "l_c": l_c.item(),
                "labels": y[idx].tolist(), "mri_absmax": float(np.abs(mri.data).max()),
            })
            backward(loss)
            opt.step()
            sums += [loss.item(), out.l_consi.item(), out.l_mse.item(), l_c.item()]
        sums /= len(idx_batches)
        trace.append(EpochLoss(epoch, *map(float, sums)))
        logger.info("epoch %d: total %.4f consi %.4f mse %.4f ce %.4f", epoch, *sums)
    if sf_all is not None:
        model.fe_m.requires_grad_(True)
        model.fe_p.requires_grad_(True)
    return trace


def predict_proba(model: FusionNet, X: np.ndarray, batch_size: int = 8) -> np.ndarray:
    model.eval()
    out = []
    with no_grad():
        for idx in batches(len(X), batch_size, None):
            res = model(_modality(X, idx, 0, model.dtype), _modality(X, idx, 1, model.dtype))
            out.append(res.probs.data.astype(np.float64))
    return np.concatenate(out)


def evaluate(model: FusionNet, X: np.ndarray, y: np.ndarray) -> dict[str, float]:
    probs = predict_proba(model, X)
    return binary_metrics(y, probs[:, 1], probs.argmax(axis=1) == 1)


def smoothed(values, window: int = 5) -> np.ndarray:
    """Trailing moving average (shorter windows at the start)."""
    v = np.asarray(values, dtype=np.float64)
    c = np.cumsum(np.r_[0.0, v])
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)
