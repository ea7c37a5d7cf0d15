"""Binary classification metrics and their fold aggregation."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

METRICS = ("acc", "auc", "pre", "spe", "sen")


def confusion(y_true, y_pred) -> tuple[int, int, int, int]:
    """``(tp, fp, tn, fn)`` with class 1 as positive."""
    y_true = np.asarray(y_true).astype(bool)
    y_pred = np.asarray(y_pred).astype(bool)
    tp = int(np.sum(y_true & y_pred))
    fp = int(np.sum(~y_true & y_pred))
    tn = int(np.sum(~y_true & ~y_pred))
    fn = int(np.sum(y_true & ~y_pred))
    return tp, fp, tn, fn


def roc_auc(y_true, scores) -> float:
    """Trapezoidal area under the ROC curve; tied scores form one step."""
    y_true = np.asarray(y_true).astype(bool)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos, n_neg = int(y_true.sum()), int((~y_true).sum())
    if n_pos == 0 or n_neg == 0:
        return math.nan
    order = np.argsort(-scores, kind="mergesort")
    s, t = scores[order], y_true[order]
    # last index of each run of equal scores
    ends = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tps = np.cumsum(t)[ends]
    fps = np.cumsum(~t)[ends]
    tps, fps = np.r_[0, tps], np.r_[0, fps]
    # twice the area in integer units; one division keeps the result exact to rounding
    twice = int(np.sum(np.diff(fps) * (tps[1:] + tps[:-1])))
    return twice / (2 * n_pos * n_neg)


def _ratio(num: int, den: int, name: str) -> float:
    if den == 0:
        logger.warning("%s undefined (zero denominator)", name)
        return math.nan
    return num / den


def binary_metrics(y_true, scores, y_pred=None) -> dict[str, float]:
    """ACC, AUC, PRE, SPE, SEN.  ``scores`` are class-1 scores; predictions
    default to ``scores > 0.5``."""
    scores = np.asarray(scores, dtype=np.float64)
    if y_pred is None:
        y_pred = scores > 0.5
    tp, fp, tn, fn = confusion(y_true, y_pred)
    return {
        "acc": (tp + tn) / max(1, tp + fp + tn + fn),
        "auc": roc_auc(y_true, scores),
        "pre": _ratio(tp, tp + fp, "precision"),
        "spe": _ratio(tn, tn + fp, "specificity"),
        "sen": _ratio(tp, tp + fn, "sensitivity"),
    }


@dataclass
class MetricsReport:
    folds: list[dict[str, float]] = field(default_factory=list)

    def add(self, fold_metrics: dict[str, float]) -> None:
        self.folds.append(dict(fold_metrics))

    def values(self, name: str) -> np.ndarray:
        return np.array([f[name] for f in self.folds], dtype=np.float64)

    def mean(self, name: str) -> float:
        v = self.values(name)
        v = v[~np.isnan(v)]
        if v.size < len(self.folds):
            logger.warning("%s: %d fold(s) undefined, excluded from the mean", name, len(self.folds) - v.size)
        return float(v.mean()) if v.size else math.nan

    def std(self, name: str) -> float:
        v = self.values(name)
        v = v[~np.isnan(v)]
        return float(v.std()) if v.size else math.nan

    def summary(self) -> dict[str, tuple[float, float]]:
        return {m: (self.mean(m), self.std(m)) for m in METRICS}

    def format(self) -> str:
        return "  ".join(f"{m.upper()} {mu:.4f}±{sd:.4f}" for m, (mu, sd) in self.summary().items())

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("fold," + ",".join(METRICS) + "\n")
            for i, f in enumerate(self.folds):
                fh.write(f"{i}," + ",".join(repr(float(f[m])) for m in METRICS) + "\n")
