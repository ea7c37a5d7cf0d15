"""k-fold cross-validation driver and its CSV outputs."""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from ..data.folds import FoldPlan, make_folds
from ..data.synth import VolumePair
from ..estimator import FusionClassifier
from .checkpoint import save_checkpoint
from .config import RunConfig
from .metrics import MetricsReport
from .training import EpochLoss, evaluate, prepare_volumes

logger = logging.getLogger(__name__)

LOSS_HEADER = "fold,epoch,l_total,l_consi,l_mse,l_c"


def estimator_from_config(cfg: RunConfig, fold: int = 0) -> FusionClassifier:
    return FusionClassifier(
        epochs=cfg.epochs,
        pretrain_epochs=cfg.pretrain_epochs,
        batch_size=cfg.batch_size,
        lr=cfg.lr,
        lam=cfg.lam,
        use_tca=cfg.use_tca,
        use_ccfe=cfg.use_ccfe,
        use_ssff=cfg.use_ssff,
        freeze_specific=cfg.freeze_specific,
        mse_paper_exact=cfg.mse_paper_exact,
        n_prototypes=cfg.n_prototypes,
        seed=cfg.seed + fold,
    )


def write_loss_trace(path, traces: dict[int, list[EpochLoss]]) -> None:
    with open(path, "w") as fh:
        fh.write(LOSS_HEADER + "\n")
        for fold, trace in traces.items():
            for e in trace:
                fh.write(f"{fold},{e.epoch},{e.l_total!r},{e.l_consi!r},{e.l_mse!r},{e.l_c!r}\n")


def cross_validate(
    cfg: RunConfig,
    subjects: list[VolumePair],
    out_dir=None,
    plan: FoldPlan | None = None,
    max_folds: int | None = None,
) -> tuple[MetricsReport, dict[int, list[EpochLoss]]]:
    """Train one model per fold and score it on the held-out subjects.

    ``max_folds`` runs only the first few folds of a ``cfg.folds`` split.
    """
    cfg.validate()
    X, y = prepare_volumes(subjects, cfg.volume_size)
    ids = [s.subject_id for s in subjects]
    plan = plan or make_folds(ids, y, k=cfg.folds, seed=cfg.seed)
    report = MetricsReport()
    traces: dict[int, list[EpochLoss]] = {}
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for fold in range(plan.k if max_folds is None else min(plan.k, max_folds)):
        test_ids = set(plan.test_ids(fold))
        train_ids = set(plan.train_ids(fold))
        if test_ids & train_ids:
            raise AssertionError(f"fold {fold}: subjects leak between train and test")
        test = np.array([i in test_ids for i in ids])
        clf = estimator_from_config(cfg, fold).fit(X[~test], y[~test])
        metrics = evaluate(clf.model_, X[test], y[test])
        report.add(metrics)
        traces[fold] = clf.loss_trace_
        logger.info("fold %d: %s", fold, ", ".join(f"{k}={v:.4f}" for k, v in metrics.items()))
        if out is not None:
            save_checkpoint(clf.model_, out / f"fold{fold}.ckpt", cfg.to_dict(), clf.rng_state_)
    if out is not None:
        report.to_csv(out / "metrics.csv")
        write_loss_trace(out / "loss_trace.csv", traces)
    return report, traces
