"""scikit-learn compatible front end for the fusion network."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .harness.training import pretrain_specific, predict_proba, train_fusion
from .model import FusionNet


def check_pairs(X, y=None):
    """Validate paired volumes ``n x 2 x D x H x W`` (channel 0 MRI, 1 PET)."""
    X = np.asarray(X, dtype=np.float32)
    if X.ndim != 5 or X.shape[1] != 2:
        raise ValueError(f"expected X of shape (n, 2, D, H, W), got {X.shape}")
    if not np.isfinite(X).all():
        raise ValueError("X contains NaN or Inf")
    if y is None:
        return X
    y = np.asarray(y).reshape(-1)
    if len(y) != len(X):
        raise ValueError(f"X has {len(X)} rows but y has {len(y)}")
    return X, y


class FusionClassifier(ClassifierMixin, BaseEstimator):
    """Binary MRI + PET classifier.

    ``fit`` first pretrains the two modality-specific extractors
    (``pretrain_epochs``), then trains the shared extractor, the enhancement
    block and the classifier on the joint objective (``epochs``).
    """

    def __init__(
        self,
        epochs: int = 40,
        pretrain_epochs: int = 20,
        batch_size: int = 4,
        lr: float = 1e-4,
        lam: float = 0.5,
        use_tca: bool = True,
        use_ccfe: bool = True,
        use_ssff: bool = True,
        freeze_specific: bool = True,
        mse_paper_exact: bool = False,
        n_prototypes: int = 64,
        seed: int = 0,
    ):
        self.epochs = epochs
        self.pretrain_epochs = pretrain_epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lam = lam
        self.use_tca = use_tca
        self.use_ccfe = use_ccfe
        self.use_ssff = use_ssff
        self.freeze_specific = freeze_specific
        self.mse_paper_exact = mse_paper_exact
        self.n_prototypes = n_prototypes
        self.seed = seed

    def _build(self) -> FusionNet:
        return FusionNet(
            use_tca=self.use_tca,
            use_ccfe=self.use_ccfe,
            use_ssff=self.use_ssff,
            n_prototypes=self.n_prototypes,
            seed=self.seed,
        )

    def fit(self, X, y, model: FusionNet | None = None):
        X, y = check_pairs(X, y)
        self.classes_ = np.unique(y)
        if len(self.classes_) != 2:
            raise ValueError(f"binary task needs exactly two classes, got {self.classes_}")
        y_idx = np.searchsorted(self.classes_, y)
        rng = np.random.default_rng(self.seed)
        self.model_ = model if model is not None else self._build()
        self.pretrain_trace_ = pretrain_specific(
            self.model_, X, y_idx, self.pretrain_epochs, self.batch_size, self.lr, rng
        )
        self.loss_trace_ = train_fusion(
            self.model_, X, y_idx, self.epochs, self.batch_size, self.lr, self.lam, rng,
            freeze_specific=self.freeze_specific, mse_paper_exact=self.mse_paper_exact,
        )
        self.rng_state_ = rng.bit_generator.state
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return predict_proba(self.model_, check_pairs(X))

    def decision_function(self, X) -> np.ndarray:
        p = self.predict_proba(X)
        return np.log(np.clip(p[:, 1], 1e-12, None)) - np.log(np.clip(p[:, 0], 1e-12, None))

    def predict(self, X) -> np.ndarray:
        proba = self.predict_proba(X)
        return self.classes_[proba.argmax(axis=1)]
