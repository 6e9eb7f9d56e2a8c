"""Estimator-style wrapper so the trainer composes with sklearn pipelines."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .heads import forward
from .losses import l2_normalize_rows
from .training import RunConfig, train


class TrimodalAligner(BaseEstimator):
    """Fits per-modality projection heads with the symmetric contrastive
    objective and maps raw encoder outputs into the shared unit-sphere space.

    Parameters mirror RunConfig; `fit` takes a TripletManifest (or a path to
    a manifest JSON) and `transform` projects one modality's raw embeddings.
    """

    def __init__(self, loss_variant="trimodal", tau=0.2, base_lr=1e-4,
                 weight_decay=1e-5, epochs=50, batch_size=256,
                 grad_accum_steps=1, warmup_frac=0.02, clip_norm=1.0,
                 patience=5, d_out=1024, dropout_rate=0.1, seed=0):
        self.loss_variant = loss_variant
        self.tau = tau
        self.base_lr = base_lr
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.grad_accum_steps = grad_accum_steps
        self.warmup_frac = warmup_frac
        self.clip_norm = clip_norm
        self.patience = patience
        self.d_out = d_out
        self.dropout_rate = dropout_rate
        self.seed = seed

    def _config(self) -> RunConfig:
        return RunConfig(**self.get_params()).validate()

    def fit(self, X, y=None):
        """Train on a TripletManifest (object or path); returns self."""
        self.heads_, self.log_ = train(self._config(), X)
        return self

    def transform(self, X, modality: str = "ts") -> np.ndarray:
        """Project raw encoder outputs of one modality; rows come back unit-norm."""
        if not hasattr(self, "heads_"):
            raise NotFittedError("TrimodalAligner must be fitted before transform")
        if modality not in self.heads_:
            raise KeyError(f"no trained head for modality {modality!r}; "
                           f"have {sorted(self.heads_)}")
        z, _ = forward(self.heads_[modality], np.asarray(X), mode="eval")
        normalized, _ = l2_normalize_rows(z.astype(np.float64))
        return normalized.astype(np.float32)

    def fit_transform(self, X, y=None, modality: str = "ts") -> np.ndarray:
        raise NotImplementedError(
            "fit consumes a manifest while transform consumes one modality's "
            "raw embeddings; call them separately"
        )
