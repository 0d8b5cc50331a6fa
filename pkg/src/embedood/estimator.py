"""Scikit-learn style wrappers around the multi-head model.

``MultiEmbeddingClassifier`` fits the shared-trunk regression model
against a label codebook and exposes ``predict`` (soft decoding),
``score_samples`` (the norm-based OOD score, higher = more
in-distribution), and threshold-based rejection. ``SoftmaxClassifier``
is the plain cross-entropy comparator on the identical trunk.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .decoder import batch_ood_scores, batch_soft_decode
from .embeddings import LabelCodebook
from .model import ModelConfig, MultiHeadModel, train

__all__ = ["MultiEmbeddingClassifier", "SoftmaxClassifier", "alpha_at_tpr"]


def alpha_at_tpr(scores: np.ndarray, tpr: float = 0.95) -> float:
    """Largest threshold keeping at least ``tpr`` of the scores accepted.

    Rejection is strict (score < alpha), so the returned value is the
    m-th largest validation score with m = ceil(tpr * n).
    """
    scores = np.sort(np.asarray(scores, dtype=np.float64))[::-1]
    m = int(np.ceil(tpr * scores.size))
    return float(scores[m - 1])


class MultiEmbeddingClassifier(ClassifierMixin, BaseEstimator):
    """Classifier supervised by K word-embedding targets.

    Labels are integer indices into ``codebook.labels``.
    """

    def __init__(
        self,
        codebook: LabelCodebook = None,
        trunk=(32,),
        head_hidden: int = 16,
        epochs: int = 20,
        batch_size: int = 64,
        optimizer: str = "sgd_momentum",
        lr: float = 0.05,
        momentum: float = 0.9,
        weight_decay: float = 0.0,
        seed: int = 0,
    ):
        self.codebook = codebook
        self.trunk = trunk
        self.head_hidden = head_hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.seed = seed

    def _optimizer_kwargs(self):
        if self.optimizer == "adam":
            return {"lr": self.lr}
        return {"lr": self.lr, "momentum": self.momentum, "weight_decay": self.weight_decay}

    def fit(self, X, y):
        if self.codebook is None:
            raise ValueError("a codebook is required to fit")
        X, y = check_X_y(X, y, dtype=np.float64)
        y = y.astype(np.intp)
        if y.min(initial=0) < 0 or y.max(initial=0) >= self.codebook.n_labels:
            raise ValueError("labels must index into the codebook")
        config = ModelConfig(
            input_dim=X.shape[1],
            trunk=tuple(self.trunk),
            variant="multi_embed",
            head_dims=self.codebook.dims,
            head_hidden=self.head_hidden,
        )
        self.model_ = MultiHeadModel(config, seed=self.seed)
        self.train_log_ = train(
            self.model_,
            (X, y),
            epochs=self.epochs,
            batch_size=self.batch_size,
            optimizer=self.optimizer,
            optimizer_kwargs=self._optimizer_kwargs(),
            seed=self.seed,
            codebook=self.codebook,
        )
        self.classes_ = np.arange(self.codebook.n_labels)
        self.n_features_in_ = X.shape[1]
        return self

    def _outputs(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return self.model_.predict_vectors(X)

    def predict(self, X):
        return batch_soft_decode(self._outputs(X), self.codebook)

    def score_samples(self, X):
        """Summed squared head-output norms; low values look OOD."""
        return batch_ood_scores(self._outputs(X))

    def fit_threshold(self, X_val, tpr: float = 0.95) -> float:
        """Calibrate the rejection threshold on in-distribution validation data."""
        self.alpha_ = alpha_at_tpr(self.score_samples(X_val), tpr)
        return self.alpha_

    def predict_with_rejection(self, X, alpha: float | None = None):
        """Labels, with -1 marking inputs rejected as out-of-distribution."""
        if alpha is None:
            check_is_fitted(self, "alpha_")
            alpha = self.alpha_
        labels = self.predict(X)
        scores = self.score_samples(X)
        return np.where(scores < alpha, -1, labels)


class SoftmaxClassifier(ClassifierMixin, BaseEstimator):
    """Cross-entropy comparator sharing the multi-embed architecture."""

    def __init__(
        self,
        n_classes: int = 2,
        trunk=(32,),
        head_hidden: int = 16,
        epochs: int = 20,
        batch_size: int = 64,
        optimizer: str = "sgd_momentum",
        lr: float = 0.05,
        momentum: float = 0.9,
        weight_decay: float = 0.0,
        seed: int = 0,
    ):
        self.n_classes = n_classes
        self.trunk = trunk
        self.head_hidden = head_hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.seed = seed

    def _optimizer_kwargs(self):
        if self.optimizer == "adam":
            return {"lr": self.lr}
        return {"lr": self.lr, "momentum": self.momentum, "weight_decay": self.weight_decay}

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        y = y.astype(np.intp)
        config = ModelConfig(
            input_dim=X.shape[1],
            trunk=tuple(self.trunk),
            variant="softmax",
            head_hidden=self.head_hidden,
            n_classes=self.n_classes,
        )
        self.model_ = MultiHeadModel(config, seed=self.seed)
        self.train_log_ = train(
            self.model_,
            (X, y),
            epochs=self.epochs,
            batch_size=self.batch_size,
            optimizer=self.optimizer,
            optimizer_kwargs=self._optimizer_kwargs(),
            seed=self.seed,
        )
        self.classes_ = np.arange(self.n_classes)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return self.model_.logits(X)

    def predict_proba(self, X):
        logits = self.decision_function(X)
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)

    def score_samples(self, X):
        """Max softmax probability per example (the classic OOD baseline)."""
        return self.predict_proba(X).max(axis=1)
