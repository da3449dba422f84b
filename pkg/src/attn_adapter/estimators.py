"""Scikit-learn style wrappers around the three scoring methods.

All estimators score samples by cosine similarity against category
embeddings supplied at construction.  ``X`` is either an (n, D) matrix of
global embeddings or an (n, 1 + M, D) stack carrying the global embedding
in slice 0 and M local features after it; the adapter classifier requires
the stacked form because it refines each query from its local features.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .adapters import SupportSet, memory_forward_cached, local_global_forward_cached
from .archive import EmbeddingArchive
from .episodes import derive_seed, sample_episode
from .losses import LossConfig, TipConfig, tip_adapter_logits, zero_shot_logits
from .trainer import TrainConfig, train
from .validation import check_category_embeddings, check_embedding_stack, check_labels


class ZeroShotClassifier(BaseEstimator, ClassifierMixin):
    """Cosine scoring against fixed category embeddings; nothing is fitted.

    Parameters
    ----------
    category_embeddings : array of shape (n_classes, dim)
        One row per class, text-encoder side.
    """

    def __init__(self, category_embeddings=None):
        self.category_embeddings = category_embeddings

    def fit(self, X=None, y=None):
        self.w_ = check_category_embeddings(self.category_embeddings)
        self.classes_ = np.arange(self.w_.shape[0])
        return self

    def decision_function(self, X):
        self._check_fitted()
        g, _ = check_embedding_stack(X, d=self.w_.shape[1])
        return np.stack([zero_shot_logits(row, self.w_) for row in g])

    def predict(self, X):
        return self.decision_function(X).argmax(axis=1)

    def _check_fitted(self):
        if not hasattr(self, "w_"):
            raise NotFittedError("call fit() first")


class TipAdapterClassifier(BaseEstimator, ClassifierMixin):
    """Training-free cache model: zero-shot logits plus a support-affinity term.

    ``fit`` stores the support set (must be class-balanced); ``alpha``
    scales the cache term and ``beta`` sharpens the affinity.
    """

    def __init__(self, category_embeddings=None, alpha=1.0, beta=5.5):
        self.category_embeddings = category_embeddings
        self.alpha = alpha
        self.beta = beta

    def fit(self, X, y):
        self.w_ = check_category_embeddings(self.category_embeddings)
        g, _ = check_embedding_stack(X, d=self.w_.shape[1])
        y = check_labels(y, self.w_.shape[0], g.shape[0])
        g = g / np.linalg.norm(g, axis=1, keepdims=True)
        self.support_ = SupportSet.from_indices(g, y, self.w_.shape[0])
        self.classes_ = np.arange(self.w_.shape[0])
        return self

    def decision_function(self, X):
        if not hasattr(self, "support_"):
            raise NotFittedError("call fit() first")
        cfg = TipConfig(self.alpha, self.beta)
        g, _ = check_embedding_stack(X, d=self.w_.shape[1])
        return np.stack([tip_adapter_logits(row, self.w_, self.support_, cfg)
                         for row in g])

    def predict(self, X):
        return self.decision_function(X).argmax(axis=1)


class AttnAdapterClassifier(BaseEstimator, ClassifierMixin):
    """Few-shot classifier with trained dual cross-attention refinement.

    ``fit(X, y)`` trains both adapter blocks episodically on the labeled
    samples (every class needs more than ``shots`` samples), then
    conditions the frozen memory block on a seeded ``shots``-per-class
    support draw.  ``predict`` refines each query from its local features
    and scores against the refined category embeddings.

    Parameters mirror the training configuration; ``random_state`` drives
    initialization, episode sampling, and batch order.
    """

    def __init__(self, category_embeddings=None, epochs=10, batch_size=32,
                 lr=2e-2, weight_decay=1e-2, tau=0.01, lam=0.1, shots=16,
                 hidden_dim=None, head_count=1, resample_support=True,
                 random_state=0):
        self.category_embeddings = category_embeddings
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.tau = tau
        self.lam = lam
        self.shots = shots
        self.hidden_dim = hidden_dim
        self.head_count = head_count
        self.resample_support = resample_support
        self.random_state = random_state

    def fit(self, X, y):
        w = check_category_embeddings(self.category_embeddings)
        g, loc = check_embedding_stack(X, d=w.shape[1], require_locals=True)
        y = check_labels(y, w.shape[0], g.shape[0])

        norms = np.linalg.norm(g, axis=1, keepdims=True)
        archive = EmbeddingArchive(
            class_names=[f"class_{i:03d}" for i in range(w.shape[0])],
            category_embeddings=w / np.linalg.norm(w, axis=1, keepdims=True),
            global_features=g / norms,
            local_features=loc,
            labels=y,
        )
        cfg = TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
            weight_decay=self.weight_decay, seed=self.random_state,
            k_shots=self.shots, hidden_dim=self.hidden_dim,
            head_count=self.head_count,
            loss=LossConfig(tau=self.tau, lam=self.lam),
            resample_support=self.resample_support,
        )
        self.params_, self.history_ = train(archive, cfg)

        episode = sample_episode(archive, range(w.shape[0]), self.shots,
                                 derive_seed(self.random_state, "conditioning"))
        self.w_ = archive.category_embeddings
        self.w_hat_, _ = memory_forward_cached(self.params_.memory, self.w_,
                                               episode.support.features)
        self.classes_ = np.arange(w.shape[0])
        return self

    def decision_function(self, X):
        if not hasattr(self, "w_hat_"):
            raise NotFittedError("call fit() first")
        g, loc = check_embedding_stack(X, d=self.w_.shape[1], require_locals=True)
        logits = np.empty((g.shape[0], self.w_hat_.shape[0]))
        for i in range(g.shape[0]):
            f_i, _ = local_global_forward_cached(self.params_.local_global,
                                                 g[i], loc[i])
            logits[i] = zero_shot_logits(f_i, self.w_hat_)
        return logits

    def predict(self, X):
        return self.decision_function(X).argmax(axis=1)
