"""Cosine logits for the three scoring methods and the training objective.

Zero-shot scoring is cosine similarity between an image embedding and each
category embedding.  The cache baseline adds an exponential affinity term
over support rows.  Adapter scoring is plain cosine again, on refined
embeddings.  The objective is temperature-scaled cross-entropy plus an L2
anchor tying refined image embeddings to their originals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adapters import SupportSet
from .numerics import as_matrix, as_vector


@dataclass
class LossConfig:
    """tau: softmax temperature; lam: weight of the L2 anchor term."""

    tau: float = 0.01
    lam: float = 0.1

    def __post_init__(self):
        if not (self.tau > 0.0):
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.lam < 0.0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")


@dataclass
class TipConfig:
    """Cache-model knobs: alpha scales the cache term, beta its sharpness."""

    alpha: float = 1.0
    beta: float = 5.5

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and np.isfinite(self.beta)):
            raise ValueError("alpha and beta must be finite")
        if self.alpha < 0.0 or self.beta < 0.0:
            raise ValueError("alpha and beta must be nonnegative")


def _checked_norms(w: np.ndarray, f: np.ndarray):
    row_norms = np.linalg.norm(w, axis=1)
    f_norm = np.linalg.norm(f)
    if f_norm == 0.0 or np.any(row_norms == 0.0):
        raise ValueError("zero-norm embedding")
    return row_norms, f_norm


def zero_shot_logits(f, w) -> np.ndarray:
    """Cosine of one image embedding against each category row, shape (N,)."""
    f = as_vector(f, "image embedding")
    w = as_matrix(w, "category embeddings")
    if w.shape[1] != f.shape[0]:
        raise ValueError(f"dim mismatch: categories {w.shape} vs embedding {f.shape}")
    row_norms, f_norm = _checked_norms(w, f)
    return (w @ f) / (row_norms * f_norm)


def adapter_logits(f, w_hat) -> np.ndarray:
    """Cosine logits on refined embeddings; identical math to zero-shot."""
    return zero_shot_logits(f, w_hat)


def cosine_logits_backward(f, w, d_logits):
    """Backward of ``zero_shot_logits``: returns (d_w, d_f)."""
    f = as_vector(f, "image embedding")
    w = as_matrix(w, "category embeddings")
    d_logits = as_vector(d_logits, "d_logits")
    row_norms, f_norm = _checked_norms(w, f)
    z = (w @ f) / (row_norms * f_norm)

    coeff = d_logits / (row_norms * f_norm)          # (N,)
    d_w = np.outer(coeff, f) - ((d_logits * z / row_norms**2)[:, None] * w)
    d_f = w.T @ coeff - (d_logits @ z) * f / f_norm**2
    return d_w, d_f


def tip_adapter_logits(f, w, support: SupportSet, cfg: TipConfig) -> np.ndarray:
    """Zero-shot logits plus the support-cache term.

    logit_i = cos(w_i, f) + alpha * sum_j exp(-beta * (1 - cos(F_j, f))) L_ji
    """
    base = zero_shot_logits(f, w)
    if support.features.shape[1] != f.shape[0]:
        raise ValueError("support feature dim does not match image embedding")
    f_unit = np.asarray(f, dtype=np.float64) / np.linalg.norm(f)
    sims = support.features @ f_unit            # support rows are unit-norm
    affinity = np.exp(-cfg.beta * (1.0 - sims))
    return base + cfg.alpha * (affinity @ support.labels)


def cross_entropy(logits, targets, tau: float) -> float:
    """Mean over the batch of -log softmax(logits/tau)[target].

    The per-sample sum is averaged so the anchor weight keeps one meaning
    across batch sizes.
    """
    if tau <= 0.0:
        raise ValueError(f"tau must be > 0, got {tau}")
    z = as_matrix(logits, "logits") / tau
    y = np.asarray(targets, dtype=np.int64)
    b, n = z.shape
    if y.shape != (b,):
        raise ValueError(f"targets shape {y.shape} != ({b},)")
    if np.any(y < 0) or np.any(y >= n):
        raise ValueError(f"target index out of range [0, {n})")
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(log_norm - z[np.arange(b), y]))


def cross_entropy_backward(logits, targets, tau: float) -> np.ndarray:
    """d(mean CE)/d(logits), shape (B, N)."""
    z = as_matrix(logits, "logits") / tau
    y = np.asarray(targets, dtype=np.int64)
    b = z.shape[0]
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    soft = e / e.sum(axis=1, keepdims=True)
    soft[np.arange(b), y] -= 1.0
    return soft / (tau * b)


def l2_anchor(f, g) -> float:
    """Squared Euclidean distance between refined and original embeddings."""
    f = as_vector(f, "f")
    g = as_vector(g, "g")
    if f.shape != g.shape:
        raise ValueError(f"dim mismatch: {f.shape} vs {g.shape}")
    d = f - g
    return float(d @ d)


def total_loss(ce: float, l2: float, cfg: LossConfig) -> float:
    if not (np.isfinite(ce) and np.isfinite(l2)):
        raise ValueError("non-finite loss component")
    return ce + cfg.lam * l2
