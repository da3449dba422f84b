"""Adapter training and episodic evaluation.

Training follows the online protocol: adapters are optimized once on a
base archive (support resampled per epoch, queries are the leftover
samples), then frozen; evaluation conditions the frozen adapters on a
fresh support episode from whatever archive is being scored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .adapters import (
    AdapterParams,
    grads_to_vector,
    init_params,
    local_global_forward_cached,
    local_global_backward,
    memory_forward_cached,
    memory_backward,
    params_to_vector,
    random_params,
    vector_to_params,
)
from .archive import EmbeddingArchive
from .episodes import Episode, derive_seed, sample_episode
from .losses import (
    LossConfig,
    TipConfig,
    cosine_logits_backward,
    cross_entropy,
    cross_entropy_backward,
    tip_adapter_logits,
    zero_shot_logits,
)


class TrainingDivergedError(RuntimeError):
    """Raised when the loss stops being finite, with epoch/step context."""


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 2e-2   # desk-scale runs are ~160 steps; smaller rates stall
    weight_decay: float = 1e-2
    seed: int = 0
    k_shots: int = 16
    hidden_dim: int | None = None   # None -> embedding dim
    head_count: int = 1
    loss: LossConfig = field(default_factory=LossConfig)
    resample_support: bool = True   # fresh support episode each epoch

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr <= 0.0:
            raise ValueError("lr must be > 0")
        if self.batch_size < 1 or self.k_shots < 1:
            raise ValueError("batch_size and k_shots must be >= 1")


@dataclass
class EpisodeResult:
    accuracy: float
    mean_loss: float
    per_class_acc: np.ndarray
    predictions: np.ndarray
    logits: np.ndarray


class AdamW:
    """Adam with decoupled weight decay on a flat parameter vector."""

    def __init__(self, n_params: int, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return theta - lr * (m_hat / (np.sqrt(v_hat) + self.eps)
                             + self.weight_decay * theta)


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Anneal from base_lr toward 0 over total_steps."""
    if total_steps <= 0:
        return base_lr
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def batch_loss_and_grads(params: AdapterParams, w, support_features,
                         query_globals, query_locals, targets,
                         loss_cfg: LossConfig):
    """Forward and backward of the full objective on one query batch.

    Returns (loss, ce, grad_vector, predictions).  The memory block is
    shared across the batch; per-query local-global passes and the cosine
    scoring feed one cross-entropy plus the mean L2 anchor.
    """
    w_hat, mem_cache = memory_forward_cached(params.memory, w, support_features)
    b = len(targets)

    logits = np.empty((b, w_hat.shape[0]))
    lg_caches = []
    f_out = np.empty((b, params.dim))
    for i in range(b):
        f_i, cache_i = local_global_forward_cached(
            params.local_global, query_globals[i], query_locals[i])
        f_out[i] = f_i
        lg_caches.append(cache_i)
        logits[i] = zero_shot_logits(f_i, w_hat)

    ce = cross_entropy(logits, targets, loss_cfg.tau)
    diffs = f_out - query_globals
    l2_mean = float(np.mean(np.sum(diffs * diffs, axis=1)))
    loss = ce + loss_cfg.lam * l2_mean

    d_logits = cross_entropy_backward(logits, targets, loss_cfg.tau)
    d_w_hat = np.zeros_like(w_hat)
    lg_grads = None
    for i in range(b):
        d_w_hat_i, d_f = cosine_logits_backward(f_out[i], w_hat, d_logits[i])
        d_w_hat += d_w_hat_i
        d_f = d_f + (2.0 * loss_cfg.lam / b) * diffs[i]
        g_i = local_global_backward(params.local_global, lg_caches[i], d_f)
        if lg_grads is None:
            lg_grads = g_i
        else:
            for key in lg_grads:
                lg_grads[key] += g_i[key]
    mem_grads = memory_backward(params.memory, mem_cache, d_w_hat)

    grad = grads_to_vector(mem_grads, lg_grads, params)
    return loss, ce, grad, logits.argmax(axis=1)


def make_gradcheck_instance(seed: int, n_classes: int = 5, k_shots: int = 3,
                            d: int = 8, d_h: int = 8, m_locals: int = 4,
                            batch: int = 6, heads: int = 1):
    """Random problem instance for finite-difference validation.

    Parameters are drawn with open (nonzero) projector gates; a zero gate
    would cut the gradient path into the query/key layers and make the
    check vacuous there.  Category rows share a base direction (spread
    0.3): widely spread categories make the tempered softmax one-hot per
    query, and the resulting near-zero gradient coordinates drown central
    differences in float rounding noise.  Returns (params, loss_and_grad)
    where the closure maps a flat parameter vector to (loss, grad).
    """
    params = random_params(derive_seed(seed, "gradcheck-params"), d, d_h, heads)
    rng = np.random.default_rng(derive_seed(seed, "gradcheck-data"))

    def unit_rows(n, around=None, spread=0.3):
        rows = rng.standard_normal((n, d))
        if around is not None:
            rows = around + spread * rows
        return rows / np.linalg.norm(rows, axis=1, keepdims=True)

    base = unit_rows(1)[0]
    w = unit_rows(n_classes, around=base)
    support = unit_rows(n_classes * k_shots)
    query_globals = unit_rows(batch)
    query_locals = rng.standard_normal((batch, m_locals, d))
    targets = rng.integers(0, n_classes, batch)
    cfg = LossConfig(tau=0.01, lam=0.1)

    def loss_and_grad(theta):
        p = vector_to_params(theta, params)
        loss, _, grad, _ = batch_loss_and_grads(
            p, w, support, query_globals, query_locals, targets, cfg)
        return loss, grad

    return params, loss_and_grad


def train(archive: EmbeddingArchive, cfg: TrainConfig) -> tuple[AdapterParams, list[dict]]:
    """Optimize both adapters on an archive; returns (params, history).

    Each epoch draws a seeded support episode over all classes and sweeps
    the remaining samples as shuffled query batches.  History carries one
    record per epoch: epoch, lr, loss, train_acc.  Deterministic in
    ``cfg.seed``; epochs=0 returns the untouched zero-gate initialization.
    """
    params = init_params(derive_seed(cfg.seed, "init"), archive.d,
                         cfg.hidden_dim, cfg.head_count)
    if cfg.epochs == 0:
        return params, []

    w = archive.category_embeddings
    n_queries = archive.n_samples - archive.n_classes * cfg.k_shots
    steps_per_epoch = math.ceil(n_queries / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch

    theta = params_to_vector(params)
    opt = AdamW(theta.size, weight_decay=cfg.weight_decay)
    history = []
    step = 0
    for epoch in range(cfg.epochs):
        sup_epoch = epoch if cfg.resample_support else 0
        episode = sample_episode(archive, range(archive.n_classes), cfg.k_shots,
                                 derive_seed(cfg.seed, f"support:{sup_epoch}"))
        order = np.random.default_rng(
            derive_seed(cfg.seed, f"batches:{epoch}")).permutation(len(episode.query_labels))

        epoch_lr = cosine_lr(cfg.lr, step, total_steps)
        losses, n_correct = [], 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            params = vector_to_params(theta, params)
            loss, _, grad, preds = batch_loss_and_grads(
                params, w, episode.support.features,
                episode.query_globals[idx], episode.query_locals[idx],
                episode.query_labels[idx], cfg.loss)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, step {step}")
            theta = opt.step(theta, grad, cosine_lr(cfg.lr, step, total_steps))
            step += 1
            losses.append(loss)
            n_correct += int((preds == episode.query_labels[idx]).sum())

        history.append({
            "epoch": epoch,
            "lr": epoch_lr,
            "loss": float(np.mean(losses)),
            "train_acc": n_correct / len(order),
        })

    return vector_to_params(theta, params), history


def _score_episode(episode: Episode, logits: np.ndarray,
                   l2_terms: np.ndarray, loss_cfg: LossConfig) -> EpisodeResult:
    labels = episode.query_labels
    preds = logits.argmax(axis=1)
    acc = float((preds == labels).mean())
    per_class = np.array([(preds[labels == r] == r).mean()
                          for r in range(len(episode.class_subset))])
    ce = cross_entropy(logits, labels, loss_cfg.tau)
    mean_loss = ce + loss_cfg.lam * float(np.mean(l2_terms))
    return EpisodeResult(acc, mean_loss, per_class, preds, logits)


def evaluate(params: AdapterParams, archive: EmbeddingArchive,
             class_subset=None, k: int = 16, seed: int = 0,
             loss_cfg: LossConfig | None = None) -> EpisodeResult:
    """Score frozen adapters on one episode of an archive.

    The memory block refines the subset's category embeddings against the
    episode support; each query is refined by the local-global block and
    scored by cosine.  ``params`` is never mutated.
    """
    loss_cfg = loss_cfg or LossConfig()
    if k < 1:
        raise ValueError("adapter evaluation needs k >= 1 support shots")
    subset = tuple(range(archive.n_classes)) if class_subset is None else tuple(class_subset)
    episode = sample_episode(archive, subset, k, seed)
    w = archive.category_embeddings[list(subset)]
    w_hat, _ = memory_forward_cached(params.memory, w, episode.support.features)

    q = len(episode.query_labels)
    logits = np.empty((q, len(subset)))
    l2_terms = np.empty(q)
    for i in range(q):
        f_i, _ = local_global_forward_cached(
            params.local_global, episode.query_globals[i], episode.query_locals[i])
        logits[i] = zero_shot_logits(f_i, w_hat)
        diff = f_i - episode.query_globals[i]
        l2_terms[i] = diff @ diff
    return _score_episode(episode, logits, l2_terms, loss_cfg)


def evaluate_zero_shot(archive: EmbeddingArchive, class_subset=None, k: int = 16,
                       seed: int = 0, loss_cfg: LossConfig | None = None) -> EpisodeResult:
    """Zero-shot baseline on the same episode a given (subset, k, seed) yields.

    ``k=0`` scores every sample of the subset instead of an episode's
    query split; zero-shot needs no support, so the whole archive is a
    valid evaluation set (this is what extractors report against).
    """
    loss_cfg = loss_cfg or LossConfig()
    subset = tuple(range(archive.n_classes)) if class_subset is None else tuple(class_subset)
    w = archive.category_embeddings[list(subset)]
    if k == 0:
        idx = np.concatenate([np.flatnonzero(archive.labels == c) for c in subset])
        labels = np.concatenate([np.full((archive.labels == c).sum(), rel, dtype=np.int64)
                                 for rel, c in enumerate(subset)])
        globals_ = archive.global_features[idx]
        logits = np.stack([zero_shot_logits(g, w) for g in globals_])
        episode = Episode(
            support=None, query_globals=globals_,
            query_locals=archive.local_features[idx], query_labels=labels,
            class_subset=subset, support_indices=np.empty(0, dtype=np.int64),
            query_indices=idx)
    else:
        episode = sample_episode(archive, subset, k, seed)
        logits = np.stack([zero_shot_logits(g, w) for g in episode.query_globals])
    return _score_episode(episode, logits, np.zeros(len(episode.query_labels)), loss_cfg)


def evaluate_tip(archive: EmbeddingArchive, tip_cfg: TipConfig, class_subset=None,
                 k: int = 16, seed: int = 0,
                 loss_cfg: LossConfig | None = None) -> EpisodeResult:
    """Cache-model baseline conditioned on the episode support."""
    loss_cfg = loss_cfg or LossConfig()
    if k < 1:
        raise ValueError("the cache model needs k >= 1 support shots")
    subset = tuple(range(archive.n_classes)) if class_subset is None else tuple(class_subset)
    episode = sample_episode(archive, subset, k, seed)
    w = archive.category_embeddings[list(subset)]
    logits = np.stack([tip_adapter_logits(g, w, episode.support, tip_cfg)
                       for g in episode.query_globals])
    return _score_episode(episode, logits, np.zeros(len(episode.query_labels)), loss_cfg)


def tip_hyperparam_search(archive: EmbeddingArchive, alphas, betas, k: int = 16,
                          seed: int = 0) -> tuple[TipConfig, float]:
    """Exhaustive grid search for the cache model on one held-out episode.

    Ties go to the smaller alpha, then the smaller beta.
    """
    alphas = sorted(float(a) for a in alphas)
    betas = sorted(float(b) for b in betas)
    if not alphas or not betas:
        raise ValueError("alpha and beta grids must be nonempty")

    episode = sample_episode(archive, range(archive.n_classes), k, seed)
    w = archive.category_embeddings
    base = np.stack([zero_shot_logits(g, w) for g in episode.query_globals])
    g_unit = episode.query_globals / np.linalg.norm(
        episode.query_globals, axis=1, keepdims=True)
    sims = g_unit @ episode.support.features.T          # (Q, S)
    labels = episode.query_labels

    best_cfg, best_acc = None, -1.0
    for alpha in alphas:
        for beta in betas:
            cache = np.exp(-beta * (1.0 - sims)) @ episode.support.labels
            logits = base + alpha * cache
            acc = float((logits.argmax(axis=1) == labels).mean())
            if acc > best_acc:
                best_cfg, best_acc = TipConfig(alpha, beta), acc
    return best_cfg, best_acc
