"""Synthetic archives, the base/novel split, and N-way K-shot episodes."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .adapters import SupportSet
from .archive import EmbeddingArchive
from .numerics import l2_normalize_rows


def derive_seed(master: int, name: str) -> int:
    """Stable named sub-seed so one --seed flag fans out reproducibly."""
    digest = hashlib.sha256(f"{master}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass
class Episode:
    """One K-shot support/query split over a class subset.

    Query labels are subset-relative (positions into ``class_subset``);
    ``support_indices``/``query_indices`` are archive sample indices and
    are disjoint by construction.  ``support`` is None only for whole-
    archive zero-shot scoring (k=0), which conditions on nothing.
    """

    support: SupportSet | None
    query_globals: np.ndarray     # (Q, D)
    query_locals: np.ndarray      # (Q, M, D)
    query_labels: np.ndarray      # (Q,) subset-relative
    class_subset: tuple[int, ...]
    support_indices: np.ndarray
    query_indices: np.ndarray


def synth_dataset(seed: int, n_classes: int, k_support: int, q_query: int,
                  d: int, m: int, noise: float,
                  text_noise: float | None = None) -> EmbeddingArchive:
    """Generate a unit-sphere mixture archive, deterministic in ``seed``.

    Class prototypes are drawn uniformly on the sphere.  Image globals are
    noisy prototype copies; local blocks mix one noisy "signal" row with
    m-1 pure-noise distractors.  Category (text-side) embeddings get their
    own noise so the two views disagree, which leaves headroom for the
    adapters to close.  ``text_noise`` defaults to ``noise``.

    Per-class zero-shot accuracy over all generated samples is computed
    and stored, so the archive is directly splittable into base/novel.
    """
    if n_classes < 2 or d < 2:
        raise ValueError("need n_classes >= 2 and d >= 2")
    if k_support < 1 or q_query < 1 or m < 1:
        raise ValueError("k_support, q_query, and m must be >= 1")
    text_noise = noise if text_noise is None else text_noise

    rng = np.random.default_rng(seed)
    protos = l2_normalize_rows(rng.standard_normal((n_classes, d)))
    category = l2_normalize_rows(protos + text_noise * rng.standard_normal((n_classes, d)))

    per_class = k_support + q_query
    s = n_classes * per_class
    globals_ = np.empty((s, d))
    locals_ = np.empty((s, m, d))
    labels = np.empty(s, dtype=np.int64)
    row = 0
    for c in range(n_classes):
        for _ in range(per_class):
            globals_[row] = _noisy_unit(rng, protos[c], noise)
            locals_[row, 0] = _noisy_unit(rng, protos[c], noise)
            for j in range(1, m):
                locals_[row, j] = _unit(rng.standard_normal(d))
            labels[row] = c
            row += 1

    sims = globals_ @ category.T
    preds = sims.argmax(axis=1)
    acc = np.array([(preds[labels == c] == c).mean() for c in range(n_classes)])

    return EmbeddingArchive(
        class_names=[f"class_{c:03d}" for c in range(n_classes)],
        category_embeddings=category,
        global_features=globals_,
        local_features=locals_,
        labels=labels,
        per_class_zero_shot_acc=acc,
    )


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _noisy_unit(rng: np.random.Generator, proto: np.ndarray, noise: float) -> np.ndarray:
    return _unit(proto + noise * rng.standard_normal(proto.shape[0]))


def base_novel_split(per_class_acc) -> tuple[list[int], list[int]]:
    """Median split by zero-shot accuracy: easy half base, hard half novel.

    Classes sort descending by accuracy with ties broken by ascending
    index; an odd class count puts the extra class in base.
    """
    if per_class_acc is None:
        raise ValueError("missing per-class accuracies")
    acc = np.asarray(per_class_acc, dtype=np.float64)
    if acc.ndim != 1 or acc.size == 0:
        raise ValueError("per-class accuracies must be a nonempty vector")
    order = sorted(range(acc.size), key=lambda i: (-acc[i], i))
    cut = (acc.size + 1) // 2
    return order[:cut], order[cut:]


def sample_episode(archive: EmbeddingArchive, class_subset, k: int, seed: int) -> Episode:
    """Seeded K-shot draw per class; every leftover sample becomes a query.

    Each class's shuffle is keyed by (seed, class id), so the same classes
    yield the same episode regardless of subset order.
    """
    subset = tuple(int(c) for c in class_subset)
    if len(subset) == 0:
        raise ValueError("class subset is empty")
    if len(set(subset)) != len(subset):
        raise ValueError("class subset contains duplicates")

    support_idx, query_idx, query_rel = [], [], []
    for rel, c in enumerate(subset):
        if not (0 <= c < archive.n_classes):
            raise ValueError(f"class index {c} out of range")
        pool = np.flatnonzero(archive.labels == c)
        if pool.size <= k:
            raise ValueError(
                f"class {c} has {pool.size} samples, needs more than k={k}"
            )
        rng = np.random.default_rng(derive_seed(seed, f"class:{c}"))
        perm = pool[rng.permutation(pool.size)]
        support_idx.extend(perm[:k])
        query_idx.extend(perm[k:])
        query_rel.extend([rel] * (pool.size - k))

    support_idx = np.asarray(support_idx, dtype=np.int64)
    query_idx = np.asarray(query_idx, dtype=np.int64)
    features = l2_normalize_rows(archive.global_features[support_idx])
    support_labels = np.repeat(np.arange(len(subset)), k)
    support = SupportSet.from_indices(features, support_labels, len(subset))

    return Episode(
        support=support,
        query_globals=archive.global_features[query_idx],
        query_locals=archive.local_features[query_idx],
        query_labels=np.asarray(query_rel, dtype=np.int64),
        class_subset=subset,
        support_indices=support_idx,
        query_indices=query_idx,
    )


def subset_archive(archive: EmbeddingArchive, classes) -> EmbeddingArchive:
    """Restrict an archive to a class subset, relabeling 0..len-1."""
    subset = [int(c) for c in classes]
    if len(set(subset)) != len(subset) or not subset:
        raise ValueError("class subset must be nonempty and duplicate-free")
    remap = {c: i for i, c in enumerate(subset)}
    mask = np.isin(archive.labels, subset)
    labels = np.array([remap[c] for c in archive.labels[mask]], dtype=np.int64)
    acc = archive.per_class_zero_shot_acc
    return EmbeddingArchive(
        class_names=[archive.class_names[c] for c in subset],
        category_embeddings=archive.category_embeddings[subset],
        global_features=archive.global_features[mask],
        local_features=archive.local_features[mask],
        labels=labels,
        per_class_zero_shot_acc=None if acc is None else acc[subset],
    )
