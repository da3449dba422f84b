"""Input validation shared by the estimator facade and the CLI."""

from __future__ import annotations

import numpy as np


def check_category_embeddings(w) -> np.ndarray:
    """Validate an (N, D) category matrix: finite with nonzero rows."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] < 1:
        raise ValueError("category embeddings must be a nonempty 2-D array")
    if not np.all(np.isfinite(w)):
        raise ValueError("category embeddings must be finite")
    if np.any(np.linalg.norm(w, axis=1) == 0.0):
        raise ValueError("category embeddings contain a zero row")
    return w


def check_embedding_stack(x, d: int | None = None, require_locals: bool = False):
    """Split sample features into (globals, locals).

    Accepts either a (n, D) matrix of global embeddings, or an
    (n, 1 + M, D) stack whose first slice per sample is the global
    embedding and the remaining M slices are local features.

    Returns ``(globals, locals_or_None)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        if require_locals:
            raise ValueError(
                "this estimator needs local features: pass X with shape "
                "(n_samples, 1 + n_locals, dim), slice 0 holding the global embedding"
            )
        g, loc = x, None
    elif x.ndim == 3:
        if x.shape[1] < 2:
            raise ValueError("feature stack needs at least one local slice per sample")
        g, loc = x[:, 0, :], x[:, 1:, :]
    else:
        raise ValueError(f"X must be 2-D or 3-D, got ndim={x.ndim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("X must be finite")
    if d is not None and g.shape[1] != d:
        raise ValueError(f"X feature dim {g.shape[1]} != expected dim {d}")
    if np.any(np.linalg.norm(g, axis=1) == 0.0):
        raise ValueError("X contains a zero global embedding")
    return g, loc


def check_labels(y, n_classes: int, n_samples: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n_samples:
        raise ValueError(f"y must be 1-D with {n_samples} entries")
    y = y.astype(np.int64)
    if np.any(y < 0) or np.any(y >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    return y
