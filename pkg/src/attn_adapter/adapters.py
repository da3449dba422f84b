"""Cross-attention adapters that refine category and image embeddings.

Two single-block adapters share the same structure: linear query/key maps
into a hidden space, softmax attention over un-projected value rows, and a
gated residual ``out = x + p(x) * aggregate`` where ``p`` is a learned
linear projector and ``*`` is elementwise.

* memory adapter: queries are the N category embeddings, keys/values are
  the S = N*K support rows, jointly over all classes.
* local-global adapter: the query is one image's global feature, keys and
  values are its M local features.

The projector is zero-initialized, so a freshly initialized adapter is an
exact identity and the system reproduces plain zero-shot scoring at step 0.

Backward passes are hand-derived; ``numerics.grad_check`` validates them
against central differences (see the gradient tests and the ``gradcheck``
CLI command).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import LinearLayer, as_matrix, softmax_cols, softmax_vec

# Flattening order for checkpoints, the optimizer, and gradient checks.
# The key map carries no bias: a shared offset on every key row shifts all
# scores for a query by the same constant, which softmax ignores, so a key
# bias would be an untrainable dead parameter.
PARAM_SLOTS: tuple[str, ...] = (
    "memory.mlp_q.weight",
    "memory.mlp_q.bias",
    "memory.mlp_k.weight",
    "memory.projector.weight",
    "memory.projector.bias",
    "local_global.mlp_q.weight",
    "local_global.mlp_q.bias",
    "local_global.mlp_k.weight",
    "local_global.projector.weight",
    "local_global.projector.bias",
)


@dataclass
class SupportSet:
    """The N*K labeled exemplars that condition the adapters.

    ``features`` rows must be unit-norm, ``labels`` one-hot with exactly
    ``shots`` rows per class.
    """

    features: np.ndarray  # (S, D)
    labels: np.ndarray    # (S, N) one-hot
    n_classes: int
    shots: int

    def __post_init__(self):
        self.features = as_matrix(self.features, "support features")
        self.labels = as_matrix(self.labels, "support labels")
        s, _ = self.features.shape
        if s == 0:
            raise ValueError("empty support set")
        if self.labels.shape != (s, self.n_classes):
            raise ValueError(
                f"labels shape {self.labels.shape} != ({s}, {self.n_classes})"
            )
        if s != self.n_classes * self.shots:
            raise ValueError(
                f"{s} support rows != n_classes*shots = {self.n_classes * self.shots}"
            )
        one_hot = (self.labels == 1.0).sum(axis=1) == 1
        if not (np.all(one_hot) and np.allclose(self.labels.sum(axis=1), 1.0)):
            raise ValueError("support labels must be one-hot rows")
        per_class = self.labels.sum(axis=0)
        if not np.all(per_class == self.shots):
            raise ValueError(f"per-class row counts {per_class} != shots={self.shots}")
        norms = np.linalg.norm(self.features, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise ValueError("support feature rows must be unit-norm (±1e-6)")

    @classmethod
    def from_indices(cls, features, label_indices, n_classes: int) -> "SupportSet":
        """Build from integer labels; infers shots and checks balance."""
        features = as_matrix(features, "support features")
        idx = np.asarray(label_indices, dtype=np.int64)
        if idx.ndim != 1 or idx.shape[0] != features.shape[0]:
            raise ValueError("label indices must be 1-D and match feature rows")
        counts = np.bincount(idx, minlength=n_classes)
        if len(set(counts.tolist())) != 1:
            raise ValueError(f"unbalanced support: per-class counts {counts}")
        one_hot = np.zeros((features.shape[0], n_classes), dtype=np.float64)
        one_hot[np.arange(features.shape[0]), idx] = 1.0
        return cls(features, one_hot, n_classes, int(counts[0]))

    @property
    def size(self) -> int:
        return self.features.shape[0]


@dataclass
class AttentionAdapterParams:
    """Weights of one cross-attention adapter block."""

    mlp_q: LinearLayer     # D -> D_h
    mlp_k: LinearLayer     # D -> D_h
    projector: LinearLayer  # D -> D, the residual gate
    head_count: int = 1

    def __post_init__(self):
        d = self.mlp_q.in_dim
        d_h = self.mlp_q.out_dim
        if self.mlp_k.in_dim != d or self.mlp_k.out_dim != d_h:
            raise ValueError("mlp_q and mlp_k must share in/out dims")
        if self.projector.in_dim != d or self.projector.out_dim != d:
            raise ValueError(f"projector must map {d}->{d}")
        if self.head_count < 1:
            raise ValueError("head_count must be >= 1")
        if d_h % self.head_count != 0:
            raise ValueError(f"hidden dim {d_h} not divisible by {self.head_count} heads")
        if d % self.head_count != 0:
            raise ValueError(f"embedding dim {d} not divisible by {self.head_count} heads")

    @property
    def dim(self) -> int:
        return self.mlp_q.in_dim

    @property
    def hidden_dim(self) -> int:
        return self.mlp_q.out_dim


@dataclass
class AdapterParams:
    """All trainable state: one memory block plus one local-global block."""

    memory: AttentionAdapterParams
    local_global: AttentionAdapterParams
    dim: int
    hidden_dim: int
    seed: int


# Amplitude of the identity-dominant query/key initialization.  Tied
# identity-plus-noise maps make the score form an amplified cosine, so the
# attention retrieves same-class support rows for categories it has never
# trained on; the gain sharpens that retrieval enough for the softmax to
# concentrate on the matching class.  Untied pure-noise maps start with no
# selectivity, and desk-scale training then falls into a shortcut that
# regresses the few base categories instead of learning retrieval.
QK_INIT_GAIN = 8.0


def _new_block(rng: np.random.Generator, d: int, d_h: int, heads: int,
               zero_projector: bool, projector_scale: float,
               qk_gain: float | None) -> AttentionAdapterParams:
    noise_scale = 1.0 / np.sqrt(d)
    if qk_gain is None:
        wq = rng.uniform(-noise_scale, noise_scale, size=(d_h, d))
        wk = rng.uniform(-noise_scale, noise_scale, size=(d_h, d))
    else:
        wq = qk_gain * (np.eye(d_h, d) + rng.uniform(-noise_scale, noise_scale, (d_h, d)))
        wk = wq.copy()
    if zero_projector:
        wp = np.zeros((d, d))
        bp = np.zeros(d)
    else:
        wp = rng.uniform(-projector_scale, projector_scale, size=(d, d))
        bp = rng.uniform(-projector_scale, projector_scale, size=d)
    return AttentionAdapterParams(
        mlp_q=LinearLayer(wq, np.zeros(d_h)),
        mlp_k=LinearLayer(wk, bias=None),
        projector=LinearLayer(wp, bp),
        head_count=heads,
    )


def init_params(seed: int, d: int, d_h: int | None = None, heads: int = 1,
                qk_gain: float = QK_INIT_GAIN) -> AdapterParams:
    """Fresh adapters: tied identity-plus-noise query/key maps, zero projectors.

    The zero projector makes both adapters exact identities, so untrained
    refined logits coincide bitwise with zero-shot logits.  Deterministic
    in ``seed``; the memory block consumes the stream first.
    """
    d_h = d if d_h is None else d_h
    rng = np.random.default_rng(seed)
    memory = _new_block(rng, d, d_h, heads, zero_projector=True,
                        projector_scale=0.0, qk_gain=qk_gain)
    local_global = _new_block(rng, d, d_h, heads, zero_projector=True,
                              projector_scale=0.0, qk_gain=qk_gain)
    return AdapterParams(memory, local_global, dim=d, hidden_dim=d_h, seed=seed)


def random_params(seed: int, d: int, d_h: int | None = None, heads: int = 1,
                  projector_scale: float = 0.5) -> AdapterParams:
    """All layers random and untied, projectors included.

    Only for gradient checking: a zero projector blocks the gradient path
    into the query/key layers, so checks need a generic point instead.
    """
    d_h = d if d_h is None else d_h
    rng = np.random.default_rng(seed)
    memory = _new_block(rng, d, d_h, heads, zero_projector=False,
                        projector_scale=projector_scale, qk_gain=None)
    local_global = _new_block(rng, d, d_h, heads, zero_projector=False,
                              projector_scale=projector_scale, qk_gain=None)
    return AdapterParams(memory, local_global, dim=d, hidden_dim=d_h, seed=seed)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _head_slices(d: int, heads: int) -> list[slice]:
    w = d // heads
    return [slice(h * w, (h + 1) * w) for h in range(heads)]


def memory_forward_cached(params: AttentionAdapterParams, w, support_features):
    """Refine category embeddings against support rows; keep intermediates.

    Per category i: scores over all S support rows, softmax along the
    support axis, value aggregation of the raw (un-projected) rows, then
    the gated residual.  Multi-head runs on contiguous hidden/value slices
    and concatenates the aggregated slices.
    """
    w = as_matrix(w, "category embeddings")
    f = as_matrix(support_features, "support features")
    if f.shape[0] == 0:
        raise ValueError("empty support set")
    if w.shape[1] != params.dim or f.shape[1] != params.dim:
        raise ValueError(
            f"embedding dim mismatch: w {w.shape}, support {f.shape}, adapter dim {params.dim}"
        )
    q = params.mlp_q.apply(w)   # (N, D_h)
    k = params.mlp_k.apply(f)   # (S, D_h)

    h_slices = _head_slices(params.hidden_dim, params.head_count)
    v_slices = _head_slices(params.dim, params.head_count)
    scale = np.sqrt(params.hidden_dim / params.head_count)

    attn = []       # per head: (S, N)
    f_hat = np.empty_like(w)
    for hs, vs in zip(h_slices, v_slices):
        scores = k[:, hs] @ q[:, hs].T / scale
        a = softmax_cols(scores)
        attn.append(a)
        f_hat[:, vs] = a.T @ f[:, vs]

    p = params.projector.apply(w)  # (N, D)
    w_hat = w + p * f_hat
    cache = {"w": w, "f": f, "q": q, "k": k, "attn": attn, "f_hat": f_hat,
             "p": p, "scale": scale, "h_slices": h_slices, "v_slices": v_slices}
    return w_hat, cache


def memory_attn_forward(params: AttentionAdapterParams, w, support: SupportSet) -> np.ndarray:
    """Refined category embeddings, shape (N, D)."""
    w_hat, _ = memory_forward_cached(params, w, support.features)
    return w_hat


def memory_backward(params: AttentionAdapterParams, cache, d_w_hat) -> dict[str, np.ndarray]:
    """Parameter gradients of the memory block given d(loss)/d(w_hat)."""
    w, f = cache["w"], cache["f"]
    q, k = cache["q"], cache["k"]
    p, f_hat = cache["p"], cache["f_hat"]
    scale = cache["scale"]

    d_p = d_w_hat * f_hat
    d_f_hat = d_w_hat * p

    d_q = np.zeros_like(q)
    d_k = np.zeros_like(k)
    for a, hs, vs in zip(cache["attn"], cache["h_slices"], cache["v_slices"]):
        d_a = f[:, vs] @ d_f_hat[:, vs].T                      # (S, N)
        # column-softmax backward: ds = a * (da - sum(a*da) per column)
        d_scores = a * (d_a - (a * d_a).sum(axis=0, keepdims=True))
        d_k[:, hs] += d_scores @ q[:, hs] / scale
        d_q[:, hs] += d_scores.T @ k[:, hs] / scale

    return {
        "mlp_q.weight": d_q.T @ w,
        "mlp_q.bias": d_q.sum(axis=0),
        "mlp_k.weight": d_k.T @ f,
        "projector.weight": d_p.T @ w,
        "projector.bias": d_p.sum(axis=0),
    }


def local_global_forward_cached(params: AttentionAdapterParams, g, locals_):
    """Refine one global feature against its local rows; keep intermediates."""
    g = np.asarray(g, dtype=np.float64)
    l = as_matrix(locals_, "local features")
    if g.ndim != 1:
        raise ValueError(f"global feature must be 1-D, got ndim={g.ndim}")
    if l.shape[0] == 0:
        raise ValueError("no local features")
    if g.shape[0] != params.dim or l.shape[1] != params.dim:
        raise ValueError(
            f"embedding dim mismatch: g {g.shape}, locals {l.shape}, adapter dim {params.dim}"
        )
    q = params.mlp_q.apply(g)   # (D_h,)
    k = params.mlp_k.apply(l)   # (M, D_h)

    h_slices = _head_slices(params.hidden_dim, params.head_count)
    v_slices = _head_slices(params.dim, params.head_count)
    scale = np.sqrt(params.hidden_dim / params.head_count)

    attn = []       # per head: (M,)
    l_hat = np.empty_like(g)
    for hs, vs in zip(h_slices, v_slices):
        scores = k[:, hs] @ q[hs] / scale
        a = softmax_vec(scores)
        attn.append(a)
        l_hat[vs] = a @ l[:, vs]

    p = params.projector.apply(g)
    f_out = g + p * l_hat
    cache = {"g": g, "l": l, "q": q, "k": k, "attn": attn, "l_hat": l_hat,
             "p": p, "scale": scale, "h_slices": h_slices, "v_slices": v_slices}
    return f_out, cache


def local_global_forward(params: AttentionAdapterParams, g, locals_) -> np.ndarray:
    """Refined image embedding, shape (D,)."""
    f_out, _ = local_global_forward_cached(params, g, locals_)
    return f_out


def local_global_backward(params: AttentionAdapterParams, cache, d_f) -> dict[str, np.ndarray]:
    """Parameter gradients of the local-global block given d(loss)/d(f)."""
    g, l = cache["g"], cache["l"]
    q, k = cache["q"], cache["k"]
    p, l_hat = cache["p"], cache["l_hat"]
    scale = cache["scale"]

    d_p = d_f * l_hat
    d_l_hat = d_f * p

    d_q = np.zeros_like(q)
    d_k = np.zeros_like(k)
    for a, hs, vs in zip(cache["attn"], cache["h_slices"], cache["v_slices"]):
        d_a = l[:, vs] @ d_l_hat[vs]                 # (M,)
        d_scores = a * (d_a - a @ d_a)
        d_q[hs] += k[:, hs].T @ d_scores / scale
        d_k[:, hs] += np.outer(d_scores, q[hs]) / scale

    return {
        "mlp_q.weight": np.outer(d_q, g),
        "mlp_q.bias": d_q,
        "mlp_k.weight": d_k.T @ l,
        "projector.weight": np.outer(d_p, g),
        "projector.bias": d_p,
    }


# ---------------------------------------------------------------------------
# parameter flattening (optimizer, checkpoints, gradient checks)
# ---------------------------------------------------------------------------

def _resolve(params: AdapterParams, slot: str) -> np.ndarray:
    block_name, layer_name, field = slot.split(".")
    layer = getattr(getattr(params, block_name), layer_name)
    return getattr(layer, field)


def param_arrays(params: AdapterParams) -> dict[str, np.ndarray]:
    """Live views of every trainable array, keyed by slot name."""
    return {slot: _resolve(params, slot) for slot in PARAM_SLOTS}


def params_to_vector(params: AdapterParams) -> np.ndarray:
    return np.concatenate([_resolve(params, s).ravel() for s in PARAM_SLOTS])


def vector_to_params(vec, template: AdapterParams) -> AdapterParams:
    """Rebuild an AdapterParams with the template's shapes from a flat vector."""
    vec = np.asarray(vec, dtype=np.float64)
    shapes = {slot: _resolve(template, slot).shape for slot in PARAM_SLOTS}
    total = sum(int(np.prod(s)) for s in shapes.values())
    if vec.size != total:
        raise ValueError(f"vector length {vec.size} != parameter count {total}")
    arrays = {}
    offset = 0
    for slot, shape in shapes.items():
        n = int(np.prod(shape))
        arrays[slot] = vec[offset:offset + n].reshape(shape).copy()
        offset += n

    def block(name: str) -> AttentionAdapterParams:
        return AttentionAdapterParams(
            mlp_q=LinearLayer(arrays[f"{name}.mlp_q.weight"], arrays[f"{name}.mlp_q.bias"]),
            mlp_k=LinearLayer(arrays[f"{name}.mlp_k.weight"], bias=None),
            projector=LinearLayer(arrays[f"{name}.projector.weight"],
                                  arrays[f"{name}.projector.bias"]),
            head_count=getattr(template, name).head_count,
        )

    return AdapterParams(block("memory"), block("local_global"),
                         dim=template.dim, hidden_dim=template.hidden_dim,
                         seed=template.seed)


def grads_to_vector(memory_grads: dict, local_global_grads: dict,
                    template: AdapterParams) -> np.ndarray:
    """Flatten per-block gradient dicts in PARAM_SLOTS order."""
    merged = {f"memory.{k}": v for k, v in memory_grads.items()}
    merged.update({f"local_global.{k}": v for k, v in local_global_grads.items()})
    parts = []
    for slot in PARAM_SLOTS:
        g = merged.get(slot)
        parts.append(np.zeros(_resolve(template, slot).shape).ravel()
                     if g is None else np.asarray(g).ravel())
    return np.concatenate(parts)
