"""The ATNA binary container for embedding archives and checkpoints.

Layout, all little-endian:

    bytes 0-3   magic ``ATNA``
    bytes 4-7   u32 format version (currently 1)
    bytes 8-15  u64 JSON header length
    ...         UTF-8 JSON header
    ...         raw float32 payloads, concatenated in header field order

The header carries ``kind`` ("archive" or "checkpoint"), dims, class
names / adapter metadata, and a ``fields`` list of ``{name, shape}``
entries declaring the payload order.  The format is self-describing so
any language can write it with a JSON encoder and a float32 writer.

Payloads are stored in float32 and widened to float64 on load; the
in-memory numeric path stays double precision.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .adapters import AdapterParams, AttentionAdapterParams, PARAM_SLOTS
from .numerics import LinearLayer

MAGIC = b"ATNA"
FORMAT_VERSION = 1


class ArchiveError(Exception):
    """Malformed or inconsistent ATNA container."""


class BadMagicError(ArchiveError):
    pass


class UnsupportedVersionError(ArchiveError):
    pass


class TruncatedArchiveError(ArchiveError):
    pass


class ShapeMismatchError(ArchiveError):
    pass


@dataclass
class EmbeddingArchive:
    """Precomputed embeddings for one dataset.

    ``category_embeddings`` has unit rows (one per class); each sample has
    a unit global feature, an (M, D) block of local features, and a label.
    ``per_class_zero_shot_acc`` is optional and drives the base/novel split.
    """

    class_names: list[str]
    category_embeddings: np.ndarray   # (N, D)
    global_features: np.ndarray       # (S, D)
    local_features: np.ndarray        # (S, M, D)
    labels: np.ndarray                # (S,) int
    per_class_zero_shot_acc: np.ndarray | None = None
    version: int = FORMAT_VERSION

    def __post_init__(self):
        self.category_embeddings = np.asarray(self.category_embeddings, dtype=np.float64)
        self.global_features = np.asarray(self.global_features, dtype=np.float64)
        self.local_features = np.asarray(self.local_features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n, s = len(self.class_names), self.labels.shape[0]
        if self.category_embeddings.shape != (n, self.d):
            raise ShapeMismatchError(
                f"category embeddings {self.category_embeddings.shape} != ({n}, {self.d})"
            )
        if self.global_features.shape != (s, self.d):
            raise ShapeMismatchError(
                f"global features {self.global_features.shape} != ({s}, {self.d})"
            )
        if self.local_features.shape != (s, self.m, self.d):
            raise ShapeMismatchError(
                f"local features {self.local_features.shape} != ({s}, {self.m}, {self.d})"
            )
        if s and (self.labels.min() < 0 or self.labels.max() >= n):
            raise ShapeMismatchError(f"labels must lie in [0, {n})")
        norms = np.linalg.norm(self.global_features, axis=1)
        if s and not np.allclose(norms, 1.0, atol=1e-6):
            raise ShapeMismatchError("global feature rows must be unit-norm (±1e-6)")
        if self.per_class_zero_shot_acc is not None:
            acc = np.asarray(self.per_class_zero_shot_acc, dtype=np.float64)
            if acc.shape != (n,):
                raise ShapeMismatchError(f"per-class accuracy shape {acc.shape} != ({n},)")
            if np.any(acc < 0.0) or np.any(acc > 1.0):
                raise ShapeMismatchError("per-class accuracies must lie in [0, 1]")
            self.per_class_zero_shot_acc = acc

    @property
    def n_classes(self) -> int:
        return self.category_embeddings.shape[0]

    @property
    def n_samples(self) -> int:
        return self.labels.shape[0]

    @property
    def d(self) -> int:
        return self.category_embeddings.shape[1]

    @property
    def m(self) -> int:
        return self.local_features.shape[1]


# ---------------------------------------------------------------------------
# container read/write
# ---------------------------------------------------------------------------

def _write_container(path, header: dict, arrays: list[tuple[str, np.ndarray]]) -> None:
    header = dict(header)
    header["fields"] = [{"name": n, "shape": list(a.shape)} for n, a in arrays]
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())
    os.replace(tmp, path)


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise TruncatedArchiveError(f"truncated file while reading {what}")
    return data


def _read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if len(magic) < 4:
            raise TruncatedArchiveError("file shorter than the 4-byte magic")
        if magic != MAGIC:
            raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != FORMAT_VERSION:
            raise UnsupportedVersionError(
                f"unsupported format version {version}, expected {FORMAT_VERSION}"
            )
        (hlen,) = struct.unpack("<Q", _read_exact(fh, 8, "header length"))
        try:
            header = json.loads(_read_exact(fh, hlen, "JSON header"))
        except ValueError as exc:
            raise ArchiveError(f"corrupt JSON header: {exc}") from exc
        if not isinstance(header, dict) or "fields" not in header:
            raise ArchiveError("JSON header must be an object with a 'fields' list")
        payloads = {}
        for entry in header["fields"]:
            name, shape = entry["name"], tuple(int(x) for x in entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = _read_exact(fh, 4 * count, f"payload '{name}'")
            payloads[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
        trailing = fh.read(1)
        if trailing:
            raise ArchiveError("trailing bytes after the declared payloads")
    return header, payloads


def _require(header: dict, key: str):
    if key not in header:
        raise ArchiveError(f"header missing required key '{key}'")
    return header[key]


def save_archive(path, archive: EmbeddingArchive) -> None:
    header = {
        "kind": "archive",
        "d": archive.d,
        "m": archive.m,
        "n_classes": archive.n_classes,
        "n_samples": archive.n_samples,
        "class_names": list(archive.class_names),
    }
    arrays = [
        ("category_embeddings", archive.category_embeddings),
        ("global_features", archive.global_features),
        ("local_features", archive.local_features),
        ("labels", archive.labels.astype(np.float64)),
    ]
    if archive.per_class_zero_shot_acc is not None:
        arrays.append(("per_class_zero_shot_acc", archive.per_class_zero_shot_acc))
    _write_container(path, header, arrays)


def load_archive(path) -> EmbeddingArchive:
    header, payloads = _read_container(path)
    if _require(header, "kind") != "archive":
        raise ArchiveError(f"expected kind 'archive', found '{header['kind']}'")
    n = int(_require(header, "n_classes"))
    s = int(_require(header, "n_samples"))
    d = int(_require(header, "d"))
    m = int(_require(header, "m"))
    class_names = _require(header, "class_names")
    if len(class_names) != n:
        raise ShapeMismatchError(f"{len(class_names)} class names != n_classes={n}")

    expected = {
        "category_embeddings": (n, d),
        "global_features": (s, d),
        "local_features": (s, m, d),
        "labels": (s,),
    }
    for name, shape in expected.items():
        if name not in payloads:
            raise ShapeMismatchError(f"missing payload '{name}'")
        if payloads[name].shape != shape:
            raise ShapeMismatchError(
                f"payload '{name}' has shape {payloads[name].shape}, header implies {shape}"
            )
    labels_f = payloads["labels"]
    labels = labels_f.astype(np.int64)
    if np.any(labels_f != labels):
        raise ArchiveError("non-integer label payload")

    acc = payloads.get("per_class_zero_shot_acc")
    if acc is not None and acc.shape != (n,):
        raise ShapeMismatchError(f"per-class accuracy shape {acc.shape}, expected ({n},)")
    return EmbeddingArchive(
        class_names=list(class_names),
        category_embeddings=payloads["category_embeddings"],
        global_features=payloads["global_features"],
        local_features=payloads["local_features"],
        labels=labels,
        per_class_zero_shot_acc=acc,
    )


def save_checkpoint(path, params: AdapterParams) -> None:
    """Adapter weights in the same container, ``kind: checkpoint``."""
    from .adapters import param_arrays  # local import to keep module load light

    header = {
        "kind": "checkpoint",
        "d": params.dim,
        "d_h": params.hidden_dim,
        "head_count": params.memory.head_count,
        "seed": params.seed,
    }
    arrays = [(slot, arr) for slot, arr in param_arrays(params).items()]
    _write_container(path, header, arrays)


def load_checkpoint(path) -> AdapterParams:
    header, payloads = _read_container(path)
    if _require(header, "kind") != "checkpoint":
        raise ArchiveError(f"expected kind 'checkpoint', found '{header['kind']}'")
    d = int(_require(header, "d"))
    d_h = int(_require(header, "d_h"))
    heads = int(_require(header, "head_count"))
    seed = int(_require(header, "seed"))

    expected = {}
    for slot in PARAM_SLOTS:
        _, layer, fld = slot.split(".")
        if fld == "weight":
            expected[slot] = (d, d) if layer == "projector" else (d_h, d)
        else:  # biases: projector (d,), mlp_q (d_h,); mlp_k has none
            expected[slot] = (d,) if layer == "projector" else (d_h,)
    for slot, shape in expected.items():
        if slot not in payloads:
            raise ShapeMismatchError(f"missing payload '{slot}'")
        if payloads[slot].shape != shape:
            raise ShapeMismatchError(
                f"payload '{slot}' has shape {payloads[slot].shape}, header implies {shape}"
            )

    def block(name: str) -> AttentionAdapterParams:
        return AttentionAdapterParams(
            mlp_q=LinearLayer(payloads[f"{name}.mlp_q.weight"], payloads[f"{name}.mlp_q.bias"]),
            mlp_k=LinearLayer(payloads[f"{name}.mlp_k.weight"], bias=None),
            projector=LinearLayer(payloads[f"{name}.projector.weight"],
                                  payloads[f"{name}.projector.bias"]),
            head_count=heads,
        )

    return AdapterParams(block("memory"), block("local_global"),
                         dim=d, hidden_dim=d_h, seed=seed)
