"""Dense float64 math kernels with a checkable differentiation contract.

Everything here operates on plain numpy arrays (2-D matrices, 1-D vectors)
in double precision.  Archives store 32-bit floats; they are widened to
float64 on load because the gradient checks in this package are asserted
at tolerances that single precision cannot reach.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting anything else."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got ndim={m.ndim}")
    return m


def as_vector(a, name: str = "vector") -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got ndim={m.ndim}")
    return m


def matmul(a, b) -> np.ndarray:
    """Matrix product with an explicit shape check.

    Raises ValueError naming both shapes on an inner-dimension mismatch.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    return a @ b


def softmax_cols(scores) -> np.ndarray:
    """Column-wise softmax with max-subtraction for overflow safety."""
    s = as_matrix(scores, "scores")
    shifted = s - s.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def softmax_vec(scores) -> np.ndarray:
    s = as_vector(scores, "scores")
    e = np.exp(s - s.max())
    return e / e.sum()


def l2_normalize(v) -> np.ndarray:
    """Scale a vector to unit Euclidean norm; zero vectors are an error."""
    v = as_vector(v, "v")
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("zero-norm embedding")
    return v / n


def l2_normalize_rows(m) -> np.ndarray:
    m = as_matrix(m, "m")
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("zero-norm embedding row")
    return m / norms


def cosine(a, b) -> float:
    """Cosine similarity of two nonzero vectors, in [-1, 1] up to rounding."""
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"cosine: shape mismatch {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("zero-norm embedding")
    return float(a @ b / (na * nb))


def grad_check(loss_and_grad, params, eps: float = 1e-5) -> float:
    """Compare an analytic gradient against central finite differences.

    ``loss_and_grad(theta)`` must return ``(loss, grad)`` for a flat
    float64 parameter vector ``theta``.  Returns the maximum over
    coordinates of ``|num - ana| / max(1e-12, |ana| + |num|)``.
    """
    if not (0.0 < eps <= 1e-2):
        raise ValueError(f"eps must be in (0, 1e-2], got {eps}")
    theta = np.asarray(params, dtype=np.float64).copy()
    loss, grad = loss_and_grad(theta)
    if not np.isfinite(loss):
        raise ValueError("non-finite loss at the evaluation point")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != theta.shape:
        raise ValueError(f"gradient shape {grad.shape} != params shape {theta.shape}")

    worst = 0.0
    for i in range(theta.size):
        step = np.zeros_like(theta)
        step[i] = eps
        lp, _ = loss_and_grad(theta + step)
        lm, _ = loss_and_grad(theta - step)
        if not (np.isfinite(lp) and np.isfinite(lm)):
            raise ValueError(f"non-finite loss while perturbing coordinate {i}")
        num = (lp - lm) / (2.0 * eps)
        rel = abs(num - grad[i]) / max(1e-12, abs(grad[i]) + abs(num))
        worst = max(worst, rel)
    return worst


@dataclass
class LinearLayer:
    """Affine map ``x -> x @ weight.T + bias`` with weight shaped (out, in)."""

    weight: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self):
        self.weight = as_matrix(self.weight, "weight")
        if self.bias is not None:
            self.bias = as_vector(self.bias, "bias")
            if self.bias.shape[0] != self.weight.shape[0]:
                raise ValueError(
                    f"bias length {self.bias.shape[0]} != out_dim {self.weight.shape[0]}"
                )

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    def apply(self, x) -> np.ndarray:
        """Apply to a single vector (in,) or a stack of rows (n, in)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"input dim {x.shape[-1]} != layer in_dim {self.in_dim}")
        y = x @ self.weight.T
        if self.bias is not None:
            y = y + self.bias
        return y
