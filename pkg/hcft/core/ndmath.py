"""
Dense float64 matrix primitives with hand-derived backward passes.

Matrices are 2-D ``numpy.ndarray`` objects of dtype float64 in row-major
(C) order. Every public function validates shapes and raises
``DimensionMismatchException`` naming both shapes instead of broadcasting.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Iterable, Mapping, Tuple

import numpy as np

from hcft.utils.exceptions import ContractViolationException, DimensionMismatchException

Matrix = np.ndarray
Vector = np.ndarray

GradFn = Callable[[np.ndarray], Tuple[float, np.ndarray]]


class Activation(str, Enum):
    """Supported activation kinds."""

    TANH = "tanh"
    SIGMOID = "sigmoid"
    SOFTMAX_ROWS = "softmax_rows"
    RELU = "relu"


@dataclass
class LayerGrads:
    """Parameter gradients keyed like the parameters, plus the input gradient."""

    params: Dict[str, np.ndarray] = field(default_factory=dict)
    inputs: np.ndarray | None = None


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """
    Build an independent generator for ``(seed, *stream)``.

    Callers own their generators; nothing in the package touches global state.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, stream)]))


def as_matrix(x: np.ndarray | Iterable, name: str = "x") -> Matrix:
    """Return ``x`` as a C-ordered float64 matrix, promoting 1-D input to one row."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionMismatchException(f"{name} must be 2-D", arr.shape, (None, None))
    return arr


def affine(x: Matrix, W: Matrix, b: Vector) -> Matrix:
    """
    Compute ``x @ W + b``.

    Args:
        x: (rows, k) input
        W: (k, cols) weight
        b: (cols,) bias

    Returns:
        Matrix: (rows, cols) output
    """
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[0]:
        raise DimensionMismatchException("affine x·W", x.shape, W.shape)
    if b.ndim != 1 or b.shape[0] != W.shape[1]:
        raise DimensionMismatchException("affine bias", W.shape, b.shape)
    return x @ W + b


def affine_backward(x: Matrix, W: Matrix, grad_out: Matrix) -> Tuple[Matrix, Matrix, Vector]:
    """
    Backward pass of :func:`affine`.

    Returns:
        Tuple of (dx, dW, db)
    """
    if grad_out.shape != (x.shape[0], W.shape[1]):
        raise DimensionMismatchException(
            "affine_backward", (x.shape[0], W.shape[1]), grad_out.shape
        )
    return grad_out @ W.T, x.T @ grad_out, grad_out.sum(axis=0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax_rows(x: Matrix) -> Matrix:
    """Row-wise softmax with max shift."""
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_rows(x: Matrix) -> Matrix:
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def activation(x: Matrix, kind: Activation | str) -> Matrix:
    """
    Apply an activation.

    Args:
        x: Finite input matrix
        kind: One of tanh, sigmoid, softmax_rows, relu

    Returns:
        Matrix: Transformed matrix of the same shape
    """
    kind = Activation(kind)
    if kind is Activation.TANH:
        return np.tanh(x)
    if kind is Activation.SIGMOID:
        return sigmoid(x)
    if kind is Activation.RELU:
        return np.maximum(x, 0.0)
    return softmax_rows(as_matrix(x))


def activation_backward(kind: Activation | str, x: Matrix, out: Matrix, grad_out: Matrix) -> Matrix:
    """
    Backward pass of :func:`activation`.

    Args:
        kind: Activation kind used in the forward pass
        x: Forward input
        out: Forward output
        grad_out: Gradient with respect to ``out``

    Returns:
        Matrix: Gradient with respect to ``x``
    """
    if grad_out.shape != out.shape:
        raise DimensionMismatchException("activation_backward", out.shape, grad_out.shape)
    kind = Activation(kind)
    if kind is Activation.TANH:
        return grad_out * (1.0 - out * out)
    if kind is Activation.SIGMOID:
        return grad_out * out * (1.0 - out)
    if kind is Activation.RELU:
        return grad_out * (x > 0.0)
    inner = (grad_out * out).sum(axis=1, keepdims=True)
    return out * (grad_out - inner)


def cross_entropy(logits: Matrix, targets: np.ndarray | Iterable[int]) -> Tuple[float, Matrix]:
    """
    Mean cross-entropy of row logits against integer targets.

    Args:
        logits: (rows, classes) scores
        targets: Class index per row

    Returns:
        Tuple of (loss, gradient with respect to logits)

    Raises:
        ContractViolationException: If a target is outside ``[0, classes)``
    """
    logits = as_matrix(logits, "logits")
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    rows, cols = logits.shape
    if targets.shape[0] != rows:
        raise DimensionMismatchException("cross_entropy targets", (rows,), targets.shape)
    if rows == 0:
        raise ContractViolationException("cross_entropy needs at least one row")
    if np.any(targets < 0) or np.any(targets >= cols):
        raise ContractViolationException(
            f"cross_entropy target out of range [0, {cols}): {targets.tolist()}"
        )
    log_probs = log_softmax_rows(logits)
    picked = log_probs[np.arange(rows), targets]
    loss = float(-picked.mean())
    grad = np.exp(log_probs)
    grad[np.arange(rows), targets] -= 1.0
    return loss, grad / rows


def grad_check(fn: GradFn, theta: np.ndarray, h: float = 1e-5) -> float:
    """
    Compare an analytic gradient with central differences.

    Args:
        fn: Maps a flat parameter vector to ``(value, analytic_gradient)``
        theta: Point of evaluation
        h: Finite-difference step

    Returns:
        float: Max over coordinates of ``|a - n| / max(1e-8, |a| + |n|)``
    """
    theta = np.array(theta, dtype=np.float64).reshape(-1)
    _, analytic = fn(theta)
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    if analytic.shape != theta.shape:
        raise DimensionMismatchException("grad_check", theta.shape, analytic.shape)
    numeric = np.empty_like(theta)
    for i in range(theta.size):
        plus = theta.copy()
        minus = theta.copy()
        plus[i] += h
        minus[i] -= h
        numeric[i] = (fn(plus)[0] - fn(minus)[0]) / (2.0 * h)
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom)) if theta.size else 0.0


def flatten_params(params: Mapping[str, np.ndarray]) -> np.ndarray:
    """Concatenate parameters in mapping order."""
    if not params:
        return np.zeros(0)
    return np.concatenate([np.asarray(p, dtype=np.float64).reshape(-1) for p in params.values()])


def unflatten_params(theta: np.ndarray, like: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """Inverse of :func:`flatten_params` using the shapes of ``like``."""
    out: Dict[str, np.ndarray] = {}
    offset = 0
    for name, ref in like.items():
        size = ref.size
        out[name] = np.asarray(theta[offset : offset + size], dtype=np.float64).reshape(ref.shape)
        offset += size
    if offset != theta.size:
        raise DimensionMismatchException("unflatten_params", (offset,), theta.shape)
    return out


def cosine_lr(epoch: int, max_epochs: int, lr_max: float, lr_min: float) -> float:
    """Cosine decay from ``lr_max`` at epoch 0 to ``lr_min`` at the last epoch."""
    if max_epochs <= 1:
        return lr_max
    frac = min(max(epoch / (max_epochs - 1), 0.0), 1.0)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + np.cos(np.pi * frac))


class Adam:
    """Adam over a dict of parameter arrays, updated in place."""

    def __init__(
        self,
        params: Dict[str, np.ndarray],
        lr: float = 1e-3,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: Mapping[str, np.ndarray], lr: float | None = None) -> None:
        """Apply one bias-corrected update."""
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for name, p in self.params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise DimensionMismatchException(f"Adam.step[{name}]", p.shape, g.shape)
            self.m[name] = self.b1 * self.m[name] + (1.0 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1.0 - self.b2) * g * g
            m_hat = self.m[name] / c1
            v_hat = self.v[name] / c2
            p -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
