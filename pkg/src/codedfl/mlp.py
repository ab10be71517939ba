"""Two-layer perceptron with analytic gradients on a flat parameter vector.

The model is input -> hidden ReLU -> softmax cross-entropy, small enough
to train on a desk machine yet non-convex, which is the regime the
convergence analysis targets. Parameters live in one float64 vector so
updates, quantization, and aggregation can treat the model as a point in
R^d.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MlpSpec:
    """Architecture descriptor; dim is the flat parameter count."""

    n_features: int
    n_classes: int
    hidden: int = 32

    def __post_init__(self):
        if min(self.n_features, self.n_classes, self.hidden) < 1:
            raise ValueError("layer sizes must be positive")

    @property
    def dim(self) -> int:
        return (
            self.n_features * self.hidden
            + self.hidden
            + self.hidden * self.n_classes
            + self.n_classes
        )


def _unpack(spec: MlpSpec, params: np.ndarray):
    f, h, c = spec.n_features, spec.hidden, spec.n_classes
    w1 = params[: f * h].reshape(f, h)
    b1 = params[f * h : f * h + h]
    w2 = params[f * h + h : f * h + h + h * c].reshape(h, c)
    b2 = params[f * h + h + h * c :]
    return w1, b1, w2, b2


def init_params(spec: MlpSpec, rng: np.random.Generator) -> np.ndarray:
    """He-scaled normal weights, zero biases."""
    f, h, c = spec.n_features, spec.hidden, spec.n_classes
    params = np.zeros(spec.dim)
    w1, _, w2, _ = _unpack(spec, params)
    w1[:] = rng.standard_normal((f, h)) * np.sqrt(2.0 / f)
    w2[:] = rng.standard_normal((h, c)) * np.sqrt(2.0 / h)
    return params


def forward_logits(spec: MlpSpec, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    w1, b1, w2, b2 = _unpack(spec, params)
    hidden = np.maximum(x @ w1 + b1, 0.0)
    return hidden @ w2 + b2


def predict(spec: MlpSpec, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.argmax(forward_logits(spec, params, x), axis=1)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grad(
    spec: MlpSpec, params: np.ndarray, x: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient in flat layout."""
    n = x.shape[0]
    w1, b1, w2, b2 = _unpack(spec, params)
    pre = x @ w1 + b1
    hidden = np.maximum(pre, 0.0)
    logits = hidden @ w2 + b2
    probs = _softmax(logits)
    # clamp avoids log(0) when a class collapses numerically
    loss = float(-np.log(np.maximum(probs[np.arange(n), y], 1e-300)).mean())

    dlogits = probs
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    grad = np.empty_like(params)
    gw1, gb1, gw2, gb2 = _unpack(spec, grad)
    gw2[:] = hidden.T @ dlogits
    gb2[:] = dlogits.sum(axis=0)
    dhidden = (dlogits @ w2.T) * (pre > 0.0)
    gw1[:] = x.T @ dhidden
    gb1[:] = dhidden.sum(axis=0)
    return loss, grad
