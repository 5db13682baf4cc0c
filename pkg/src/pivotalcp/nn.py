"""Minimal feed-forward network with reverse-mode gradients and Adam.

Hidden layers use tanh, the output layer is linear.  Parameters are
plain numpy arrays; the forward pass can cache pre-activations so the
backward pass reconstructs nothing.  This is the shared trunk under the
mixture-density and spline-flow estimators.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, NumericalError, ValidationError

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


class Mlp:
    """Fully connected network: tanh hidden layers, identity output."""

    def __init__(self, layer_sizes, seed: int | None = None):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValidationError(f"invalid layer sizes {sizes}")
        self.layer_sizes = sizes
        rng = np.random.Generator(np.random.Philox(0 if seed is None else seed))
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list[np.ndarray]:
        return self.weights + self.biases

    def set_parameters(self, params: list[np.ndarray]) -> None:
        k = self.n_layers
        self.weights = [np.asarray(p, dtype=float) for p in params[:k]]
        self.biases = [np.asarray(p, dtype=float) for p in params[k:]]

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Forward pass for a single input vector."""
        out, _ = self.forward_batch(np.asarray(x, dtype=float)[None, :])
        return out[0]

    def forward_batch(self, X: np.ndarray):
        """Batched forward pass; returns ``(output, cache)``."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.layer_sizes[0]:
            raise DimensionMismatchError(
                f"expected input of width {self.layer_sizes[0]}, got shape {X.shape}"
            )
        activations = [X]
        h = X
        for i in range(self.n_layers):
            z = h @ self.weights[i] + self.biases[i]
            h = np.tanh(z) if i < self.n_layers - 1 else z
            activations.append(h)
        return h, activations

    def backward(self, cache, output_gradient: np.ndarray):
        """Reverse-mode pass from a batched output gradient.

        Returns ``(weight_grads, bias_grads, input_gradient)`` for the
        scalar loss whose gradient w.r.t. the output is given.
        """
        activations = cache
        G = np.asarray(output_gradient, dtype=float)
        if G.shape != activations[-1].shape:
            raise DimensionMismatchError(
                f"output gradient shape {G.shape} != output shape "
                f"{activations[-1].shape}"
            )
        w_grads = [None] * self.n_layers
        b_grads = [None] * self.n_layers
        for i in reversed(range(self.n_layers)):
            if i < self.n_layers - 1:
                # tanh'(z) = 1 - tanh(z)^2, with tanh(z) already cached
                G = G * (1.0 - activations[i + 1] ** 2)
            w_grads[i] = activations[i].T @ G
            b_grads[i] = G.sum(axis=0)
            G = G @ self.weights[i].T
        return w_grads, b_grads, G

    # --- persistence -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "layer_sizes": self.layer_sizes,
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Mlp":
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValidationError(
                f"unsupported model format_version {doc.get('format_version')!r}"
            )
        net = cls(doc["layer_sizes"])
        sizes = net.layer_sizes
        net.weights = [
            np.asarray(w, dtype=float).reshape(sizes[i], sizes[i + 1])
            for i, w in enumerate(doc["weights"])
        ]
        net.biases = [np.asarray(b, dtype=float) for b in doc["biases"]]
        return net

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "Mlp":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class AdamOptimizer:
    """Bias-corrected adaptive-moment gradient descent."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    _m: list = field(default_factory=list)
    _v: list = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        """Apply one update; returns the new parameter list."""
        if not self._m:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        if len(params) != len(grads) or len(params) != len(self._m):
            raise DimensionMismatchError("parameter/gradient list length mismatch")
        self.step_count += 1
        t = self.step_count
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            g = np.asarray(g, dtype=float)
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient for parameter {i}")
            self._m[i] = self.beta1 * self._m[i] + (1.0 - self.beta1) * g
            self._v[i] = self.beta2 * self._v[i] + (1.0 - self.beta2) * g * g
            m_hat = self._m[i] / (1.0 - self.beta1**t)
            v_hat = self._v[i] / (1.0 - self.beta2**t)
            out.append(p - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon))
        return out


def clip_global_norm(grads: list[np.ndarray], max_norm: float = 10.0) -> list[np.ndarray]:
    """Rescale gradients so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if total <= max_norm or total == 0.0:
        return grads
    log.debug("gradient clipping triggered: norm %.3g -> %.3g", total, max_norm)
    factor = max_norm / total
    return [g * factor for g in grads]
