"""
Softmax and Cross-Entropy

The softmax layer turns the fully-connected logits into word probabilities.
Training uses mean cross-entropy over the batch; its gradient with respect to
the logits is (probs - onehot) / N.
"""

from typing import Sequence

import numpy as np
from scipy.special import softmax as _softmax

from ..errors import ShapeError
from ..tensor import Shape4
from .base import BaseLayer, LayerCache

PROB_FLOOR = 1e-12


def softmax(x: np.ndarray) -> np.ndarray:
    """Softmax over the last axis (max-subtracted, so large logits are safe)."""
    return _softmax(x, axis=-1)


def softmax_backward(probs: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Jacobian-vector product p * (g - <g, p>) over the last axis."""
    return probs * (grad_out - (grad_out * probs).sum(axis=-1, keepdims=True))


def cross_entropy(probs: np.ndarray, label: int) -> float:
    """-ln(probs[label]) with probabilities floored at 1e-12."""
    if not 0 <= label < probs.shape[-1]:
        raise ShapeError(f"Label {label} outside [0, {probs.shape[-1]})")
    return float(-np.log(max(float(probs[label]), PROB_FLOOR)))


def mean_cross_entropy(probs: np.ndarray, labels: Sequence[int]) -> float:
    """Mean loss over a batch of probability rows (N, K)."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (probs.shape[0],):
        raise ShapeError(f"{labels.shape[0]} labels for {probs.shape[0]} samples")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ShapeError(f"Labels outside [0, {probs.shape[1]})")
    picked = np.maximum(probs[np.arange(probs.shape[0]), labels], PROB_FLOOR)
    return float(-np.log(picked).mean())


def softmax_cross_entropy_backward(probs: np.ndarray, labels: Sequence[int]) -> np.ndarray:
    """Gradient of the mean loss with respect to the logits."""
    labels = np.asarray(labels, dtype=np.int64)
    grad = probs.copy()
    grad[np.arange(probs.shape[0]), labels] -= 1.0
    return grad / probs.shape[0]


class Softmax(BaseLayer):
    """Final layer; output (N, K, 1, 1) probabilities."""

    kind = "softmax"

    @property
    def out_shape(self) -> Shape4:
        return self.in_shape

    def count_mult_adds(self) -> int:
        return 0

    def forward(self, x, params, buffers, mode):
        self._check_input(x)
        n = x.shape[0]
        probs = softmax(x.reshape(n, -1)).reshape(x.shape)
        return probs, LayerCache(self.prefix, probs.shape, {'probs': probs})

    def backward(self, cache, grad_out, params):
        self._check_cache(cache, grad_out)
        n = grad_out.shape[0]
        probs = cache['probs'].reshape(n, -1)
        return softmax_backward(probs, grad_out.reshape(n, -1)).reshape(grad_out.shape), {}
