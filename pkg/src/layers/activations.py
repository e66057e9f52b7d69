"""Elementwise activations and their gradients."""

import numpy as np
from scipy.special import expit


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0).astype(x.dtype, copy=False)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Gradient passes where the forward input was positive."""
    return grad_out * (x > 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """1 / (1 + e^-x); exact 0 and 1 at -inf and +inf."""
    return expit(x)


def sigmoid_backward(y: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Uses the forward output y = sigmoid(x)."""
    return grad_out * y * (1.0 - y)
