"""
Fully-Connected Layer

y = W x + b on the flattened (C * H * W) features of each sample. In the
TinySpeech template it follows global average pooling, so its input is the
C channel means.
"""

from typing import Tuple

import numpy as np

from ..errors import ShapeError
from ..tensor import Shape4
from .base import BaseLayer, LayerCache


def dense(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """
    Args:
        x: vector (in,) or batch (N, in)
        weights: (out, in)
        bias: (out,)
    """
    if weights.ndim != 2 or x.shape[-1] != weights.shape[1]:
        raise ShapeError(f"Dense input length {x.shape[-1]} != weight columns {weights.shape}")
    if bias.shape != (weights.shape[0],):
        raise ShapeError(f"Dense bias {bias.shape} != ({weights.shape[0]},)")
    return x @ weights.T + bias


def dense_backward(x: np.ndarray, weights: np.ndarray,
                   grad_out: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Args:
        x: batch (N, in) from the forward call
        grad_out: (N, out)

    Returns:
        (grad_x, grad_weights, grad_bias)
    """
    return grad_out @ weights, grad_out.T @ x, grad_out.sum(axis=0)


class Dense(BaseLayer):
    """Registry suffixes: weight (units, in), bias (units,)."""

    kind = "dense"

    def __init__(self, index: int, in_shape: Shape4, units: int):
        super().__init__(index, in_shape)
        self.units = units
        self.in_features = int(np.prod(in_shape[1:]))

    @property
    def out_shape(self) -> Shape4:
        return (self.in_shape[0], self.units, 1, 1)

    def param_shapes(self):
        return {'weight': (self.units, self.in_features), 'bias': (self.units,)}

    def init_params(self, rng):
        return {
            self.name('weight'): rng.he_normal(self.in_features, (self.units, self.in_features)),
            self.name('bias'): np.zeros(self.units),
        }

    def count_mult_adds(self) -> int:
        return self.in_features * self.units

    def forward(self, x, params, buffers, mode):
        self._check_input(x)
        flat = x.reshape(x.shape[0], self.in_features)
        y = dense(flat, params[self.name('weight')], params[self.name('bias')])
        y = y.reshape(x.shape[0], self.units, 1, 1)
        return y, LayerCache(self.prefix, y.shape, {'flat': flat, 'in_shape': x.shape})

    def backward(self, cache, grad_out, params):
        self._check_cache(cache, grad_out)
        grad_flat, grad_w, grad_b = dense_backward(
            cache['flat'], params[self.name('weight')], grad_out.reshape(grad_out.shape[0], self.units)
        )
        grads = {self.name('weight'): grad_w, self.name('bias'): grad_b}
        return grad_flat.reshape(cache['in_shape']), grads
