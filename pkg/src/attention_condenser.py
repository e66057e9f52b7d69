"""
Attention Condenser

Self-contained self-attention module built from four stages:

    Q  = C(V)        condensation: max-pooling
    K  = E(Q)        condensed embedding: grouped conv -> ReLU -> pointwise conv
    A  = X(K)        expansion: unpooling back to V's spatial size, then sigmoid
    V' = F(V, A, S)  selective attention: A * (S*V + (1 - S))

S = sigmoid(scale_logit) is one learnable scalar per condenser. At S = 0 the
output is exactly A; at S = 1 it is A * V.

Usage:
    from src.attention_condenser import condenser_forward, condenser_backward

    out, cache = condenser_forward(V, condenser)
    grad_V, grads = condenser_backward(cache, grad_out)
"""

import logging
from dataclasses import dataclass
from typing import Dict, Literal, Optional, Tuple

import numpy as np
from scipy.special import expit

from .errors import CacheError, ConfigError, ShapeError
from .layers.base import BaseLayer, LayerCache
from .layers.activations import relu, relu_backward, sigmoid, sigmoid_backward
from .layers.conv import ConvParams, conv2d, conv2d_backward
from .layers.pooling import (
    PoolRecord,
    maxpool2d,
    maxpool2d_backward,
    pooled_size,
    unpool_replicate,
    unpool_replicate_backward,
    unpool_switch,
    unpool_switch_backward,
)
from .tensor import Shape4, as_array

logger = logging.getLogger(__name__)

UnpoolMode = Literal['replicate', 'switch']


def default_groups(channels: int, c1: int) -> int:
    """Largest g <= 4 dividing both the input channels and c1."""
    for g in (4, 3, 2, 1):
        if channels % g == 0 and c1 % g == 0:
            return g
    return 1


@dataclass
class AttentionCondenser:
    """
    Parameters of one attention condenser.

    Attributes:
        embed1: Grouped conv C -> c1 ('same' padding, stride 1)
        embed2: Pointwise conv c1 -> C (A must match V's channels)
        scale_logit: S = sigmoid(scale_logit); -inf gives S = 0 exactly
        pool_window: Condensation window (kH, kW)
        pool_stride: Condensation stride, defaults to the window
        unpool: 'replicate' (dense A) or 'switch' (values at argmax positions)
    """
    embed1: ConvParams
    embed2: ConvParams
    scale_logit: float = 0.0
    pool_window: Tuple[int, int] = (2, 2)
    pool_stride: Optional[Tuple[int, int]] = None
    unpool: UnpoolMode = 'replicate'

    def __post_init__(self):
        if self.pool_stride is None:
            self.pool_stride = self.pool_window
        if self.embed2.kernel != (1, 1):
            raise ShapeError(f"embed2 must be pointwise, got kernel {self.embed2.kernel}")
        if self.embed2.in_channels != self.embed1.out_channels:
            raise ShapeError(
                f"embed2 expects {self.embed2.in_channels} channels, embed1 gives {self.embed1.out_channels}"
            )
        if self.embed2.out_channels != self.embed1.in_channels:
            raise ShapeError(
                f"embed2 outputs {self.embed2.out_channels} channels, condenser input has "
                f"{self.embed1.in_channels}"
            )
        if self.embed1.stride != (1, 1) or self.embed1.padding != 'same':
            raise ShapeError("embed1 must use stride 1 and 'same' padding")
        if self.unpool not in ('replicate', 'switch'):
            raise ShapeError(f"Unknown unpool mode '{self.unpool}'")

    @property
    def channels(self) -> int:
        return self.embed1.in_channels

    @property
    def groups(self) -> int:
        return self.embed1.groups

    @property
    def scale(self) -> float:
        return float(expit(self.scale_logit))


@dataclass
class CondenserCache:
    """Intermediates of one condenser_forward call."""
    condenser: AttentionCondenser
    V: np.ndarray
    pool: PoolRecord
    z1: np.ndarray      # embed1 pre-activation
    h1: np.ndarray      # relu(z1)
    A: np.ndarray
    S: float


def selective_attention(V: np.ndarray, A: np.ndarray, S: float) -> np.ndarray:
    """V' = A * (S*V + (1 - S))."""
    V, A = as_array(V), as_array(A)
    if V.shape != A.shape:
        raise ShapeError(f"V shape {V.shape} != A shape {A.shape}")
    if not 0.0 <= S <= 1.0:
        raise ValueError(f"Scale S={S} outside [0, 1]")
    return A * (S * V + (1.0 - S))


def condenser_forward(V, p: AttentionCondenser) -> Tuple[np.ndarray, CondenserCache]:
    """
    Run one attention condenser.

    Returns:
        (V', cache) with V'.shape == V.shape
    """
    V = as_array(V)
    if V.ndim != 4:
        raise ShapeError(f"Condenser input must be rank 4, got {V.shape}")
    if V.shape[1] != p.channels:
        raise ShapeError(f"Condenser expects {p.channels} channels, got {V.shape[1]}")

    record = maxpool2d(V, p.pool_window, p.pool_stride)
    z1 = conv2d(record.pooled, p.embed1)
    h1 = relu(z1)
    K = conv2d(h1, p.embed2)

    if p.unpool == 'replicate':
        U = unpool_replicate(K, p.pool_window, p.pool_stride, V.shape[2:])
    else:
        U = unpool_switch(K, record)
    A = sigmoid(U)
    S = p.scale

    out = selective_attention(V, A, S)
    return out, CondenserCache(p, V, record, z1, h1, A, S)


def condenser_backward(cache: CondenserCache,
                       grad_out: np.ndarray) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """
    Exact gradients through F, the expansion, the embedding and the
    condensation.

    Returns:
        (grad_V, {'embed1.weight', 'embed1.bias', 'embed2.weight',
                  'embed2.bias', 'scale_logit'})
    """
    if cache is None:
        raise CacheError("condenser backward called without a forward cache")
    if grad_out.shape != cache.V.shape:
        raise ShapeError(f"grad_out {grad_out.shape} != condenser output {cache.V.shape}")

    p, V, A, S = cache.condenser, cache.V, cache.A, cache.S

    grad_A = grad_out * (S * V + (1.0 - S))
    grad_V = grad_out * A * S
    grad_S = float(np.sum(grad_out * A * (V - 1.0)))
    grad_logit = grad_S * S * (1.0 - S)

    grad_U = sigmoid_backward(A, grad_A)
    if p.unpool == 'replicate':
        grad_K = unpool_replicate_backward(grad_U, p.pool_window, p.pool_stride)
    else:
        grad_K = unpool_switch_backward(grad_U, cache.pool)

    grad_h1, grad_w2, grad_b2 = conv2d_backward(cache.h1, p.embed2, grad_K)
    grad_z1 = relu_backward(cache.z1, grad_h1)
    grad_Q, grad_w1, grad_b1 = conv2d_backward(cache.pool.pooled, p.embed1, grad_z1)
    grad_V = grad_V + maxpool2d_backward(cache.pool, grad_Q)

    grads = {
        'embed1.weight': grad_w1,
        'embed1.bias': grad_b1,
        'embed2.weight': grad_w2,
        'embed2.bias': grad_b2,
        'scale_logit': np.array([grad_logit]),
    }
    return grad_V, grads


# =============================================================================
# LAYER
# =============================================================================

class AttentionCondenserLayer(BaseLayer):
    """
    Attention condenser as a model-graph layer.

    Registry suffixes: embed1.weight, embed1.bias, embed2.weight,
    embed2.bias, scale_logit.
    """

    kind = "attention_condenser"

    def __init__(self, index: int, in_shape: Shape4, c1: int, c2: Optional[int] = None,
                 pool: int = 2, pool_stride: Optional[int] = None, groups: Optional[int] = None,
                 kernel: int = 3, unpool: UnpoolMode = 'replicate'):
        super().__init__(index, in_shape)
        channels = in_shape[1]
        if c2 is not None and c2 != channels:
            raise ConfigError(
                f"{self.prefix}: c2={c2} must equal the condenser's input channels ({channels})"
            )
        self.channels = channels
        self.c1 = c1
        self.groups = groups if groups is not None else default_groups(channels, c1)
        if channels % self.groups or c1 % self.groups:
            raise ConfigError(
                f"{self.prefix}: groups={self.groups} must divide channels={channels} and c1={c1}"
            )
        self.kernel = kernel
        self.pool = (pool, pool)
        stride = pool_stride if pool_stride is not None else pool
        self.pool_stride = (stride, stride)
        self.unpool = unpool
        # raises ShapeError when the pooled dims would reach zero
        self.pooled_hw = (
            pooled_size(in_shape[2], pool, stride),
            pooled_size(in_shape[3], pool, stride),
        )

    @property
    def out_shape(self) -> Shape4:
        return self.in_shape

    def param_shapes(self):
        return {
            'embed1.weight': (self.c1, self.channels // self.groups, self.kernel, self.kernel),
            'embed1.bias': (self.c1,),
            'embed2.weight': (self.channels, self.c1, 1, 1),
            'embed2.bias': (self.channels,),
            'scale_logit': (1,),
        }

    def init_params(self, rng):
        shapes = self.param_shapes()
        w1, w2 = shapes['embed1.weight'], shapes['embed2.weight']
        return {
            self.name('embed1.weight'): rng.he_normal(int(np.prod(w1[1:])), w1),
            self.name('embed1.bias'): np.zeros(self.c1),
            self.name('embed2.weight'): rng.he_normal(self.c1, w2),
            self.name('embed2.bias'): np.zeros(self.channels),
            self.name('scale_logit'): np.zeros(1),
        }

    def count_mult_adds(self) -> int:
        hp, wp = self.pooled_hw
        embed1 = hp * wp * self.c1 * (self.channels // self.groups) * self.kernel * self.kernel
        embed2 = hp * wp * self.channels * self.c1
        # F: one multiply for S*V, one for A*(.)
        attention = 2 * self.channels * self.in_shape[2] * self.in_shape[3]
        return int(embed1 + embed2 + attention)

    def condenser(self, params) -> AttentionCondenser:
        return AttentionCondenser(
            embed1=ConvParams(
                params[self.name('embed1.weight')], params[self.name('embed1.bias')],
                groups=self.groups, stride=(1, 1), padding='same',
            ),
            embed2=ConvParams(params[self.name('embed2.weight')], params[self.name('embed2.bias')]),
            scale_logit=float(params[self.name('scale_logit')][0]),
            pool_window=self.pool,
            pool_stride=self.pool_stride,
            unpool=self.unpool,
        )

    def forward(self, x, params, buffers, mode):
        self._check_input(x)
        out, cache = condenser_forward(x, self.condenser(params))
        return out, LayerCache(self.prefix, out.shape, {'condenser': cache})

    def backward(self, cache, grad_out, params):
        self._check_cache(cache, grad_out)
        grad_x, grads = condenser_backward(cache['condenser'], grad_out)
        return grad_x, {self.name(k): v for k, v in grads.items()}
