"""
Convolution

Grouped 2-D cross-correlation with stride and valid/same padding, and the
ConvBlock layer (conv -> optional batch-norm -> activation) used for the two
stand-alone convolution modules of the TinySpeech template.

The kernel loop runs over (kH, kW) offsets only; each offset is one einsum
over the whole batch, so cost is kH*kW vectorized contractions.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Literal, Mapping, Tuple

import numpy as np

from ..errors import ShapeError
from ..tensor import Shape4
from .base import BaseLayer, Grads, LayerCache, Mode
from .activations import relu, relu_backward, sigmoid, sigmoid_backward
from .normalization import BatchNormParams, batchnorm, batchnorm_backward

logger = logging.getLogger(__name__)

Padding = Literal['valid', 'same']


@dataclass
class ConvParams:
    """
    Convolution parameters.

    Attributes:
        weights: (C_out, C_in/groups, kH, kW)
        bias: (C_out,)
        groups: C_in and C_out are both split into this many groups
        stride: (sH, sW)
        padding: 'valid' or 'same' (zeros, floor on the leading side)
    """
    weights: np.ndarray
    bias: np.ndarray
    groups: int = 1
    stride: Tuple[int, int] = (1, 1)
    padding: Padding = 'valid'

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ShapeError(f"Conv weights must be rank 4, got {self.weights.shape}")
        if self.groups < 1 or self.out_channels % self.groups:
            raise ShapeError(f"C_out={self.out_channels} not divisible by groups={self.groups}")
        if self.bias.shape != (self.out_channels,):
            raise ShapeError(f"Bias shape {self.bias.shape} != ({self.out_channels},)")
        if self.padding not in ('valid', 'same'):
            raise ShapeError(f"Unknown padding '{self.padding}'")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1] * self.groups

    @property
    def kernel(self) -> Tuple[int, int]:
        return self.weights.shape[2], self.weights.shape[3]


def conv_output_size(size: int, k: int, s: int, padding: Padding) -> Tuple[int, int, int]:
    """
    Output length and (lo, hi) zero padding along one axis.

    'same' keeps ceil(size / s) outputs; the pad total is split floor/ceil.
    """
    if padding == 'same':
        out = -(-size // s)
        total = max((out - 1) * s + k - size, 0)
        lo = total // 2
        return out, lo, total - lo
    if size < k:
        raise ShapeError(f"Kernel {k} larger than input {size}")
    return (size - k) // s + 1, 0, 0


def conv_output_shape(in_shape: Shape4, out_channels: int, kernel: Tuple[int, int],
                      stride: Tuple[int, int], padding: Padding) -> Shape4:
    n, _, h, w = in_shape
    ho, _, _ = conv_output_size(h, kernel[0], stride[0], padding)
    wo, _, _ = conv_output_size(w, kernel[1], stride[1], padding)
    return (n, out_channels, ho, wo)


def _geometry(x_shape, p: ConvParams):
    n, c_in, h, w = x_shape
    if c_in != p.in_channels:
        raise ShapeError(f"Input has {c_in} channels, conv expects {p.in_channels}")
    (kh, kw), (sh, sw) = p.kernel, p.stride
    ho, pt, pb = conv_output_size(h, kh, sh, p.padding)
    wo, pl, pr = conv_output_size(w, kw, sw, p.padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"Kernel {p.kernel} larger than padded input {(h, w)}")
    return ho, wo, (pt, pb, pl, pr)


def conv2d(x: np.ndarray, p: ConvParams) -> np.ndarray:
    """
    out[n, co, h, w] = bias[co] + sum of weights * x over the receptive field,
    restricted to the input channels of co's group.
    """
    n, c_in, h, w = x.shape
    ho, wo, (pt, pb, pl, pr) = _geometry(x.shape, p)
    g = p.groups
    (kh, kw), (sh, sw) = p.kernel, p.stride
    cg_in, cg_out = c_in // g, p.out_channels // g

    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    xg = xp.reshape(n, g, cg_in, xp.shape[2], xp.shape[3])
    wg = p.weights.reshape(g, cg_out, cg_in, kh, kw)

    out = np.zeros((n, g, cg_out, ho, wo), dtype=np.result_type(x, p.weights))
    for i in range(kh):
        for j in range(kw):
            patch = xg[:, :, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw]
            out += np.einsum('ngihw,goi->ngohw', patch, wg[:, :, :, i, j])

    return out.reshape(n, p.out_channels, ho, wo) + p.bias[None, :, None, None]


def conv2d_backward(x: np.ndarray, p: ConvParams,
                    grad_out: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Returns:
        (grad_x, grad_weights, grad_bias)
    """
    n, c_in, h, w = x.shape
    ho, wo, (pt, pb, pl, pr) = _geometry(x.shape, p)
    if grad_out.shape != (n, p.out_channels, ho, wo):
        raise ShapeError(f"grad_out {grad_out.shape} != conv output {(n, p.out_channels, ho, wo)}")
    g = p.groups
    (kh, kw), (sh, sw) = p.kernel, p.stride
    cg_in, cg_out = c_in // g, p.out_channels // g

    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    hp, wp = xp.shape[2], xp.shape[3]
    xg = xp.reshape(n, g, cg_in, hp, wp)
    wg = p.weights.reshape(g, cg_out, cg_in, kh, kw)
    gg = grad_out.reshape(n, g, cg_out, ho, wo)

    grad_w = np.zeros_like(wg)
    grad_xp = np.zeros((n, g, cg_in, hp, wp), dtype=np.result_type(x, p.weights))
    for i in range(kh):
        for j in range(kw):
            rows = slice(i, i + sh * (ho - 1) + 1, sh)
            cols = slice(j, j + sw * (wo - 1) + 1, sw)
            grad_w[:, :, :, i, j] = np.einsum('ngihw,ngohw->goi', xg[:, :, :, rows, cols], gg)
            grad_xp[:, :, :, rows, cols] += np.einsum('ngohw,goi->ngihw', gg, wg[:, :, :, i, j])

    grad_x = grad_xp.reshape(n, c_in, hp, wp)[:, :, pt:pt + h, pl:pl + w]
    return grad_x, grad_w.reshape(p.weights.shape), grad_out.sum(axis=(0, 2, 3))


def conv_mult_adds(out_shape: Shape4, in_channels: int, groups: int, kernel: Tuple[int, int]) -> int:
    """out_elems * (C_in/groups) * kH * kW for one sample."""
    _, c_out, ho, wo = out_shape
    return int(c_out * ho * wo * (in_channels // groups) * kernel[0] * kernel[1])


# =============================================================================
# CONV BLOCK LAYER
# =============================================================================

ACTIVATIONS = ('relu', 'sigmoid', 'none')


class ConvBlock(BaseLayer):
    """
    Stand-alone convolution module: conv -> [batch-norm] -> activation.

    Registry suffixes: weight, bias, [bn.gamma, bn.beta];
    buffers: [bn.running_mean, bn.running_var].
    """

    kind = "conv"

    def __init__(self, index: int, in_shape: Shape4, channels: int, kernel: int = 3,
                 stride: int = 1, padding: Padding = 'same', activation: str = 'relu',
                 batch_norm: bool = False, groups: int = 1):
        super().__init__(index, in_shape)
        if activation not in ACTIVATIONS:
            raise ShapeError(f"Unknown activation '{activation}'")
        c_in = in_shape[1]
        if c_in % groups or channels % groups:
            raise ShapeError(
                f"{self.prefix}: channels {c_in}->{channels} not divisible by groups={groups}"
            )
        self.channels = channels
        self.kernel = (kernel, kernel)
        self.stride = (stride, stride)
        self.padding = padding
        self.activation = activation
        self.batch_norm = batch_norm
        self.groups = groups
        self._out_shape = conv_output_shape(in_shape, channels, self.kernel, self.stride, padding)
        if self._out_shape[2] < 1 or self._out_shape[3] < 1:
            raise ShapeError(f"{self.prefix}: kernel {self.kernel} larger than input {in_shape[2:]}")

    @property
    def out_shape(self) -> Shape4:
        return self._out_shape

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        shapes = {
            'weight': (self.channels, self.in_shape[1] // self.groups) + self.kernel,
            'bias': (self.channels,),
        }
        if self.batch_norm:
            shapes['bn.gamma'] = (self.channels,)
            shapes['bn.beta'] = (self.channels,)
        return shapes

    def init_params(self, rng) -> Dict[str, np.ndarray]:
        w_shape = self.param_shapes()['weight']
        fan_in = int(np.prod(w_shape[1:]))
        params = {
            self.name('weight'): rng.he_normal(fan_in, w_shape),
            self.name('bias'): np.zeros(self.channels),
        }
        if self.batch_norm:
            params[self.name('bn.gamma')] = np.ones(self.channels)
            params[self.name('bn.beta')] = np.zeros(self.channels)
        return params

    def init_buffers(self) -> Dict[str, np.ndarray]:
        if not self.batch_norm:
            return {}
        return {
            self.name('bn.running_mean'): np.zeros(self.channels),
            self.name('bn.running_var'): np.ones(self.channels),
        }

    def count_mult_adds(self) -> int:
        macs = conv_mult_adds(self.out_shape, self.in_shape[1], self.groups, self.kernel)
        if self.batch_norm:
            # folded affine at inference: one per output element
            macs += int(np.prod(self.out_shape[1:]))
        return macs

    def conv_params(self, params: Mapping[str, np.ndarray]) -> ConvParams:
        return ConvParams(
            weights=params[self.name('weight')],
            bias=params[self.name('bias')],
            groups=self.groups,
            stride=self.stride,
            padding=self.padding,
        )

    def bn_params(self, params: Mapping[str, np.ndarray], buffers: Dict[str, np.ndarray]) -> BatchNormParams:
        return BatchNormParams(
            gamma=params[self.name('bn.gamma')],
            beta=params[self.name('bn.beta')],
            running_mean=buffers[self.name('bn.running_mean')],
            running_var=buffers[self.name('bn.running_var')],
        )

    def forward(self, x, params, buffers, mode):
        self._check_input(x)
        p = self.conv_params(params)
        z = conv2d(x, p)

        bn_cache = None
        a = z
        if self.batch_norm:
            a, bn_cache = batchnorm(z, self.bn_params(params, buffers), mode)

        if self.activation == 'relu':
            y = relu(a)
        elif self.activation == 'sigmoid':
            y = sigmoid(a)
        else:
            y = a

        cache = LayerCache(self.prefix, y.shape, {'x': x, 'pre_act': a, 'y': y, 'bn': bn_cache})
        return y, cache

    def backward(self, cache, grad_out, params):
        self._check_cache(cache, grad_out)
        if self.activation == 'relu':
            grad_a = relu_backward(cache['pre_act'], grad_out)
        elif self.activation == 'sigmoid':
            grad_a = sigmoid_backward(cache['y'], grad_out)
        else:
            grad_a = grad_out

        grads: Grads = {}
        grad_z = grad_a
        if self.batch_norm:
            grad_z, grad_gamma, grad_beta = batchnorm_backward(cache['bn'], grad_a)
            grads[self.name('bn.gamma')] = grad_gamma
            grads[self.name('bn.beta')] = grad_beta

        grad_x, grad_w, grad_b = conv2d_backward(cache['x'], self.conv_params(params), grad_z)
        grads[self.name('weight')] = grad_w
        grads[self.name('bias')] = grad_b
        return grad_x, grads
