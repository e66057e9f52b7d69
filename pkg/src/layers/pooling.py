"""
Pooling and Unpooling

Max-pooling with recorded argmax (the condensation step of an attention
condenser), replication and switch unpooling (its expansion step), and
global average pooling (the template's classifier head).

Remainder handling: pooling drops trailing rows/cols that do not fill a
window; replication unpooling fills them from the nearest (last) region so
the attention map keeps the input's exact spatial size.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..errors import CacheError, ShapeError
from ..tensor import Shape4
from .base import BaseLayer, LayerCache

Pair = Tuple[int, int]


def _pair(v) -> Pair:
    return (int(v), int(v)) if np.isscalar(v) else (int(v[0]), int(v[1]))


def pooled_size(size: int, window: int, stride: int) -> int:
    if window < 1 or stride < 1:
        raise ShapeError(f"Pool window {window} and stride {stride} must be >= 1")
    if size < window:
        raise ShapeError(f"Pool window {window} exceeds input size {size}")
    return (size - window) // stride + 1


@dataclass
class PoolRecord:
    """
    Result of max-pooling.

    Attributes:
        pooled: Region maxima (N, C, Ho, Wo)
        argmax: Flat input index of each maximum, same shape as pooled
        window: (kH, kW)
        stride: (sH, sW)
        input_shape: Shape of the pooled input
    """
    pooled: np.ndarray
    argmax: np.ndarray
    window: Pair
    stride: Pair
    input_shape: Tuple[int, int, int, int]


def maxpool2d(x: np.ndarray, window, stride=None) -> PoolRecord:
    """
    Max over each window; ties go to the lowest flat index.
    """
    (kh, kw) = _pair(window)
    (sh, sw) = _pair(stride if stride is not None else window)
    n, c, h, w = x.shape
    ho, wo = pooled_size(h, kh, sh), pooled_size(w, kw, sw)

    flat_index = np.arange(x.size, dtype=np.int64).reshape(x.shape)
    best = None
    arg = None
    # raster order over the window visits flat indices in increasing order,
    # so a strict '>' keeps the lowest index on ties
    for i in range(kh):
        for j in range(kw):
            rows = slice(i, i + sh * (ho - 1) + 1, sh)
            cols = slice(j, j + sw * (wo - 1) + 1, sw)
            v = x[:, :, rows, cols]
            idx = flat_index[:, :, rows, cols]
            if best is None:
                best, arg = v.copy(), idx.copy()
            else:
                better = v > best
                best = np.where(better, v, best)
                arg = np.where(better, idx, arg)

    return PoolRecord(best, arg, (kh, kw), (sh, sw), tuple(x.shape))


def maxpool2d_backward(record: PoolRecord, grad_pooled: np.ndarray) -> np.ndarray:
    """Route each gradient to its argmax position only."""
    if record is None:
        raise CacheError("maxpool backward called without a pool record")
    if grad_pooled.shape != record.pooled.shape:
        raise ShapeError(f"grad {grad_pooled.shape} != pooled {record.pooled.shape}")
    grad = np.zeros(int(np.prod(record.input_shape)), dtype=grad_pooled.dtype)
    np.add.at(grad, record.argmax.ravel(), grad_pooled.ravel())
    return grad.reshape(record.input_shape)


def _region_index(out_size: int, pooled: int, window: int, stride: int) -> np.ndarray:
    if pooled_size(out_size, window, stride) != pooled:
        raise ShapeError(
            f"Output size {out_size} inconsistent with {pooled} regions "
            f"(window {window}, stride {stride})"
        )
    return np.minimum(np.arange(out_size) // stride, pooled - 1)


def unpool_replicate(pooled: np.ndarray, window, stride=None, out_hw=None) -> np.ndarray:
    """
    Every output position takes the value of the region that covers it;
    remainder rows/cols take the last region's value.
    """
    (kh, kw) = _pair(window)
    (sh, sw) = _pair(stride if stride is not None else window)
    ho, wo = pooled.shape[2], pooled.shape[3]
    if out_hw is None:
        out_hw = ((ho - 1) * sh + kh, (wo - 1) * sw + kw)
    rows = _region_index(out_hw[0], ho, kh, sh)
    cols = _region_index(out_hw[1], wo, kw, sw)
    return pooled[:, :, rows][:, :, :, cols]


def unpool_replicate_backward(grad_out: np.ndarray, window, stride=None) -> np.ndarray:
    """Sum the gradient over every output position of each region."""
    (kh, kw) = _pair(window)
    (sh, sw) = _pair(stride if stride is not None else window)
    n, c, h, w = grad_out.shape
    ho, wo = pooled_size(h, kh, sh), pooled_size(w, kw, sw)
    rows = _region_index(h, ho, kh, sh)
    cols = _region_index(w, wo, kw, sw)
    grad = np.zeros((n, c, ho, wo), dtype=grad_out.dtype)
    np.add.at(grad, (slice(None), slice(None), rows[:, None], cols[None, :]), grad_out)
    return grad


def unpool_switch(values: np.ndarray, record: PoolRecord) -> np.ndarray:
    """Place each value at its region's argmax position; zeros elsewhere."""
    if values.shape != record.pooled.shape:
        raise ShapeError(f"values {values.shape} != pooled {record.pooled.shape}")
    out = np.zeros(int(np.prod(record.input_shape)), dtype=values.dtype)
    np.add.at(out, record.argmax.ravel(), values.ravel())
    return out.reshape(record.input_shape)


def unpool_switch_backward(grad_out: np.ndarray, record: PoolRecord) -> np.ndarray:
    return grad_out.reshape(-1)[record.argmax]


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """Mean over H x W per channel -> (N, C, 1, 1)."""
    if x.shape[2] < 1 or x.shape[3] < 1:
        raise ShapeError(f"Global average pool needs H, W >= 1, got {x.shape}")
    return x.mean(axis=(2, 3), keepdims=True)


def global_avg_pool_backward(grad_out: np.ndarray, in_shape) -> np.ndarray:
    h, w = in_shape[2], in_shape[3]
    return np.broadcast_to(grad_out / (h * w), (grad_out.shape[0],) + tuple(in_shape[1:])).copy()


# =============================================================================
# GLOBAL AVERAGE POOL LAYER
# =============================================================================

class GlobalAvgPool(BaseLayer):
    """Collapses the spatial dims ahead of the fully-connected layer."""

    kind = "global_avg_pool"

    @property
    def out_shape(self) -> Shape4:
        return (self.in_shape[0], self.in_shape[1], 1, 1)

    def count_mult_adds(self) -> int:
        return 0

    def forward(self, x, params, buffers, mode):
        self._check_input(x)
        y = global_avg_pool(x)
        return y, LayerCache(self.prefix, y.shape, {'in_shape': x.shape})

    def backward(self, cache, grad_out, params):
        self._check_cache(cache, grad_out)
        return global_avg_pool_backward(grad_out, cache['in_shape']), {}
