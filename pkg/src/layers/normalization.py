"""
Batch Normalization

Per-channel normalization over (N, H, W). TRAIN mode normalizes with batch
statistics and moves the running statistics toward them; INFER mode is a
fixed affine map per channel built from the running statistics.

Present in the X/Y/Z templates, absent under the microcontroller op set.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..errors import ShapeError
from .base import Mode

_AXES = (0, 2, 3)


@dataclass
class BatchNormParams:
    """
    Attributes:
        gamma, beta: learnable scale and shift (length C)
        running_mean, running_var: updated in place in TRAIN mode
        eps: added to the variance
        momentum: weight of the new batch statistic in the running update
    """
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    def __post_init__(self):
        c = self.gamma.shape
        for name in ('beta', 'running_mean', 'running_var'):
            if getattr(self, name).shape != c:
                raise ShapeError(f"BatchNorm {name} shape {getattr(self, name).shape} != {c}")
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError(f"BatchNorm momentum {self.momentum} outside [0, 1]")
        if self.eps <= 0:
            raise ValueError(f"BatchNorm eps must be positive, got {self.eps}")


@dataclass
class BatchNormCache:
    mode: Mode
    x_hat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray


def _per_channel(v: np.ndarray) -> np.ndarray:
    return v[None, :, None, None]


def batchnorm(x: np.ndarray, p: BatchNormParams, mode: Mode) -> Tuple[np.ndarray, BatchNormCache]:
    """
    y = gamma * (x - mu) / sqrt(var + eps) + beta

    Returns:
        (y, cache)
    """
    if x.shape[1] != p.gamma.shape[0]:
        raise ShapeError(f"Input has {x.shape[1]} channels, BatchNorm has {p.gamma.shape[0]}")

    if mode is Mode.TRAIN:
        if x.shape[0] * x.shape[2] * x.shape[3] == 0:
            raise ShapeError("BatchNorm in train mode needs a non-empty batch")
        mean = x.mean(axis=_AXES)
        var = x.var(axis=_AXES)
        p.running_mean[...] = (1.0 - p.momentum) * p.running_mean + p.momentum * mean
        p.running_var[...] = (1.0 - p.momentum) * p.running_var + p.momentum * var
    else:
        mean, var = p.running_mean, p.running_var

    inv_std = 1.0 / np.sqrt(var + p.eps)
    x_hat = (x - _per_channel(mean)) * _per_channel(inv_std)
    y = _per_channel(p.gamma) * x_hat + _per_channel(p.beta)
    return y.astype(x.dtype, copy=False), BatchNormCache(mode, x_hat, inv_std, p.gamma)


def batchnorm_backward(cache: BatchNormCache,
                       grad_out: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Returns:
        (grad_x, grad_gamma, grad_beta)
    """
    grad_gamma = (grad_out * cache.x_hat).sum(axis=_AXES)
    grad_beta = grad_out.sum(axis=_AXES)
    grad_x_hat = grad_out * _per_channel(cache.gamma)

    if cache.mode is Mode.INFER:
        return grad_x_hat * _per_channel(cache.inv_std), grad_gamma, grad_beta

    m = grad_out.shape[0] * grad_out.shape[2] * grad_out.shape[3]
    grad_x = _per_channel(cache.inv_std / m) * (
        m * grad_x_hat
        - _per_channel(grad_x_hat.sum(axis=_AXES))
        - cache.x_hat * _per_channel((grad_x_hat * cache.x_hat).sum(axis=_AXES))
    )
    return grad_x, grad_gamma, grad_beta
