"""
Base Layer Framework

Defines the abstract base class and data structures shared by every layer.

A layer is stateless: its learnable tensors live in the model's parameter
registry and are handed to forward()/backward() by name. Registry names are
"<prefix>.<suffix>", e.g. "layer3.embed1.weight".
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np

from ..errors import CacheError, ShapeError
from ..tensor import Shape4

Grads = Dict[str, np.ndarray]


class Mode(Enum):
    """Execution mode. TRAIN uses batch statistics and keeps caches."""
    TRAIN = "train"
    INFER = "infer"


@dataclass
class LayerCache:
    """
    Everything a layer's backward pass needs from one forward call.

    Attributes:
        owner: Registry prefix of the layer that produced the cache
        output_shape: Shape of the forward output (grad_out must match)
        data: Saved intermediate arrays
    """
    owner: str
    output_shape: Tuple[int, ...]
    data: Dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, key: str) -> Any:
        return self.data[key]


class BaseLayer(ABC):
    """
    Abstract base class for all layers.

    Each layer implements:
    - output_shape: per-sample output shape given its input shape
    - forward() / backward(): exact analytic gradients
    - count_mult_adds(): cost of one inference pass (1 MAC = 1 mult-add)
    """

    # Layer type name (matches the config "type" key)
    kind: str = "base"

    def __init__(self, index: int, in_shape: Shape4):
        self.index = index
        self.prefix = f"layer{index}"
        self.in_shape = tuple(in_shape)

    # -------------------------------------------------------------------------
    # Shapes and registry
    # -------------------------------------------------------------------------

    @property
    @abstractmethod
    def out_shape(self) -> Shape4:
        """Per-sample (N=1) output shape."""

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        """Learnable tensors: registry suffix -> shape."""
        return {}

    def name(self, suffix: str) -> str:
        return f"{self.prefix}.{suffix}"

    def init_params(self, rng) -> Dict[str, np.ndarray]:
        """Initial values for every learnable tensor (full registry names)."""
        return {}

    def init_buffers(self) -> Dict[str, np.ndarray]:
        return {}

    def count_params(self) -> int:
        return int(sum(np.prod(shape) for shape in self.param_shapes().values()))

    @abstractmethod
    def count_mult_adds(self) -> int:
        """Multiply-accumulates for one sample."""

    # -------------------------------------------------------------------------
    # Execution
    # -------------------------------------------------------------------------

    @abstractmethod
    def forward(
        self,
        x: np.ndarray,
        params: Mapping[str, np.ndarray],
        buffers: Dict[str, np.ndarray],
        mode: Mode,
    ) -> Tuple[np.ndarray, LayerCache]:
        """
        Run the layer.

        Args:
            x: Input batch (N, C, H, W)
            params: Parameter registry
            buffers: Buffer registry (BN running stats are updated in TRAIN mode)
            mode: TRAIN or INFER

        Returns:
            (output, cache)
        """

    @abstractmethod
    def backward(
        self,
        cache: LayerCache,
        grad_out: np.ndarray,
        params: Mapping[str, np.ndarray],
    ) -> Tuple[np.ndarray, Grads]:
        """
        Gradients of the layer's forward map.

        Returns:
            (grad_in, {registry name: gradient})
        """

    def _check_cache(self, cache: Optional[LayerCache], grad_out: np.ndarray) -> None:
        if cache is None:
            raise CacheError(f"{self.prefix}: backward called without a forward cache")
        if cache.owner != self.prefix:
            raise CacheError(f"{self.prefix}: cache belongs to {cache.owner}")
        if tuple(grad_out.shape) != tuple(cache.output_shape):
            raise ShapeError(
                f"{self.prefix}: grad_out shape {grad_out.shape} != output shape {cache.output_shape}"
            )

    def _check_input(self, x: np.ndarray) -> None:
        if x.ndim != 4 or tuple(x.shape[1:]) != self.in_shape[1:]:
            raise ShapeError(
                f"{self.prefix} ({self.kind}): input {x.shape} does not match expected "
                f"(N, {', '.join(str(d) for d in self.in_shape[1:])})"
            )

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.prefix}, in={self.in_shape}, out={self.out_shape})"


def backward(layer: BaseLayer, cache: LayerCache, grad_out: np.ndarray,
             params: Mapping[str, np.ndarray]) -> Tuple[np.ndarray, Grads]:
    """Dispatch to a layer's backward pass."""
    return layer.backward(cache, grad_out, params)
