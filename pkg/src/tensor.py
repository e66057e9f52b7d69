"""
Tensor Core

Dense rank-4 (N, C, H, W) tensors with H = time frames and W = MFCC
coefficient, plus the seeded generator used for every random initialization.

Layer primitives work on plain numpy arrays of this layout; Tensor is the
value type handed across module boundaries and accepted anywhere an array is
(it implements __array__).
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Tuple, Union

import numpy as np

from .errors import ShapeError

logger = logging.getLogger(__name__)

Shape4 = Tuple[int, int, int, int]


class Precision(Enum):
    """Numeric type of a run. FLOAT64 trains, FLOAT32 is the inference path."""
    FLOAT64 = "f64"
    FLOAT32 = "f32"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float64 if self is Precision.FLOAT64 else np.float32)


def check_shape(shape: Sequence[int]) -> Shape4:
    """Validate a 4-dim shape and its element count."""
    if len(shape) != 4:
        raise ShapeError(f"Expected 4 dims (N, C, H, W), got {len(shape)}: {tuple(shape)}")
    dims = tuple(int(d) for d in shape)
    if any(d < 0 for d in dims):
        raise ShapeError(f"Negative dimension in shape {dims}")
    count = 1
    for d in dims:
        count *= d
    if count > np.iinfo(np.intp).max:
        raise ShapeError(f"Element count {count} of shape {dims} overflows the index range")
    return dims


# =============================================================================
# RANDOM NUMBER GENERATION
# =============================================================================

class Rng:
    """
    Seeded generator: numpy's PCG64 (64-bit state, fixed algorithm).

    Same seed gives the same stream on every platform. An Rng has one owner;
    use spawn() to hand out independent child streams.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    @classmethod
    def _from_sequence(cls, seq: np.random.SeedSequence, seed: int) -> 'Rng':
        rng = cls.__new__(cls)
        rng.seed = seed
        rng._gen = np.random.Generator(np.random.PCG64(seq))
        return rng

    def spawn(self, key: int) -> 'Rng':
        """Derive an independent stream keyed by an integer."""
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(int(key),))
        return Rng._from_sequence(seq, self.seed)

    def uniform(self, lo: float, hi: float, size) -> np.ndarray:
        return self._gen.uniform(lo, hi, size=size)

    def normal(self, mean: float, std: float, size) -> np.ndarray:
        return self._gen.normal(mean, std, size=size)

    def he_normal(self, fan_in: int, size) -> np.ndarray:
        """Gaussian with std sqrt(2 / fan_in)."""
        if fan_in <= 0:
            raise ShapeError(f"fan_in must be positive, got {fan_in}")
        return self._gen.normal(0.0, np.sqrt(2.0 / fan_in), size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, lo: int, hi: int, size=None):
        return self._gen.integers(lo, hi, size=size)


# =============================================================================
# FILL SPECIFICATIONS
# =============================================================================

@dataclass(frozen=True)
class Constant:
    value: float = 0.0


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float
    rng: Rng


@dataclass(frozen=True)
class HeNormal:
    fan_in: int
    rng: Rng


Fill = Union[Constant, Uniform, HeNormal]


# =============================================================================
# TENSOR
# =============================================================================

@dataclass(eq=False)
class Tensor:
    """
    Rank-4 dense tensor in row-major (N-major, W-minor) order.

    Attributes:
        data: ndarray of shape (N, C, H, W); public ops never mutate it
    """
    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data)
        check_shape(self.data.shape)

    @property
    def shape(self) -> Shape4:
        return tuple(self.data.shape)

    @property
    def flat(self) -> np.ndarray:
        """Row-major flat view of the data."""
        return self.data.reshape(-1)

    def index(self, n: int, c: int, h: int, w: int) -> int:
        """Linear index ((n*C + c)*H + h)*W + w."""
        _, C, H, W = self.shape
        return ((n * C + c) * H + h) * W + w

    def at(self, n: int, c: int, h: int, w: int) -> float:
        return float(self.flat[self.index(n, c, h, w)])

    def astype(self, precision: Precision) -> 'Tensor':
        return Tensor(self.data.astype(precision.dtype))

    def all_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"


def as_array(x) -> np.ndarray:
    """Accept a Tensor or an ndarray and return the ndarray."""
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def tensor_new(shape: Sequence[int], fill: Fill = Constant(0.0),
               precision: Precision = Precision.FLOAT64) -> Tensor:
    """
    Create a tensor of the given shape.

    Args:
        shape: 4 non-negative ints (N, C, H, W)
        fill: Constant(value), Uniform(lo, hi, rng) or HeNormal(fan_in, rng)
        precision: storage precision

    Returns:
        New Tensor
    """
    dims = check_shape(shape)

    if isinstance(fill, Constant):
        data = np.full(dims, fill.value, dtype=precision.dtype)
    elif isinstance(fill, Uniform):
        data = fill.rng.uniform(fill.lo, fill.hi, dims).astype(precision.dtype)
    elif isinstance(fill, HeNormal):
        data = fill.rng.he_normal(fill.fan_in, dims).astype(precision.dtype)
    else:
        raise TypeError(f"Unknown fill specification: {fill!r}")

    return Tensor(data)


def check_broadcast(a_shape: Sequence[int], b_shape: Sequence[int]) -> None:
    """b broadcasts to a when each of its dims equals a's or is 1."""
    if len(a_shape) != len(b_shape) or any(
        bd not in (ad, 1) for ad, bd in zip(a_shape, b_shape)
    ):
        raise ShapeError(f"Shape {tuple(b_shape)} does not broadcast to {tuple(a_shape)}")


def tensor_mul(a, b) -> Tensor:
    """Elementwise a * b with b broadcast to a's shape."""
    a_arr, b_arr = as_array(a), as_array(b)
    check_broadcast(a_arr.shape, b_arr.shape)
    return Tensor(a_arr * b_arr)


def tensor_reshape(a, shape: Sequence[int]) -> Tensor:
    """Same flat data, new shape."""
    a_arr = as_array(a)
    dims = check_shape(shape)
    if int(np.prod(dims)) != a_arr.size:
        raise ShapeError(f"Cannot reshape {a_arr.shape} ({a_arr.size} elements) to {dims}")
    return Tensor(a_arr.reshape(dims).copy())
