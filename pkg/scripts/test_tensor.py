#!/usr/bin/env python3
"""
Test the tensor core.

Verifies:
1. tensor_new honors shape, fill and precision; same seed gives the same tensor
2. Row-major indexing formula
3. Broadcast and reshape rules raise ShapeError on mismatch
4. Rng child streams are deterministic and independent
"""

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pytest

from src.errors import ShapeError
from src.tensor import (
    Constant,
    HeNormal,
    Precision,
    Rng,
    Tensor,
    Uniform,
    check_shape,
    tensor_mul,
    tensor_new,
    tensor_reshape,
)


def test_tensor_new_fills():
    print("\n" + "=" * 60)
    print("TEST: tensor_new fills")
    print("=" * 60)

    t = tensor_new((2, 3, 4, 5), Constant(1.5))
    assert t.shape == (2, 3, 4, 5)
    assert np.all(t.data == 1.5)

    u = tensor_new((1, 2, 8, 8), Uniform(-0.5, 0.25, Rng(3)))
    assert u.data.min() >= -0.5 and u.data.max() < 0.25

    f32 = tensor_new((1, 1, 2, 2), Constant(0.0), Precision.FLOAT32)
    assert f32.data.dtype == np.float32

    empty = tensor_new((0, 3, 2, 2))
    assert empty.flat.size == 0


def test_same_seed_same_tensor():
    a = tensor_new((2, 4, 3, 3), HeNormal(36, Rng(11)))
    b = tensor_new((2, 4, 3, 3), HeNormal(36, Rng(11)))
    c = tensor_new((2, 4, 3, 3), HeNormal(36, Rng(12)))
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)


def test_he_normal_scale():
    x = Rng(0).he_normal(50, (200000,))
    assert abs(x.std() - np.sqrt(2 / 50)) < 0.005


def test_row_major_index():
    t = Tensor(np.arange(120, dtype=np.float64).reshape(2, 3, 4, 5))
    assert t.index(1, 2, 3, 4) == 119
    assert t.index(0, 1, 0, 0) == 20
    for n, c, h, w in [(0, 0, 0, 0), (1, 0, 2, 3), (0, 2, 1, 4)]:
        assert t.at(n, c, h, w) == t.data[n, c, h, w]


def test_check_shape_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        check_shape((1, 2, 3))
    with pytest.raises(ShapeError):
        check_shape((1, -2, 3, 4))
    with pytest.raises(ShapeError):
        Tensor(np.zeros((2, 2)))


def test_tensor_mul_broadcast():
    a = Tensor(np.ones((2, 3, 4, 5)))
    scale = np.arange(3, dtype=np.float64).reshape(1, 3, 1, 1)
    out = tensor_mul(a, scale)
    assert out.shape == (2, 3, 4, 5)
    assert np.all(out.data[:, 2] == 2.0)

    with pytest.raises(ShapeError):
        tensor_mul(a, np.ones((1, 2, 1, 1)))
    with pytest.raises(ShapeError):
        tensor_mul(a, np.ones((3, 4, 5)))


def test_tensor_reshape():
    a = Tensor(np.arange(24, dtype=np.float64).reshape(1, 2, 3, 4))
    b = tensor_reshape(a, (1, 1, 6, 4))
    assert np.array_equal(a.flat, b.flat)
    with pytest.raises(ShapeError):
        tensor_reshape(a, (1, 1, 5, 5))


def test_rng_spawn():
    parent = Rng(7)
    a1 = parent.spawn(1).normal(0, 1, 5)
    a2 = Rng(7).spawn(1).normal(0, 1, 5)
    b = parent.spawn(2).normal(0, 1, 5)
    assert np.array_equal(a1, a2)
    assert not np.array_equal(a1, b)


def test_precision_cast():
    t = Tensor(np.linspace(0, 1, 16).reshape(1, 1, 4, 4))
    assert t.astype(Precision.FLOAT32).data.dtype == np.float32
    assert t.all_finite()
    assert not Tensor(np.full((1, 1, 1, 1), np.nan)).all_finite()


if __name__ == '__main__':
    sys.exit(pytest.main([__file__, '-v']))
