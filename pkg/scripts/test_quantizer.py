#!/usr/bin/env python3
"""
Test weight quantization.

Verifies:
1. Round-trip error stays within scale/2 on random tensors; codes are scale-equivariant
2. Degenerate and invalid tensors
3. quantize_model only touches weight tensors and leaves the source model alone
   (stored_weight_bits reports 32 until it has run)
4. An 8-bit model's probabilities stay close to the f64 model's
"""

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pytest

from scripts.testing_utils import tiny_config
from src.errors import QuantizationError
from src.model_graph import build_model, load_config, model_forward
from src.quantizer import (
    code_range,
    dequantize,
    forward_delta,
    is_weight,
    quantize_model,
    quantize_tensor,
    stored_weight_bits,
)
from src.serialization import load_model, save_model
from src.tensor import Rng

CONFIG_DIR = Path(__file__).parent.parent / 'configs'


# =============================================================================
# TENSORS
# =============================================================================

@pytest.mark.parametrize('seed', range(100))
def test_round_trip_error_bound(seed):
    rng = Rng(seed)
    shape = tuple(int(d) for d in rng.integers(1, 6, size=4))
    x = rng.normal(0, float(rng.uniform(0.01, 3.0, None)), shape) + float(rng.normal(0, 1, None))
    qt = quantize_tensor(x, bits=8)
    x_hat = dequantize(qt)

    assert qt.q.dtype == np.int8
    assert x_hat.shape == x.shape
    if x.max() > x.min():
        assert qt.scale == pytest.approx((x.max() - x.min()) / 255)
    assert np.max(np.abs(x_hat - x)) <= qt.scale / 2 + 1e-12
    lowest, highest = code_range(8)
    assert lowest <= qt.zero_point <= highest


@pytest.mark.parametrize('c', [0.5, 3.7, 4.0, 1024.0])
def test_scale_equivariance(c):
    x = Rng(11).normal(0.3, 1.5, (4, 3, 3, 3))
    qt, scaled = quantize_tensor(x), quantize_tensor(x * c)
    assert np.array_equal(scaled.q, qt.q)
    assert scaled.zero_point == qt.zero_point
    assert scaled.scale == pytest.approx(qt.scale * c, rel=1e-12)
    np.testing.assert_allclose(dequantize(scaled), dequantize(qt) * c, rtol=1e-12, atol=1e-12)


def test_degenerate_tensor():
    qt = quantize_tensor(np.full((2, 3), 0.7))
    assert qt.scale == 1.0
    assert qt.zero_point == -128
    assert np.all(qt.q == -128)
    assert np.array_equal(dequantize(qt), np.full((2, 3), 0.7))


def test_zero_point_represents_zero():
    x = np.linspace(-1.0, 3.0, 50)
    qt = quantize_tensor(x)
    # zero_point dequantizes to within half a step of 0
    assert abs(qt.scale * (qt.zero_point - qt.lowest) + qt.minimum) <= qt.scale / 2 + 1e-12


def test_declared_range_clamps():
    qt = quantize_tensor(np.array([-2.0, 0.0, 2.0]), value_range=(-1.0, 1.0))
    np.testing.assert_allclose(dequantize(qt)[[0, 2]], [-1.0, 1.0], atol=1e-12)
    with pytest.raises(QuantizationError):
        quantize_tensor(np.zeros(3), value_range=(1.0, -1.0))


def test_invalid_inputs():
    with pytest.raises(QuantizationError):
        quantize_tensor(np.array([0.0, np.nan]))
    with pytest.raises(QuantizationError):
        quantize_tensor(np.array([0.0, np.inf]))
    with pytest.raises(QuantizationError):
        quantize_tensor(np.zeros(3), bits=3)


def test_four_bit_code_range():
    assert code_range(4) == (-8, 7)
    x = Rng(1).normal(0, 1, 200)
    qt = quantize_tensor(x, bits=4)
    assert qt.q.min() >= -8 and qt.q.max() <= 7
    assert np.max(np.abs(dequantize(qt) - x)) <= qt.scale / 2 + 1e-12


def test_is_weight():
    assert is_weight('layer0.weight')
    assert is_weight('layer1.embed1.weight')
    assert not is_weight('layer0.bias')
    assert not is_weight('layer0.bn.gamma')
    assert not is_weight('layer1.scale_logit')


# =============================================================================
# MODELS
# =============================================================================

def test_quantize_model_preserves_structure():
    model = build_model(tiny_config(batch_norm=True), seed=3)
    original = {k: v.copy() for k, v in model.params.items()}
    q8, report = quantize_model(model, bits=8)

    assert list(q8.params) == list(model.params)
    assert all(q8.params[k].shape == model.params[k].shape for k in model.params)
    assert all(np.array_equal(model.params[k], original[k]) for k in original)
    assert q8.config.weight_bits == 8
    assert set(q8.quantized) == {k for k in model.params if is_weight(k)}
    for k in model.params:
        if not is_weight(k):
            assert np.array_equal(q8.params[k], model.params[k])

    assert report.total_params == model.param_count
    assert report.model_size_kbits == model.param_count * 8 / 1000
    assert len(report.to_frame()) == len(q8.quantized)


def test_biases_full_precision_size():
    model = build_model(tiny_config(), seed=3)
    _, report = quantize_model(model, bits=8, biases_full_precision=True)
    assert report.other_params > 0
    expected = report.weight_params * 8 / 1000 + report.other_params * 32 / 1000
    assert report.model_size_kbits == pytest.approx(expected)


def test_32_bit_passes_through():
    model = build_model(tiny_config(), seed=3)
    same, report = quantize_model(model, bits=32)
    assert same.quantized == {}
    assert all(np.array_equal(same.params[k], model.params[k]) for k in model.params)
    assert report.model_size_kbits == model.param_count * 32 / 1000
    with pytest.raises(QuantizationError):
        quantize_model(model, bits=16)


def test_stored_weight_bits():
    model = build_model(tiny_config(), seed=3)
    assert model.config.weight_bits == 8
    assert stored_weight_bits(model) == 32
    assert stored_weight_bits(quantize_model(model, bits=8)[0]) == 8
    assert stored_weight_bits(quantize_model(model, bits=4)[0]) == 4
    assert stored_weight_bits(quantize_model(model, bits=32)[0]) == 32


def test_forward_delta_small():
    print("\n" + "=" * 60)
    print("TEST: 8-bit forward delta on tinyspeech-z")
    print("=" * 60)

    model = build_model(load_config(CONFIG_DIR / 'tinyspeech-z.cfg'), seed=0)
    q8, _ = quantize_model(model, bits=8)
    x = Rng(5).normal(0, 1, (4, 1, 98, 40))
    delta = forward_delta(model, q8, x)
    print(f"max |p - p8| = {delta:.5f}")
    assert delta < 0.05


def test_quantized_model_file(tmp_path):
    model = build_model(tiny_config(), seed=4)
    q8, _ = quantize_model(model, bits=8)
    path = save_model(q8, tmp_path / 'q8.tspn')
    again = load_model(path)

    assert set(again.quantized) == set(q8.quantized)
    for k, qt in q8.quantized.items():
        assert np.array_equal(again.quantized[k].q, qt.q)
        assert again.quantized[k].zero_point == qt.zero_point
    x = Rng(6).normal(0, 1, (3, 1, 8, 6))
    np.testing.assert_array_equal(model_forward(again, x)[0], model_forward(q8, x)[0])


if __name__ == '__main__':
    sys.exit(pytest.main([__file__, '-v']))
