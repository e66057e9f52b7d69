#!/usr/bin/env python3
"""
Test the complexity analyzer and the deployment indicator.

Verifies:
1. Shipped templates land within 5% of the reference parameter budgets
2. count_params equals a brute-force sum over the parameter registry
3. Conv mult-adds equal the naive loop count
4. Model size arithmetic
5. Constraint indicator: strict params bound, accuracy bound, bit width, micro-ops;
   the indicator is monotone in each of them
"""

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pytest

from scripts.testing_utils import naive_conv2d, random_config, tiny_config
from src.complexity import (
    ComplexityReport,
    ConstraintSpec,
    LayerRow,
    analyze,
    check_constraints,
    count_mult_adds,
    count_params,
    model_size_kbits,
)
from src.layers import ConvBlock
from src.model_graph import build_layers, expected_registry, load_config
from src.settings import REFERENCE_BUDGETS, TEMPLATE_BUDGET_TOLERANCE
from src.tensor import Rng

CONFIG_DIR = Path(__file__).parent.parent / 'configs'

TEMPLATE_PARAMS = {'x': 10927, 'y': 6191, 'z': 2748, 'm': 4593}


# =============================================================================
# TEMPLATES
# =============================================================================

@pytest.mark.parametrize('key', sorted(REFERENCE_BUDGETS))
def test_template_within_budget(key):
    budget = REFERENCE_BUDGETS[key]
    report = analyze(load_config(CONFIG_DIR / budget.config_file))
    print(f"\n{budget.name}: {report.total_params} params (reference {budget.params}), "
          f"{report.total_mult_adds:,} mult-adds")

    assert report.total_params == TEMPLATE_PARAMS[key]
    assert abs(report.total_params - budget.params) / budget.params <= TEMPLATE_BUDGET_TOLERANCE
    assert report.total_params < 15000


def test_template_m_is_micro_only():
    config = load_config(CONFIG_DIR / 'tinyspeech-m.cfg')
    report = analyze(config)
    verdict = check_constraints(report, 0.919, ConstraintSpec(micro_ops_only=True), config)
    assert verdict.checks['micro_ops'].passed
    assert verdict.passed


# =============================================================================
# COUNTING
# =============================================================================

def _registry_total(config) -> int:
    return sum(int(np.prod(shape)) for shape in expected_registry(build_layers(config)).values())


@pytest.mark.parametrize('seed', range(50))
def test_params_match_registry_random(seed):
    config = random_config(seed)
    assert sum(r.params for r in count_params(config)) == _registry_total(config)


@pytest.mark.parametrize('name', ['tinyspeech-x.cfg', 'tinyspeech-y.cfg', 'tinyspeech-z.cfg', 'tinyspeech-m.cfg'])
def test_params_match_registry_templates(name):
    config = load_config(CONFIG_DIR / name)
    assert analyze(config).total_params == _registry_total(config)


@pytest.mark.parametrize('case', range(20))
def test_conv_mult_adds_match_naive_loop(case):
    rng = Rng(500 + case)
    groups = [1, 2][int(rng.integers(0, 2))]
    c_in = groups * int(rng.integers(1, 3))
    c_out = groups * int(rng.integers(1, 3))
    k = [1, 3][int(rng.integers(0, 2))]
    h, w = int(rng.integers(3, 8)), int(rng.integers(3, 8))
    stride = int(rng.integers(1, 3))
    padding = ['same', 'valid'][int(rng.integers(0, 2))]

    layer = ConvBlock(0, (1, c_in, h, w), c_out, kernel=k, stride=stride, padding=padding, groups=groups)
    x = rng.normal(0, 1, (1, c_in, h, w))
    wts = rng.normal(0, 1, (c_out, c_in // groups, k, k))
    _, macs = naive_conv2d(x, wts, np.zeros(c_out), groups, stride, padding)
    assert layer.count_mult_adds() == macs


def test_mult_adds_follow_input_shape():
    config = tiny_config()
    base = sum(r.mult_adds for r in count_mult_adds(config))
    doubled = sum(r.mult_adds for r in count_mult_adds(config, (1, 1, 16, 6)))
    # everything but the dense head scales with T
    assert doubled == 2 * (base - 18) + 18
    assert analyze(config, input_shape=(4, 1, 16, 6)).input_shape == (1, 1, 16, 6)


def test_mult_adds_of_tiny_config():
    # conv 1->4 k3 on 8x6: 48*4*9 = 1728
    # condenser c=4 c1=4 g=2 on pooled 4x3: 12*4*2*9 + 12*4*4 + 2*4*48 = 864 + 192 + 384
    # conv 4->6 k3: 48*6*36 = 10368
    # dense 6 -> 3: 18
    rows = count_mult_adds(tiny_config())
    assert [r.mult_adds for r in rows] == [1728, 1440, 10368, 0, 18, 0]


# =============================================================================
# SIZE
# =============================================================================

def test_model_size_kbits():
    assert model_size_kbits(6100, 8) == 48.8
    assert model_size_kbits(2700, 8) == 21.6
    assert model_size_kbits(2700, 32) == 86.4
    assert model_size_kbits(0, 4) == 0.0
    with pytest.raises(ValueError):
        model_size_kbits(100, 12)
    with pytest.raises(ValueError):
        analyze(tiny_config(), weight_bits=3)


def test_report_frame_and_dict():
    report = analyze(tiny_config(), weight_bits=8)
    df = report.to_frame()
    assert df.iloc[-1]['name'] == 'total'
    assert df.iloc[-1]['params'] == report.total_params
    assert df['params'].iloc[:-1].sum() == report.total_params

    data = report.to_dict()
    assert data['totals'] == {'params': report.total_params, 'mult_adds': report.total_mult_adds}
    assert data['model_size_kbits'] == report.total_params * 8 / 1000
    assert report.baseline_kbits == 4 * report.model_size_kbits


# =============================================================================
# CONSTRAINTS
# =============================================================================

def _report(params: int, bits: int = 8) -> ComplexityReport:
    return ComplexityReport(layers=[LayerRow('layer0', 'conv', params=params)],
                            input_shape=(1, 1, 98, 40), weight_bits=bits)


def test_constraints_pass():
    verdict = check_constraints(_report(10800), 0.946)
    assert verdict.passed and verdict.indicator == 1
    assert verdict.failed() == []


def test_params_bound_is_strict():
    verdict = check_constraints(_report(15000), 0.946)
    assert not verdict.passed
    assert verdict.failed() == ['params']
    assert check_constraints(_report(14999), 0.946).passed


def test_accuracy_bound_is_inclusive():
    assert not check_constraints(_report(10800), 0.899).passed
    assert check_constraints(_report(10800), 0.90).passed
    missing = check_constraints(_report(10800), None)
    assert missing.failed() == ['val_accuracy']


def test_weight_bits_bound():
    assert check_constraints(_report(10800, bits=4), 0.95).passed
    verdict = check_constraints(_report(10800, bits=16), 0.95)
    assert verdict.failed() == ['weight_bits']
    assert verdict.indicator == 0


def test_micro_ops_rejects_batch_norm():
    config = tiny_config(batch_norm=True)
    report = analyze(config)
    spec = ConstraintSpec(micro_ops_only=True)
    verdict = check_constraints(report, 0.95, spec, config)
    assert verdict.failed() == ['micro_ops']
    assert verdict.checks['micro_ops'].value == [0, 2]
    assert report.constraints is verdict

    # without the flag the op set is not checked
    assert 'micro_ops' not in check_constraints(report, 0.95, ConstraintSpec(), config).checks


@pytest.mark.parametrize('seed', range(4))
def test_indicator_is_monotone(seed):
    """Better accuracy, fewer params or narrower weights never turn a pass into a fail."""
    rng = Rng(seed)
    grid = [(float(acc), int(params), int(bits))
            for acc in rng.uniform(0.8, 1.0, 4)
            for params in rng.integers(10000, 20000, 4)
            for bits in (4, 8, 16, 32)]
    passed = {point: check_constraints(_report(point[1], point[2]), point[0]).passed for point in grid}
    for (acc, params, bits), ok in passed.items():
        for (acc2, params2, bits2), ok2 in passed.items():
            if acc2 >= acc and params2 <= params and bits2 <= bits:
                assert ok2 or not ok


def test_constraint_spec_validation():
    with pytest.raises(ValueError):
        ConstraintSpec(min_val_accuracy=1.5)
    with pytest.raises(ValueError):
        ConstraintSpec(max_params=0)


if __name__ == '__main__':
    sys.exit(pytest.main([__file__, '-v']))
