"""
Complexity Analyzer

Parameter counts, multiply-add counts and model size for a ModelConfig, plus
the deployment-constraint indicator:

    passes iff  val accuracy >= 90%
            and params < 15k (strict)
            and weights stored at <= 8 bits
            and (when required) only microcontroller ops (no batch-norm)

Counting conventions:
    - conv: C_out * (C_in/groups) * kH * kW + C_out params;
      out_elems * (C_in/groups) * kH * kW mult-adds
    - batch-norm: 2*C params (gamma, beta); out_elems mult-adds (folded affine)
    - dense: in*out + out params; in*out mult-adds
    - attention condenser: embed1 + embed2 + 1 (scale) params; both embedding
      convs on the pooled grid plus 2 mult-adds per element for selective attention
    - pooling, activations, softmax: 0 mult-adds
    - model size: params * bits / 1000 kbits (decimal kilo)
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from .model_graph import ConvSpec, ModelConfig, build_layers
from .settings import MAX_PARAMS, MIN_VAL_ACCURACY, REQUIRED_WEIGHT_BITS

logger = logging.getLogger(__name__)

SUPPORTED_BITS = (4, 8, 16, 32)


def model_size_kbits(params: int, weight_bits: int) -> float:
    """params * bits / 1000."""
    if weight_bits not in SUPPORTED_BITS:
        raise ValueError(f"Unsupported weight width {weight_bits}; expected one of {SUPPORTED_BITS}")
    if params < 0:
        raise ValueError(f"Parameter count must be non-negative, got {params}")
    return params * weight_bits / 1000


@dataclass
class LayerRow:
    name: str
    kind: str
    params: int = 0
    mult_adds: int = 0


def _with_input_shape(config: ModelConfig, input_shape: Optional[Sequence[int]]) -> ModelConfig:
    if input_shape is None:
        return config
    shape = tuple(int(d) for d in input_shape)
    if len(shape) != 4:
        raise ValueError(f"Input shape needs 4 dims, got {shape}")
    # counts are per sample
    return config.model_copy(update={'input_shape': (1,) + shape[1:]})


def count_params(config: ModelConfig) -> List[LayerRow]:
    """Per-layer learnable parameter counts (running statistics excluded)."""
    return [
        LayerRow(layer.prefix, layer.kind, params=layer.count_params())
        for layer in build_layers(config)
    ]


def count_mult_adds(config: ModelConfig, input_shape: Optional[Sequence[int]] = None) -> List[LayerRow]:
    """Per-layer multiply-accumulates for one inference pass of one sample."""
    return [
        LayerRow(layer.prefix, layer.kind, mult_adds=layer.count_mult_adds())
        for layer in build_layers(_with_input_shape(config, input_shape))
    ]


# =============================================================================
# CONSTRAINTS
# =============================================================================

@dataclass
class ConstraintSpec:
    """
    Deployment constraints.

    Attributes:
        min_val_accuracy: Inclusive lower bound
        max_params: Exclusive upper bound
        required_weight_bits: Weights must be stored at this width or narrower
        micro_ops_only: Also require the microcontroller op set
    """
    min_val_accuracy: float = MIN_VAL_ACCURACY
    max_params: int = MAX_PARAMS
    required_weight_bits: int = REQUIRED_WEIGHT_BITS
    micro_ops_only: bool = False

    def __post_init__(self):
        if not 0 < self.min_val_accuracy <= 1:
            raise ValueError(f"min_val_accuracy must be in (0, 1], got {self.min_val_accuracy}")
        if self.max_params <= 0 or self.required_weight_bits <= 0:
            raise ValueError("Constraint bounds must be positive")


@dataclass
class ConstraintCheck:
    passed: bool
    value: Any
    limit: Any
    reason: str = ''


@dataclass
class ConstraintVerdict:
    passed: bool
    checks: Dict[str, ConstraintCheck] = field(default_factory=dict)

    @property
    def indicator(self) -> int:
        return 1 if self.passed else 0

    def failed(self) -> List[str]:
        return [name for name, c in self.checks.items() if not c.passed]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'passed': self.passed,
            'checks': {name: vars(c) for name, c in self.checks.items()},
        }


# =============================================================================
# REPORT
# =============================================================================

@dataclass
class ComplexityReport:
    """
    Attributes:
        layers: Per-layer rows
        input_shape: Shape the mult-adds were counted for
        weight_bits: Width used for model_size_kbits
        constraints: Verdict attached by check_constraints, if any
    """
    layers: List[LayerRow]
    input_shape: tuple
    weight_bits: int
    constraints: Optional[ConstraintVerdict] = None

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.layers)

    @property
    def total_mult_adds(self) -> int:
        return sum(r.mult_adds for r in self.layers)

    @property
    def model_size_kbits(self) -> float:
        return model_size_kbits(self.total_params, self.weight_bits)

    @property
    def baseline_kbits(self) -> float:
        """Size of the same weights at 32 bits."""
        return model_size_kbits(self.total_params, 32)

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(
            [vars(r) for r in self.layers], columns=['name', 'kind', 'params', 'mult_adds']
        )
        totals = pd.DataFrame(
            [{'name': 'total', 'kind': '', 'params': self.total_params, 'mult_adds': self.total_mult_adds}]
        )
        return pd.concat([df, totals], ignore_index=True)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'layers': [{'name': r.name, 'params': r.params, 'mult_adds': r.mult_adds} for r in self.layers],
            'totals': {'params': self.total_params, 'mult_adds': self.total_mult_adds},
            'model_size_kbits': self.model_size_kbits,
            'weight_bits': self.weight_bits,
            'input_shape': list(self.input_shape),
            'constraints': self.constraints.to_dict() if self.constraints else {},
        }


def analyze(config: ModelConfig, input_shape: Optional[Sequence[int]] = None,
            weight_bits: Optional[int] = None) -> ComplexityReport:
    """Full report: params and mult-adds per layer, totals and size."""
    config = _with_input_shape(config, input_shape)
    params = count_params(config)
    macs = count_mult_adds(config)
    rows = [
        LayerRow(p.name, p.kind, params=p.params, mult_adds=m.mult_adds)
        for p, m in zip(params, macs)
    ]
    bits = weight_bits if weight_bits is not None else config.weight_bits
    if bits not in SUPPORTED_BITS:
        raise ValueError(f"Unsupported weight width {bits}; expected one of {SUPPORTED_BITS}")
    return ComplexityReport(layers=rows, input_shape=tuple(config.input_shape), weight_bits=bits)


def check_constraints(report: ComplexityReport, val_accuracy: Optional[float],
                      spec: Optional[ConstraintSpec] = None,
                      config: Optional[ModelConfig] = None) -> ConstraintVerdict:
    """
    Evaluate the deployment indicator for a report.

    A missing validation accuracy fails the accuracy constraint. The
    micro-op constraint is only evaluated when spec.micro_ops_only is set.
    """
    spec = spec or ConstraintSpec()
    checks: Dict[str, ConstraintCheck] = {}

    if val_accuracy is None:
        checks['val_accuracy'] = ConstraintCheck(False, None, spec.min_val_accuracy, 'not provided')
    else:
        ok = val_accuracy >= spec.min_val_accuracy
        checks['val_accuracy'] = ConstraintCheck(
            ok, val_accuracy, spec.min_val_accuracy, '' if ok else 'below minimum'
        )

    params = report.total_params
    ok = params < spec.max_params
    checks['params'] = ConstraintCheck(ok, params, spec.max_params, '' if ok else 'not below limit')

    ok = report.weight_bits <= spec.required_weight_bits
    checks['weight_bits'] = ConstraintCheck(
        ok, report.weight_bits, spec.required_weight_bits, '' if ok else 'weights too wide'
    )

    if spec.micro_ops_only:
        if config is None:
            checks['micro_ops'] = ConstraintCheck(False, None, 'no batch_norm', 'config not provided')
        else:
            bn_layers = [i for i, s in enumerate(config.layers) if isinstance(s, ConvSpec) and s.batch_norm]
            ok = not bn_layers
            checks['micro_ops'] = ConstraintCheck(
                ok, bn_layers, 'no batch_norm', '' if ok else f"batch_norm in layers {bn_layers}"
            )

    verdict = ConstraintVerdict(passed=all(c.passed for c in checks.values()), checks=checks)
    report.constraints = verdict
    if verdict.passed:
        logger.info(f"[Constraints] PASS ({params} params, {report.weight_bits}-bit, acc={val_accuracy})")
    else:
        logger.warning(f"[Constraints] FAIL: {', '.join(verdict.failed())}")
    return verdict
