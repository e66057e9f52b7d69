"""
Weight Quantizer

Per-tensor affine post-training quantization of model weights, evaluated by
quantize-dequantize ("fake-quant") inference.

    scale      = (max - min) / (2^bits - 1)
    q          = clamp(round((x - min) / scale)) + lowest
    x_hat      = scale * (q - lowest) + min
    zero_point = integer code closest to real 0 (clamped to the code range)

Measuring from the range minimum keeps the round-trip error within scale/2
for every element. Weight tensors (conv, dense and embedding kernels) are
quantized; biases, batch-norm affine terms and condenser scales stay at full
precision.

Usage:
    from src.quantizer import quantize_model

    model8, report = quantize_model(model, bits=8)
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .complexity import model_size_kbits
from .errors import QuantizationError
from .model_graph import Model, model_forward
from .tensor import as_array

logger = logging.getLogger(__name__)

TENSOR_BITS = (4, 8)
MODEL_BITS = (4, 8, 32)


def code_range(bits: int) -> Tuple[int, int]:
    """(lowest, highest) signed code for a bit width."""
    if bits not in TENSOR_BITS:
        raise QuantizationError(f"Unsupported tensor bit width {bits}; expected one of {TENSOR_BITS}")
    return -(1 << (bits - 1)), (1 << (bits - 1)) - 1


@dataclass
class QuantizedTensor:
    """
    Attributes:
        q: int8 codes (4-bit codes also live in int8)
        scale: Step between codes (> 0)
        zero_point: Code representing real 0, in [lowest, highest]
        minimum: Real value of the lowest code
        bits: Code width
        shape: Original tensor shape
    """
    q: np.ndarray
    scale: float
    zero_point: int
    minimum: float
    bits: int = 8
    shape: Tuple[int, ...] = ()

    def __post_init__(self):
        if not self.scale > 0:
            raise QuantizationError(f"Quantization scale must be positive, got {self.scale}")
        lowest, highest = code_range(self.bits)
        if not lowest <= self.zero_point <= highest:
            raise QuantizationError(f"zero_point {self.zero_point} outside [{lowest}, {highest}]")
        if not self.shape:
            self.shape = tuple(self.q.shape)

    @property
    def lowest(self) -> int:
        return code_range(self.bits)[0]


def quantize_tensor(t, bits: int = 8,
                    value_range: Optional[Tuple[float, float]] = None) -> QuantizedTensor:
    """
    Quantize one tensor.

    Args:
        t: Finite array
        bits: 4 or 8
        value_range: Declared (min, max); defaults to the tensor's own range.
            Values outside a declared range are clamped.

    Returns:
        QuantizedTensor
    """
    x = np.asarray(as_array(t), dtype=np.float64)
    lowest, highest = code_range(bits)
    if not np.all(np.isfinite(x)):
        raise QuantizationError("Cannot quantize a tensor with NaN/Inf values")

    if value_range is not None:
        lo, hi = float(value_range[0]), float(value_range[1])
        if not lo <= hi:
            raise QuantizationError(f"Declared range {value_range} is empty")
    elif x.size:
        lo, hi = float(x.min()), float(x.max())
    else:
        lo = hi = 0.0

    if hi == lo:
        # degenerate: every code is the lowest code and dequantizes to lo exactly
        q = np.full(x.shape, lowest, dtype=np.int8)
        return QuantizedTensor(q, 1.0, lowest, lo, bits, tuple(x.shape))

    scale = (hi - lo) / (highest - lowest)
    steps = np.clip(np.round((x - lo) / scale), 0, highest - lowest)
    q = (steps + lowest).astype(np.int8)
    zero_point = int(np.clip(round(lowest - lo / scale), lowest, highest))
    return QuantizedTensor(q, scale, zero_point, lo, bits, tuple(x.shape))


def dequantize(qt: QuantizedTensor) -> np.ndarray:
    """x_hat = scale * (q - lowest) + min, in f64."""
    steps = qt.q.astype(np.float64) - qt.lowest
    return (qt.scale * steps + qt.minimum).reshape(qt.shape)


def is_weight(name: str) -> bool:
    """Kernels of conv, dense and embedding layers."""
    return name.endswith('.weight')


def stored_weight_bits(model: Model) -> int:
    """Width the weights are actually held at: 32 unless every weight carries a quantization record."""
    weights = [name for name in model.params if is_weight(name)]
    if not weights or any(name not in model.quantized for name in weights):
        return 32
    return max(model.quantized[name].bits for name in weights)


# =============================================================================
# MODEL QUANTIZATION
# =============================================================================

@dataclass
class TensorQuantization:
    name: str
    scale: float
    zero_point: int
    max_abs_error: float


@dataclass
class QuantizationReport:
    """
    Attributes:
        bits: Weight width
        tensors: One row per quantized weight tensor
        weight_params: Elements in quantized tensors
        other_params: Biases, BN affine terms, condenser scales
        biases_full_precision: Count other_params at 32 bits in kbits
    """
    bits: int
    tensors: List[TensorQuantization] = field(default_factory=list)
    weight_params: int = 0
    other_params: int = 0
    biases_full_precision: bool = False

    @property
    def total_params(self) -> int:
        return self.weight_params + self.other_params

    @property
    def model_size_kbits(self) -> float:
        if self.biases_full_precision and self.bits != 32:
            return model_size_kbits(self.weight_params, self.bits) + model_size_kbits(self.other_params, 32)
        return model_size_kbits(self.total_params, self.bits)

    @property
    def max_abs_error(self) -> float:
        return max((t.max_abs_error for t in self.tensors), default=0.0)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [vars(t) for t in self.tensors],
            columns=['name', 'scale', 'zero_point', 'max_abs_error'],
        )

    def to_dict(self) -> Dict:
        return {
            'bits': self.bits,
            'weight_params': self.weight_params,
            'other_params': self.other_params,
            'model_size_kbits': self.model_size_kbits,
            'max_abs_error': self.max_abs_error,
            'tensors': [vars(t) for t in self.tensors],
        }


def quantize_model(m: Model, bits: int = 8,
                   biases_full_precision: bool = False) -> Tuple[Model, QuantizationReport]:
    """
    Quantize every weight tensor of a model.

    Returns a new model whose weights are the dequantized codes (the source
    model is untouched) plus a size report. bits=32 passes the model through.
    """
    if bits not in MODEL_BITS:
        raise QuantizationError(f"Unsupported model bit width {bits}; expected one of {MODEL_BITS}")

    out = m.copy()
    report = QuantizationReport(bits=bits, biases_full_precision=biases_full_precision)

    for name, value in m.params.items():
        if not is_weight(name):
            report.other_params += value.size
            continue
        report.weight_params += value.size
        if bits == 32:
            continue
        qt = quantize_tensor(value, bits)
        deq = dequantize(qt)
        out.params[name] = deq
        out.quantized[name] = qt
        report.tensors.append(TensorQuantization(
            name=name,
            scale=qt.scale,
            zero_point=qt.zero_point,
            max_abs_error=float(np.max(np.abs(deq - value))) if value.size else 0.0,
        ))

    if bits == 32:
        out.quantized = {}
    else:
        out.config = out.config.model_copy(update={'weight_bits': bits})

    logger.info(
        f"[Quantizer] {bits}-bit: {len(report.tensors)} weight tensors, "
        f"{report.total_params} params, {report.model_size_kbits:.1f} kbits, "
        f"max abs error {report.max_abs_error:.3g}"
    )
    return out, report


def forward_delta(model_a: Model, model_b: Model, x) -> float:
    """Max absolute probability difference between two models on one batch."""
    pa, _ = model_forward(model_a, x)
    pb, _ = model_forward(model_b, x)
    delta = float(np.max(np.abs(pa - pb))) if pa.size else 0.0
    if not np.isfinite(delta):
        raise QuantizationError("Quantized forward produced non-finite outputs")
    return delta
