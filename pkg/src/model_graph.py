"""
Model Graph

Builds a runnable network from a declarative ModelConfig that follows the
TinySpeech template:

    conv -> attention condenser x N -> conv -> global avg pool -> dense -> softmax

Configs are JSON files; each layer is one object keyed by "type". Unknown
keys are errors.

Usage:
    from src.model_graph import load_config, build_model, model_forward

    config = load_config('configs/tinyspeech-y.cfg')
    model = build_model(config, seed=7)
    probs, _ = model_forward(model, x)
"""

import copy
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Annotated, Any, Dict, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, ValidationError, field_validator, model_validator

from .attention_condenser import AttentionCondenserLayer
from .errors import CacheError, ConfigError, MicroOpsViolation, ShapeError
from .layers import ALL_LAYERS
from .layers.base import BaseLayer, Grads, LayerCache, Mode
from .layers.softmax import mean_cross_entropy, softmax_cross_entropy_backward
from .tensor import Precision, Rng, Shape4, as_array

if TYPE_CHECKING:
    from .quantizer import QuantizedTensor

logger = logging.getLogger(__name__)

INPUT_MEAN = 'input.mean'
INPUT_STD = 'input.std'


# =============================================================================
# CONFIG SCHEMA
# =============================================================================

class _Spec(BaseModel):
    model_config = ConfigDict(extra='forbid')


class ConvSpec(_Spec):
    type: Literal['conv']
    channels: PositiveInt
    kernel: PositiveInt = 3
    stride: PositiveInt = 1
    padding: Literal['valid', 'same'] = 'same'
    activation: Literal['relu', 'sigmoid', 'none'] = 'relu'
    batch_norm: bool = False
    groups: PositiveInt = 1


class AttentionCondenserSpec(_Spec):
    type: Literal['attention_condenser']
    c1: PositiveInt
    c2: Optional[PositiveInt] = None      # must equal the incoming channels when given
    pool: PositiveInt = 2
    pool_stride: Optional[PositiveInt] = None
    groups: Optional[PositiveInt] = None
    kernel: PositiveInt = 3
    unpool: Literal['replicate', 'switch'] = 'replicate'


class GlobalAvgPoolSpec(_Spec):
    type: Literal['global_avg_pool']


class DenseSpec(_Spec):
    type: Literal['dense']
    units: PositiveInt


class SoftmaxSpec(_Spec):
    type: Literal['softmax']


LayerSpec = Annotated[
    Union[ConvSpec, AttentionCondenserSpec, GlobalAvgPoolSpec, DenseSpec, SoftmaxSpec],
    Field(discriminator='type'),
]


class ModelConfig(_Spec):
    """
    Declarative architecture description.

    Attributes:
        name: Display name
        input_shape: (1, 1, T, F) - one MFCC stack per sample
        n_classes: Number of output words
        labels: Optional class names (length n_classes)
        micro_ops_only: Restrict to the microcontroller op set (no batch-norm)
        weight_bits: Deployed weight precision
        layers: Ordered layer specs
    """
    name: str = 'tinyspeech'
    input_shape: Tuple[int, int, int, int] = (1, 1, 98, 40)
    n_classes: PositiveInt
    labels: Optional[List[str]] = None
    micro_ops_only: bool = False
    weight_bits: Literal[4, 8, 16, 32] = 8
    layers: List[LayerSpec]

    @field_validator('input_shape')
    @classmethod
    def _check_input_shape(cls, v):
        if v[0] != 1 or min(v) < 1:
            raise ValueError(f"input_shape must be (1, C, T, F) with positive dims, got {v}")
        return v

    @model_validator(mode='after')
    def _check_labels(self):
        if self.labels is not None and len(self.labels) != self.n_classes:
            raise ValueError(f"{len(self.labels)} labels for n_classes={self.n_classes}")
        return self


# Config "type" -> layer class
LAYER_TYPES: Dict[str, type] = {cls.kind: cls for cls in (*ALL_LAYERS, AttentionCondenserLayer)}


def _format_validation_error(e: ValidationError) -> str:
    parts = []
    for err in e.errors():
        loc = '.'.join(str(p) for p in err['loc']) or '<root>'
        parts.append(f"{loc}: {err['msg']}")
    return '; '.join(parts)


def parse_config(data: Mapping[str, Any]) -> ModelConfig:
    """Validate a config mapping; schema errors raise ConfigError."""
    try:
        return ModelConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid model config: {_format_validation_error(e)}") from e


def load_config(path: Union[str, Path]) -> ModelConfig:
    """Read and validate a JSON config file."""
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from e
    config = parse_config(data)
    logger.debug(f"[Config] Loaded {config.name} from {path} ({len(config.layers)} layers)")
    return config


def config_to_dict(config: ModelConfig) -> Dict[str, Any]:
    return config.model_dump(mode='json')


def with_labels(config: ModelConfig, labels: Sequence[str]) -> ModelConfig:
    """Copy of a template retargeted to a label set (resizes the final dense layer)."""
    labels = list(labels)
    data = config_to_dict(config)
    data['n_classes'] = len(labels)
    data['labels'] = labels
    dense = data['layers'][-2] if len(data['layers']) >= 2 else None
    if dense is not None and dense.get('type') == 'dense':
        dense['units'] = len(labels)
    return parse_config(data)


def validate_config(config: ModelConfig) -> None:
    """
    Template rules pydantic cannot express per-field.

    Raises:
        MicroOpsViolation: batch-norm under micro_ops_only (names the layer index)
        ConfigError: head of the network is not dense(n_classes) -> softmax
    """
    layers = config.layers
    if len(layers) < 2:
        raise ConfigError("A model needs at least dense(n_classes) and softmax layers")

    if config.micro_ops_only:
        for i, spec in enumerate(layers):
            if isinstance(spec, ConvSpec) and spec.batch_norm:
                raise MicroOpsViolation(
                    f"layer {i} ({spec.type}) uses batch_norm, which is outside the "
                    f"microcontroller op set (micro_ops_only=true)",
                    layer_index=i,
                )

    dense, last = layers[-2], layers[-1]
    if not isinstance(last, SoftmaxSpec):
        raise ConfigError(f"Last layer must be softmax, got {last.type}")
    if not isinstance(dense, DenseSpec) or dense.units != config.n_classes:
        got = f"dense({dense.units})" if isinstance(dense, DenseSpec) else dense.type
        raise ConfigError(f"Second-to-last layer must be dense({config.n_classes}), got {got}")
    for i, spec in enumerate(layers[:-1]):
        if isinstance(spec, SoftmaxSpec):
            raise ConfigError(f"layer {i}: softmax is only allowed as the last layer")


def build_layers(config: ModelConfig) -> List[BaseLayer]:
    """Instantiate the layer chain, checking every shape on the way."""
    shape: Shape4 = tuple(config.input_shape)
    layers = []
    for i, spec in enumerate(config.layers):
        cls = LAYER_TYPES[spec.type]
        kwargs = spec.model_dump(exclude={'type'})
        try:
            layer = cls(i, shape, **kwargs)
        except ShapeError as e:
            raise ShapeError(f"layer {i} ({spec.type}) on input {shape}: {e}") from e
        layers.append(layer)
        shape = layer.out_shape
    return layers


@dataclass
class LayerShape:
    index: int
    kind: str
    in_shape: Shape4
    out_shape: Shape4


def infer_shapes(config: ModelConfig) -> List[LayerShape]:
    return [LayerShape(l.index, l.kind, l.in_shape, l.out_shape) for l in build_layers(config)]


# =============================================================================
# MODEL
# =============================================================================

@dataclass
class Model:
    """
    A built network.

    Attributes:
        config: Config snapshot the model was built from
        layers: Instantiated layers (stateless)
        params: Learnable registry, name -> array (optimizer view)
        buffers: Non-learnable state: BN running stats, input normalization
        quantized: Quantization records for weights stored at low precision
    """
    config: ModelConfig
    layers: List[BaseLayer]
    params: Dict[str, np.ndarray]
    buffers: Dict[str, np.ndarray]
    quantized: Dict[str, 'QuantizedTensor'] = field(default_factory=dict)

    @property
    def input_shape(self) -> Shape4:
        return tuple(self.config.input_shape)

    @property
    def n_classes(self) -> int:
        return self.config.n_classes

    @property
    def labels(self) -> List[str]:
        return list(self.config.labels) if self.config.labels else [str(i) for i in range(self.n_classes)]

    @property
    def param_count(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def copy(self) -> 'Model':
        """Independent copy of every array (layers are stateless and shared)."""
        return Model(
            config=self.config.model_copy(deep=True),
            layers=self.layers,
            params={k: v.copy() for k, v in self.params.items()},
            buffers={k: v.copy() for k, v in self.buffers.items()},
            quantized=copy.deepcopy(self.quantized),
        )

    def set_input_normalization(self, mean: np.ndarray, std: np.ndarray) -> None:
        f = self.input_shape[3]
        mean, std = np.asarray(mean, dtype=np.float64), np.asarray(std, dtype=np.float64)
        if mean.shape != (f,) or std.shape != (f,):
            raise ShapeError(f"Input normalization must have length {f}")
        if np.any(std <= 0):
            raise ValueError("Input normalization std must be positive")
        self.buffers[INPUT_MEAN] = mean
        self.buffers[INPUT_STD] = std


def expected_registry(layers: Sequence[BaseLayer]) -> Dict[str, Tuple[int, ...]]:
    """Every learnable tensor name -> shape; raises on duplicates."""
    names: Dict[str, Tuple[int, ...]] = {}
    for layer in layers:
        for suffix, shape in layer.param_shapes().items():
            name = layer.name(suffix)
            if name in names:
                raise ConfigError(f"Duplicate parameter name {name}")
            names[name] = tuple(shape)
    return names


def build_model(config: ModelConfig, seed: int) -> Model:
    """
    Build and initialize a model. Each layer draws from its own child stream
    of the seed, so initialization is deterministic per layer.
    """
    validate_config(config)
    layers = build_layers(config)
    expected_registry(layers)

    rng = Rng(seed)
    params: Dict[str, np.ndarray] = {}
    buffers: Dict[str, np.ndarray] = {
        INPUT_MEAN: np.zeros(config.input_shape[3]),
        INPUT_STD: np.ones(config.input_shape[3]),
    }
    for layer in layers:
        params.update(layer.init_params(rng.spawn(layer.index)))
        buffers.update(layer.init_buffers())

    model = Model(config=config, layers=layers, params=params, buffers=buffers)
    logger.info(
        f"[Model] Built {config.name}: {len(layers)} layers, {model.param_count} params (seed={seed})"
    )
    return model


# =============================================================================
# EXECUTION
# =============================================================================

def _check_model_input(m: Model, x: np.ndarray) -> None:
    if x.ndim != 4 or tuple(x.shape[1:]) != m.input_shape[1:]:
        raise ShapeError(
            f"Input {x.shape} does not match model input (N, {', '.join(str(d) for d in m.input_shape[1:])})"
        )


def normalize_input(m: Model, x: np.ndarray) -> np.ndarray:
    return (x - m.buffers[INPUT_MEAN]) / m.buffers[INPUT_STD]


def model_forward(m: Model, x, mode: Mode = Mode.INFER,
                  precision: Precision = Precision.FLOAT64) -> Tuple[np.ndarray, Optional[List[LayerCache]]]:
    """
    Run the whole network.

    Args:
        m: Built model
        x: Batch (N, C, T, F)
        mode: TRAIN keeps caches and updates BN running stats; INFER never mutates m
        precision: FLOAT32 selects the 32-bit inference path

    Returns:
        (probs (N, n_classes), caches or None in INFER mode)
    """
    x = as_array(x)
    _check_model_input(m, x)

    dtype = precision.dtype
    h = normalize_input(m, x).astype(dtype)
    params = m.params
    if precision is not Precision.FLOAT64:
        params = {k: v.astype(dtype) for k, v in m.params.items()}

    caches: List[LayerCache] = []
    for layer in m.layers:
        h, cache = layer.forward(h, params, m.buffers, mode)
        if mode is Mode.TRAIN:
            caches.append(cache)

    probs = h.reshape(h.shape[0], m.n_classes)
    return probs, (caches if mode is Mode.TRAIN else None)


def model_loss(probs: np.ndarray, labels: Sequence[int]) -> float:
    """Mean cross-entropy over the batch."""
    return mean_cross_entropy(probs, labels)


def model_backward(m: Model, caches: Optional[List[LayerCache]], probs: np.ndarray,
                   labels: Sequence[int]) -> Grads:
    """
    Gradients of model_loss(probs, labels) for every registered parameter.

    The softmax and cross-entropy gradients are combined into
    (probs - onehot) / N at the logits.
    """
    if caches is None or len(caches) != len(m.layers):
        raise CacheError("model_backward needs the caches of a TRAIN-mode forward pass")

    n = probs.shape[0]
    grad = softmax_cross_entropy_backward(probs, labels).reshape(n, m.n_classes, 1, 1)

    grads: Grads = {}
    for layer, cache in zip(reversed(m.layers[:-1]), reversed(caches[:-1])):
        grad, layer_grads = layer.backward(cache, grad, m.params)
        grads.update(layer_grads)

    missing = set(m.params) - set(grads)
    if missing:
        raise CacheError(f"No gradient produced for {sorted(missing)}")
    return grads


def predict(m: Model, x, batch_size: int = 256,
            precision: Precision = Precision.FLOAT64) -> np.ndarray:
    """INFER-mode probabilities for a large array, in batches."""
    x = as_array(x)
    if x.shape[0] == 0:
        return np.zeros((0, m.n_classes))
    chunks = [
        model_forward(m, x[i:i + batch_size], Mode.INFER, precision)[0]
        for i in range(0, x.shape[0], batch_size)
    ]
    return np.concatenate(chunks, axis=0)
