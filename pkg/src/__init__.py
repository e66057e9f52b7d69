"""
TinySpeech Engine

Keyword spotting with attention condensers: a small self-contained engine
covering the MFCC frontend, network execution with exact gradients, SGD
training, 8-bit weight quantization and complexity accounting against the
tiny-edge deployment constraints.

Core components:
- tensor: Rank-4 tensors and the seeded generator
- layers/: Layer primitives (conv block, pooling, dense, softmax) and their backward passes
- attention_condenser: Condense -> embed -> expand -> selective attention
- model_graph: JSON architecture configs, model building, forward/backward
- complexity: Params, mult-adds, model size and the constraint indicator
- quantizer: Per-tensor affine post-training quantization
- serialization: TSPN model files (CRC32-checked)
- frontend: MFCC stacks from 16 kHz audio
- dataset: Speech-Commands layout, speaker-hash splits, synthetic tone data
- trainer: Mini-batch SGD with momentum
"""

from .errors import (
    TinySpeechError,
    ConfigError,
    MicroOpsViolation,
    ShapeError,
    CacheError,
    ModelFormatError,
    VersionMismatchError,
    ChecksumError,
    WavFormatError,
    DatasetError,
    QuantizationError,
    TrainingError,
)
from .tensor import Tensor, Rng, Precision, tensor_new, tensor_mul, tensor_reshape
from .layers import ALL_LAYERS, Mode
from .attention_condenser import (
    AttentionCondenser,
    AttentionCondenserLayer,
    condenser_forward,
    condenser_backward,
    selective_attention,
)
from .model_graph import (
    ModelConfig,
    Model,
    LAYER_TYPES,
    load_config,
    parse_config,
    build_model,
    model_forward,
    model_backward,
    model_loss,
    predict,
)
from .complexity import (
    ComplexityReport,
    ConstraintSpec,
    ConstraintVerdict,
    analyze,
    check_constraints,
    count_params,
    count_mult_adds,
    model_size_kbits,
)
from .quantizer import QuantizedTensor, quantize_tensor, dequantize, quantize_model, stored_weight_bits
from .serialization import save_model, load_model, model_to_bytes, model_from_bytes
from .frontend import FrontendConfig, DEFAULT_FRONTEND, MfccStack, mfcc_stack, featurize_batch
from .dataset import (
    AudioClip,
    SampleManifest,
    DatasetSplits,
    parse_wav,
    scan_dataset,
    split_assign,
    synth_dataset,
    load_splits,
)
from .trainer import TrainConfig, TrainReport, SgdState, train, evaluate

__version__ = '1.0.0'



__all__ = [
    # Errors
    'TinySpeechError',
    'ConfigError',
    'MicroOpsViolation',
    'ShapeError',
    'CacheError',
    'ModelFormatError',
    'VersionMismatchError',
    'ChecksumError',
    'WavFormatError',
    'DatasetError',
    'QuantizationError',
    'TrainingError',
    # Tensor core
    'Tensor',
    'Rng',
    'Precision',
    'tensor_new',
    'tensor_mul',
    'tensor_reshape',
    # Layers
    'ALL_LAYERS',
    'Mode',
    'AttentionCondenser',
    'AttentionCondenserLayer',
    'condenser_forward',
    'condenser_backward',
    'selective_attention',
    # Model graph
    'ModelConfig',
    'Model',
    'LAYER_TYPES',
    'load_config',
    'parse_config',
    'build_model',
    'model_forward',
    'model_backward',
    'model_loss',
    'predict',
    # Complexity
    'ComplexityReport',
    'ConstraintSpec',
    'ConstraintVerdict',
    'analyze',
    'check_constraints',
    'count_params',
    'count_mult_adds',
    'model_size_kbits',
    # Quantization and model files
    'QuantizedTensor',
    'quantize_tensor',
    'dequantize',
    'quantize_model',
    'stored_weight_bits',
    'save_model',
    'load_model',
    'model_to_bytes',
    'model_from_bytes',
    # Frontend and data
    'FrontendConfig',
    'DEFAULT_FRONTEND',
    'MfccStack',
    'mfcc_stack',
    'featurize_batch',
    'AudioClip',
    'SampleManifest',
    'DatasetSplits',
    'parse_wav',
    'scan_dataset',
    'split_assign',
    'synth_dataset',
    'load_splits',
    # Training
    'TrainConfig',
    'TrainReport',
    'SgdState',
    'train',
    'evaluate',
]
