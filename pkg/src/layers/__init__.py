"""TinySpeech Layer Primitives"""

from .base import BaseLayer, LayerCache, Mode, Grads, backward
from .activations import relu, relu_backward, sigmoid, sigmoid_backward
from .conv import (
    ConvParams,
    ConvBlock,
    conv2d,
    conv2d_backward,
    conv_output_size,
    conv_output_shape,
    conv_mult_adds,
)
from .normalization import BatchNormParams, BatchNormCache, batchnorm, batchnorm_backward
from .pooling import (
    PoolRecord,
    GlobalAvgPool,
    maxpool2d,
    maxpool2d_backward,
    pooled_size,
    unpool_replicate,
    unpool_replicate_backward,
    unpool_switch,
    unpool_switch_backward,
    global_avg_pool,
    global_avg_pool_backward,
)
from .dense import Dense, dense, dense_backward
from .softmax import (
    Softmax,
    softmax,
    softmax_backward,
    cross_entropy,
    mean_cross_entropy,
    softmax_cross_entropy_backward,
)

# Layer classes in template order (the attention condenser layer lives in
# src.attention_condenser and is registered by the model graph)
ALL_LAYERS = [
    ConvBlock,       # input conv / second conv
    GlobalAvgPool,
    Dense,
    Softmax,
]

__all__ = [
    'BaseLayer',
    'LayerCache',
    'Mode',
    'Grads',
    'backward',
    'relu',
    'relu_backward',
    'sigmoid',
    'sigmoid_backward',
    'ConvParams',
    'ConvBlock',
    'conv2d',
    'conv2d_backward',
    'conv_output_size',
    'conv_output_shape',
    'conv_mult_adds',
    'BatchNormParams',
    'BatchNormCache',
    'batchnorm',
    'batchnorm_backward',
    'PoolRecord',
    'GlobalAvgPool',
    'maxpool2d',
    'maxpool2d_backward',
    'pooled_size',
    'unpool_replicate',
    'unpool_replicate_backward',
    'unpool_switch',
    'unpool_switch_backward',
    'global_avg_pool',
    'global_avg_pool_backward',
    'Dense',
    'dense',
    'dense_backward',
    'Softmax',
    'softmax',
    'softmax_backward',
    'cross_entropy',
    'mean_cross_entropy',
    'softmax_cross_entropy_backward',
    'ALL_LAYERS',
]
