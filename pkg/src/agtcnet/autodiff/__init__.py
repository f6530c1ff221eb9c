from .ops import (
    BN_EPSILON,
    BN_MOMENTUM,
    SELU_ALPHA,
    SELU_LAMBDA,
    BatchNormState,
    avg_pool,
    batch_norm,
    conv2d,
    depthwise_conv2d,
    dropout,
    linear,
    multi_head_attention,
    positional_encoding,
    prelu,
    scaled_add,
    selu,
    separable_conv2d,
    softmax,
)
from .params import (
    LayerParam,
    MaxNorm,
    MinMax,
    RngStream,
    apply_constraints,
    glorot_uniform,
    kernel_fans,
)
from .tensor import Tensor, add, as_tensor, clip, concat, exp, log, matmul, mul, reshape, transpose

__all__ = [
    "BN_EPSILON",
    "BN_MOMENTUM",
    "SELU_ALPHA",
    "SELU_LAMBDA",
    "BatchNormState",
    "LayerParam",
    "MaxNorm",
    "MinMax",
    "RngStream",
    "Tensor",
    "add",
    "apply_constraints",
    "as_tensor",
    "avg_pool",
    "batch_norm",
    "clip",
    "concat",
    "conv2d",
    "depthwise_conv2d",
    "dropout",
    "exp",
    "glorot_uniform",
    "kernel_fans",
    "linear",
    "log",
    "matmul",
    "mul",
    "multi_head_attention",
    "positional_encoding",
    "prelu",
    "reshape",
    "scaled_add",
    "selu",
    "separable_conv2d",
    "softmax",
    "transpose",
]
