from .functional import (
    ConvSpec,
    conv2d_backward,
    conv2d_forward,
    cross_entropy,
    dense_backward,
    dense_forward,
    maxpool2d,
    maxpool2d_backward,
    relu,
    softmax,
    softmax_cross_entropy,
    steps_to_global,
)
from .layers import Conv2d, ConvTranspose2d, Dense, Flatten, MaxPool2d, ReLU, Reshape, Sequential
from .optim import SGD, Adam, adam_step, sgd_step
from .tensor import Parameter, RngState, resolve_dtype, zero_grads

__all__ = [
    "ConvSpec", "conv2d_forward", "conv2d_backward", "maxpool2d", "maxpool2d_backward",
    "dense_forward", "dense_backward", "relu", "softmax", "cross_entropy", "softmax_cross_entropy",
    "steps_to_global", "Conv2d", "ConvTranspose2d", "Dense", "Flatten", "MaxPool2d", "ReLU",
    "Reshape", "Sequential", "SGD", "Adam", "adam_step", "sgd_step", "Parameter", "RngState",
    "resolve_dtype", "zero_grads",
]
