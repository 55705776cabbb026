"""
Reverse-mode automatic differentiation over float64 NumPy arrays.
"""

from .tensor import (
    Tensor, GradientTape, ShapeError, GradientError,
    backward, set_debug, debug_enabled, active_tape,
)
from .ops import conv2d, leaky_relu, sigmoid, softmax_channel, bilinear_upsample, concat_channels
from .optim import OptimizerState, poly_lr, sgd_momentum_step, adam_step, step_parameters, make_optimizer

__all__ = [
    'Tensor',
    'GradientTape',
    'ShapeError',
    'GradientError',
    'backward',
    'set_debug',
    'debug_enabled',
    'active_tape',
    'conv2d',
    'leaky_relu',
    'sigmoid',
    'softmax_channel',
    'bilinear_upsample',
    'concat_channels',
    'OptimizerState',
    'poly_lr',
    'sgd_momentum_step',
    'adam_step',
    'step_parameters',
    'make_optimizer',
]
