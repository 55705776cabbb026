"""
Generator and discriminator networks plus UDAS checkpoints.
"""

from .network import (
    Network, LayerSpec, DiscriminatorSpec, D1_CHANNELS, D2_CHANNELS,
    build_generator, build_discriminator, forward, predict, predict_probabilities,
)
from .checkpoint import save_checkpoint, load_checkpoint, read_checkpoint, CheckpointError

__all__ = [
    'Network',
    'LayerSpec',
    'DiscriminatorSpec',
    'D1_CHANNELS',
    'D2_CHANNELS',
    'build_generator',
    'build_discriminator',
    'forward',
    'predict',
    'predict_probabilities',
    'save_checkpoint',
    'load_checkpoint',
    'read_checkpoint',
    'CheckpointError',
]
