"""
Shared fixtures. Puts src/ on the import path the way main.py does.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from autograd.tensor import set_debug
from models.training import TrainConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def debug_mode():
    set_debug(True)
    yield
    set_debug(False)


@pytest.fixture
def tiny_config(tmp_path) -> TrainConfig:
    """32x32 scenes and narrow networks: a few training steps run in seconds."""
    return TrainConfig().with_overrides({
        'run.name': 'tiny',
        'run.output_dir': str(tmp_path),
        'data.height': 32,
        'data.width': 32,
        'data.prefetch': 0,
        'model.base_width': 4,
        'model.d1_channels': [8, 8, 16, 16, 1],
        'model.d2_channels': [6, 6, 12, 12, 1],
        'optim.g_lr': 0.01,
        'optim.g_lr_end': 0.0001,
        'selftrain.class_weight_samples': 8,
        'train.iterations': 4,
        'train.eval_interval': 2,
        'train.checkpoint_interval': 2,
        'eval.samples': 6,
        'eval.batch_size': 3,
        'eval.workers': 1,
        'logging.show_progress': False,
        'logging.log_interval': 1,
    }).validate()
