"""
Training loop, evaluation and the ablation matrix.
"""

from .trainer import (
    AdaptationModels, TrainState, NonFiniteLossError, Trainer,
    build_models, init_train_state, train_step, evaluate_generator, evaluate, run_training,
)
from .ablation import ROWS, AblationRow, ablation_suite, row_config, paired_gap, write_ablation_table

__all__ = [
    'AdaptationModels',
    'TrainState',
    'NonFiniteLossError',
    'Trainer',
    'build_models',
    'init_train_state',
    'train_step',
    'evaluate_generator',
    'evaluate',
    'run_training',
    'ROWS',
    'AblationRow',
    'ablation_suite',
    'row_config',
    'paired_gap',
    'write_ablation_table',
]
