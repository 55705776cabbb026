"""
Dataclass records shared across the package.
Scene settings and batches, training configuration, and run reports.
"""

from .scene import SceneConfig, SegmentationBatch, CLASS_NAMES, FREQUENCY_TARGETS, SOURCE, TARGET, DOMAINS
from .training import (
    TrainConfig, LossWeights, ConfigError, THRESHOLD_MODES, CLASS_WEIGHT_MODES, SPLITS,
)
from .records import LossReport, RunRecordEntry, RunRecord, EvalReport, LOSS_TERMS, metrics_columns

__all__ = [
    'SceneConfig',
    'SegmentationBatch',
    'CLASS_NAMES',
    'FREQUENCY_TARGETS',
    'SOURCE',
    'TARGET',
    'DOMAINS',
    'TrainConfig',
    'LossWeights',
    'ConfigError',
    'THRESHOLD_MODES',
    'CLASS_WEIGHT_MODES',
    'SPLITS',
    'LossReport',
    'RunRecordEntry',
    'RunRecord',
    'EvalReport',
    'LOSS_TERMS',
    'metrics_columns',
]
