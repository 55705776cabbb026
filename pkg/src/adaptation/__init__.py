"""
Adversarial and self-training objectives for domain adaptation.
"""

from .losses import (
    EPS, one_hot, supervised_ce, d1_loss, g_adv1, d2_loss, g_adv2, self_training_loss, full_loss,
)
from .selftrain import (
    ThresholdState, ClassWeights, PseudoLabelPack, ClassAbsentError,
    init_threshold_state, class_weights_from_source, percentile, update_thresholds,
    build_mask, threshold_trace, export_threshold_trace, summarize_thresholds,
)

__all__ = [
    'EPS',
    'one_hot',
    'supervised_ce',
    'd1_loss',
    'g_adv1',
    'd2_loss',
    'g_adv2',
    'self_training_loss',
    'full_loss',
    'ThresholdState',
    'ClassWeights',
    'PseudoLabelPack',
    'ClassAbsentError',
    'init_threshold_state',
    'class_weights_from_source',
    'percentile',
    'update_thresholds',
    'build_mask',
    'threshold_trace',
    'export_threshold_trace',
    'summarize_thresholds',
]
