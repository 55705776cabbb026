"""
selftrain.py

Class-wise, time-varying confidence thresholds for pseudo-label selection.

At every step the D1 confidences of the current target batch are split
by predicted class, and each class's threshold becomes the f-th
nearest-rank percentile of its pixels. Pixels whose confidence strictly
exceeds the threshold of their predicted class form the self-training
mask. A class missing from a batch keeps its threshold, so rare-class
thresholds evolve as piecewise-constant functions of the step.
"""

import copy
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from autograd.tensor import ShapeError, Tensor
from adaptation.losses import one_hot

logger = logging.getLogger(__name__)

ADAPTIVE = "adaptive"
FIXED = "fixed"
NONE = "none"

FREQUENCY_FLOOR = 1e-6
WEIGHT_CAP = 10.0

TRACE_HEADER = ["step", "class_id", "class_name", "threshold", "running_mean"]


class ClassAbsentError(LookupError):
    """No pixel of the class was available to take a percentile from."""


@dataclass
class ThresholdState:
    """
    Per-class thresholds plus their full update history.

    Mode `adaptive` follows the batch percentiles, `fixed` pins every class
    at one value, `none` selects every pixel.
    """
    thresholds: List[float]
    last_update_step: List[int]
    f: float = 75.0
    min_pixels: int = 8
    mode: str = ADAPTIVE
    class_names: List[str] = field(default_factory=list)
    history: List[List[Tuple[int, float]]] = field(default_factory=list)
    # steps on which the class had at least min_pixels predicted pixels
    observed_steps: List[int] = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return len(self.thresholds)

    def mean_threshold(self) -> float:
        return float(np.mean(self.thresholds))

    def snapshot(self) -> "ThresholdState":
        return copy.deepcopy(self)

    def to_dict(self):
        return {
            'thresholds': list(self.thresholds),
            'last_update_step': list(self.last_update_step),
            'f': self.f,
            'min_pixels': self.min_pixels,
            'mode': self.mode,
            'class_names': list(self.class_names),
            'history': [[[int(s), float(v)] for s, v in h] for h in self.history],
            'observed_steps': list(self.observed_steps),
        }

    @classmethod
    def from_dict(cls, d) -> "ThresholdState":
        return cls(
            thresholds=[float(v) for v in d['thresholds']],
            last_update_step=[int(v) for v in d['last_update_step']],
            f=float(d['f']),
            min_pixels=int(d['min_pixels']),
            mode=d['mode'],
            class_names=list(d.get('class_names', [])),
            history=[[(int(s), float(v)) for s, v in h] for h in d.get('history', [])],
            observed_steps=[int(v) for v in d.get('observed_steps', [0] * len(d['thresholds']))],
        )


@dataclass
class ClassWeights:
    weights: np.ndarray
    source_frequencies: np.ndarray
    mode: str = "inverse"

    def to_dict(self):
        return {
            'weights': self.weights.tolist(),
            'source_frequencies': self.source_frequencies.tolist(),
            'mode': self.mode,
        }


@dataclass
class PseudoLabelPack:
    """One-hot argmax pseudo labels, the selection mask and per-class selected counts."""
    pseudo: np.ndarray          # N x C x H x W
    mask: np.ndarray            # N x H x W, 0.0 / 1.0
    counts: np.ndarray          # C
    labels: np.ndarray          # N x H x W argmax

    @property
    def masked_fraction(self) -> float:
        return float(self.mask.mean()) if self.mask.size else 0.0


def init_threshold_state(num_classes: int, f: float = 75.0, min_pixels: int = 8,
                         init_threshold: float = 1.0, mode: str = ADAPTIVE,
                         fixed_threshold: float = 0.2,
                         class_names: Optional[Sequence[str]] = None) -> ThresholdState:
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    if not 0.0 < f <= 100.0:
        raise ValueError(f"percentile f must lie in (0, 100], got {f}")
    if mode not in (ADAPTIVE, FIXED, NONE):
        raise ValueError(f"Unknown threshold mode: {mode}")

    start = {ADAPTIVE: init_threshold, FIXED: fixed_threshold, NONE: 0.0}[mode]
    if not 0.0 <= start <= 1.0:
        raise ValueError(f"initial threshold must lie in [0, 1], got {start}")
    names = list(class_names) if class_names is not None else [f"class_{c}" for c in range(num_classes)]
    if len(names) != num_classes:
        raise ValueError("class_names length must equal num_classes")
    return ThresholdState(
        thresholds=[float(start)] * num_classes,
        last_update_step=[-1] * num_classes,
        f=float(f),
        min_pixels=min_pixels,
        mode=mode,
        class_names=names,
        history=[[] for _ in range(num_classes)],
        observed_steps=[0] * num_classes,
    )


# ============================================================================
# Class weights
# ============================================================================

def class_weights_from_source(label_maps: Iterable[np.ndarray], num_classes: int,
                              mode: str = "inverse", ignore_index: int = 255) -> ClassWeights:
    """
    Per-class weights from source pixel frequencies, normalized to mean 1.

    `inverse` uses 1 / max(freq, 1e-6) capped at 10x the median, so absent
    classes get the capped maximum. `proportional` uses max(freq, 1e-6).
    """
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    counts = np.zeros(num_classes, dtype=np.int64)
    for labels in label_maps:
        labels = np.asarray(labels).ravel()
        labels = labels[labels != ignore_index]
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise ValueError(f"source labels outside [0, {num_classes})")
        counts += np.bincount(labels, minlength=num_classes)
    total = counts.sum()
    if total == 0:
        raise ValueError("source label maps contain no labelled pixel")

    freq = counts / total
    floored = np.maximum(freq, FREQUENCY_FLOOR)
    if mode == "inverse":
        raw = 1.0 / floored
        raw = np.minimum(raw, WEIGHT_CAP * np.median(raw))
    elif mode == "proportional":
        raw = floored
    else:
        raise ValueError(f"Unknown class weight mode: {mode}")
    return ClassWeights(weights=raw / raw.mean(), source_frequencies=freq, mode=mode)


# ============================================================================
# Thresholds
# ============================================================================

def percentile(values: Sequence[float], f: float) -> float:
    """
    Nearest-rank f-th percentile: sorted(values)[ceil(f/100 * n) - 1].

    Unlike np.percentile(method='inverted_cdf'), which returns rank k + 1
    when float rounding puts f/100 * n a hair above k, this returns rank k.
    """
    if not 0.0 < f <= 100.0:
        raise ValueError(f"percentile f must lie in (0, 100], got {f}")
    ordered = np.sort(np.asarray(values, dtype=np.float64).ravel())
    n = ordered.size
    if n == 0:
        raise ClassAbsentError("percentile of an empty set")
    # tolerance keeps exact products such as 75/100*4 on rank 3
    rank = math.ceil(f * n / 100.0 - 1e-12)
    return float(ordered[min(max(rank, 1), n) - 1])


def _as_array(x: Union[Tensor, np.ndarray]) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _confidences(d1_conf, shape: Tuple[int, ...]) -> np.ndarray:
    conf = _as_array(d1_conf)
    if conf.ndim == 4:
        if conf.shape[1] != 1:
            raise ShapeError(f"D1 confidence must have one channel, got {conf.shape}")
        conf = conf[:, 0]
    if conf.shape != shape:
        raise ShapeError(f"D1 confidence {conf.shape} does not match labels {shape}")
    return conf


def update_thresholds(d1_conf, pred_labels: np.ndarray, state: ThresholdState,
                      step: int) -> ThresholdState:
    """
    Recompute each class's threshold from the current batch.

    Only classes with at least `min_pixels` predicted pixels change; they
    also count as observed in every mode.
    History gets one entry per class per call. Updates `state` in place
    and returns it.
    """
    pred_labels = np.asarray(pred_labels)
    conf = _confidences(d1_conf, pred_labels.shape)

    if not state.observed_steps:
        state.observed_steps = [0] * state.num_classes
    flat_labels = pred_labels.ravel()
    flat_conf = conf.ravel()
    for c in range(state.num_classes):
        selected = flat_conf[flat_labels == c]
        if selected.size < state.min_pixels:
            continue
        state.observed_steps[c] += 1
        if state.mode == ADAPTIVE:
            value = percentile(selected, state.f)
            state.thresholds[c] = float(min(max(value, 0.0), 1.0))
            state.last_update_step[c] = step

    for c in range(state.num_classes):
        state.history[c].append((step, state.thresholds[c]))
    return state


def build_mask(d1_conf, probs: Union[Tensor, np.ndarray], state: ThresholdState) -> PseudoLabelPack:
    """Select pixels whose confidence strictly exceeds their argmax class threshold."""
    probs = _as_array(probs)
    if probs.ndim != 4 or probs.shape[1] != state.num_classes:
        raise ShapeError(f"probs must be N x {state.num_classes} x H x W, got {probs.shape}")
    labels = probs.argmax(axis=1)
    conf = _confidences(d1_conf, labels.shape)

    if state.mode == NONE:
        selected = np.ones(labels.shape, dtype=bool)
    else:
        thresholds = np.asarray(state.thresholds, dtype=np.float64)
        selected = conf > thresholds[labels]

    counts = np.bincount(labels[selected], minlength=state.num_classes)
    return PseudoLabelPack(
        pseudo=one_hot(labels, state.num_classes),
        mask=selected.astype(np.float64),
        counts=counts,
        labels=labels,
    )


# ============================================================================
# Trace export
# ============================================================================

def threshold_trace(state: ThresholdState) -> List[Dict[str, object]]:
    """Rows (step, class, raw threshold, running time-average), ordered by step then class."""
    rows = []
    for c, history in enumerate(state.history):
        name = state.class_names[c] if c < len(state.class_names) else f"class_{c}"
        running = 0.0
        for k, (step, value) in enumerate(history, start=1):
            running += value
            rows.append({
                'step': step,
                'class_id': c,
                'class_name': name,
                'threshold': value,
                'running_mean': running / k,
            })
    rows.sort(key=lambda r: (r['step'], r['class_id']))
    return rows


def export_threshold_trace(state: ThresholdState, path: Union[str, Path]) -> Path:
    path = Path(path)
    rows = threshold_trace(state)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=TRACE_HEADER)
        writer.writeheader()
        writer.writerows(rows)
    logger.info(f"Threshold trace written: {path} ({len(rows)} rows)")
    return path


def summarize_thresholds(state: ThresholdState) -> List[Dict[str, object]]:
    """
    Per class: final value, time average, number of changes and the share
    of consecutive steps with no change.
    """
    summary = []
    for c, history in enumerate(state.history):
        values = np.array([v for _, v in history], dtype=np.float64)
        deltas = np.diff(values)
        summary.append({
            'class_id': c,
            'class_name': state.class_names[c] if c < len(state.class_names) else f"class_{c}",
            'final': state.thresholds[c],
            'time_average': float(values.mean()) if values.size else state.thresholds[c],
            'changes': int(np.count_nonzero(deltas)),
            'flat_fraction': float(np.mean(deltas == 0)) if deltas.size else 1.0,
            'observed_rate': (state.observed_steps[c] / len(history)
                              if history and c < len(state.observed_steps) else 0.0),
            'last_update_step': state.last_update_step[c],
        })
    return summary
