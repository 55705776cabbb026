"""
losses.py

Generator and discriminator objectives.

All sums are pixel means so loss magnitudes do not depend on image size.
Every log is floored with `eps` (default 1e-10). Discriminator outputs are
probabilities: D1 scores "looks like a ground-truth map", D2 scores
"came from a source image".
"""

import logging
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from autograd.tensor import ShapeError, Tensor, log
from models.records import LossReport
from models.training import LossWeights

logger = logging.getLogger(__name__)

EPS = 1e-10

Maps = Union[Tensor, Sequence[Tensor]]


def one_hot(labels: np.ndarray, num_classes: int, ignore_index: Optional[int] = None) -> np.ndarray:
    """N x H x W integer labels -> N x C x H x W float one-hot; ignored pixels are all zero."""
    labels = np.asarray(labels)
    if labels.ndim != 3:
        raise ShapeError(f"labels must be N x H x W, got {labels.shape}")
    valid = np.ones(labels.shape, dtype=bool) if ignore_index is None else labels != ignore_index
    if np.any(valid & ((labels < 0) | (labels >= num_classes))):
        raise ValueError(f"labels outside [0, {num_classes}) found")
    encoded = np.zeros((labels.shape[0], num_classes) + labels.shape[1:])
    n, h, w = np.nonzero(valid)
    encoded[n, labels[n, h, w], h, w] = 1.0
    return encoded


def _zero(probs: Tensor) -> Tensor:
    """Scalar 0 that stays on the graph with zero gradient."""
    return (probs * 0.0).sum()


def _pixel_mean(maps: Maps, fn) -> Tensor:
    """Mean of fn(map) over every pixel of one map or a sequence of maps."""
    maps = [maps] if isinstance(maps, Tensor) else list(maps)
    if not maps:
        raise ShapeError("at least one map is required")
    total = None
    for m in maps:
        s = fn(m).sum()
        total = s if total is None else total + s
    return total / float(sum(m.size for m in maps))


# ============================================================================
# Supervised
# ============================================================================

def supervised_ce(probs: Tensor, labels: np.ndarray, ignore_index: int = 255,
                  eps: float = EPS) -> Tensor:
    """Mean of -log(p[label] + eps) over the non-ignored pixels."""
    if probs.ndim != 4:
        raise ShapeError(f"probs must be N x C x H x W, got {probs.shape}")
    labels = np.asarray(labels)
    n, c, h, w = probs.shape
    if labels.shape != (n, h, w):
        raise ShapeError(f"labels {labels.shape} do not match probs {probs.shape}")

    target = one_hot(labels, c, ignore_index)
    count = int(target.sum())
    if count == 0:
        return _zero(probs)
    return -(log(probs, eps) * target).sum() / float(count)


# ============================================================================
# Adversarial
# ============================================================================

def d1_loss(d1_on_generated: Maps, d1_on_gt: Tensor, eps: float = EPS) -> Tensor:
    """
    D1 objective: generated maps are class 0, one-hot ground truth class 1.

    `d1_on_generated` may be a sequence (source and target maps) whose
    pixels are pooled into a single mean.
    """
    fake = _pixel_mean(d1_on_generated, lambda m: -log(1.0 - m, eps))
    real = _pixel_mean(d1_on_gt, lambda m: -log(m, eps))
    return fake + real


def g_adv1(d1_on_generated: Tensor, eps: float = EPS) -> Tensor:
    """Generator term pushing its maps to be scored as ground truth by D1."""
    return _pixel_mean(d1_on_generated, lambda m: -log(m, eps))


def d2_loss(d2_on_target: Tensor, d2_on_source: Tensor, eps: float = EPS) -> Tensor:
    """D2 objective: target-image maps are class 0, source-image maps class 1."""
    target = _pixel_mean(d2_on_target, lambda m: -log(1.0 - m, eps))
    source = _pixel_mean(d2_on_source, lambda m: -log(m, eps))
    return target + source


def g_adv2(d2_on_target: Tensor, eps: float = EPS) -> Tensor:
    """Generator term pushing target-image maps toward the source class."""
    return _pixel_mean(d2_on_target, lambda m: -log(m, eps))


# ============================================================================
# Self-training
# ============================================================================

def self_training_loss(probs: Tensor, pseudo: np.ndarray, mask: np.ndarray,
                       class_weights: Sequence[float], eps: float = EPS) -> Tensor:
    """
    Class-weighted cross-entropy against pseudo labels on the masked pixels.

    pseudo (N x C x H x W), mask (N x H x W) and the weights are constants.
    Normalized by the number of masked pixels; an empty mask gives 0.
    """
    if probs.ndim != 4:
        raise ShapeError(f"probs must be N x C x H x W, got {probs.shape}")
    n, c, h, w = probs.shape
    weights = np.asarray(class_weights, dtype=np.float64)
    if weights.shape != (c,):
        raise ValueError(f"class_weights has {weights.size} entries, expected {c}")
    pseudo = pseudo.data if isinstance(pseudo, Tensor) else np.asarray(pseudo, dtype=np.float64)
    if pseudo.shape != probs.shape:
        raise ShapeError(f"pseudo labels {pseudo.shape} do not match probs {probs.shape}")
    mask = np.asarray(mask, dtype=np.float64).reshape(n, h, w)

    count = float(mask.sum())
    if count == 0.0:
        return _zero(probs)
    coefficient = mask[:, None] * weights[None, :, None, None] * pseudo
    return -(log(probs, eps) * coefficient).sum() / count


# ============================================================================
# Weighted total
# ============================================================================

Term = Optional[Union[Tensor, float]]


def _value(term: Term) -> float:
    if term is None:
        return 0.0
    return term.item() if isinstance(term, Tensor) else float(term)


def full_loss(g0: Tensor, g1_s: Term = None, g1_t: Term = None, g2_t: Term = None,
              g3: Term = None, weights: Optional[LossWeights] = None,
              d1: float = 0.0, d2: float = 0.0) -> Tuple[Tensor, LossReport]:
    """
    total = g0 + w1_s*g1_s + w1_t*g1_t + w2_t*g2_t + w3*g3

    A term passed as None is disabled: reported as 0 and left out of the
    graph. Returns the differentiable total and the scalar report.
    """
    weights = weights or LossWeights()
    total = g0 if isinstance(g0, Tensor) else Tensor(g0)
    for term, weight in ((g1_s, weights.w1_s), (g1_t, weights.w1_t),
                         (g2_t, weights.w2_t), (g3, weights.w3)):
        if term is not None:
            total = total + term * weight

    report = LossReport(
        g0=_value(g0), g1_s=_value(g1_s), g1_t=_value(g1_t), g2_t=_value(g2_t),
        g3=_value(g3), d1=float(d1), d2=float(d2),
    )
    report.total = report.weighted_total(weights)
    return total, report
