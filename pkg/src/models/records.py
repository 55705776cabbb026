import math
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional

LOSS_TERMS = ("g0", "g1_s", "g1_t", "g2_t", "g3", "d1", "d2")


def json_number(value: Optional[float]) -> Optional[float]:
    """None for NaN, which JSON cannot carry."""
    if value is None or math.isnan(value):
        return None
    return float(value)


@dataclass
class LossReport:
    """
    Scalar value of every loss term plus the weighted generator total.

    Disabled terms are stored as 0.0 and contribute nothing to the total.
    """
    g0: float = 0.0
    g1_s: float = 0.0
    g1_t: float = 0.0
    g2_t: float = 0.0
    g3: float = 0.0
    d1: float = 0.0
    d2: float = 0.0
    total: float = 0.0

    def weighted_total(self, weights) -> float:
        return (self.g0 + weights.w1_s * self.g1_s + weights.w1_t * self.g1_t
                + weights.w2_t * self.g2_t + weights.w3 * self.g3)

    def to_dict(self):
        return asdict(self)


@dataclass
class RunRecordEntry:
    """One training iteration as written to metrics.csv."""
    iteration: int
    losses: LossReport
    lr_g: float
    lr_d1: float
    lr_d2: float
    masked_fraction: float
    thresholds: List[float]
    eval_miou: Optional[float] = None
    seconds: float = 0.0

    def to_row(self, class_names) -> Dict[str, object]:
        row: Dict[str, object] = {'iteration': self.iteration}
        row.update(self.losses.to_dict())
        row.update({
            'lr_g': self.lr_g,
            'lr_d1': self.lr_d1,
            'lr_d2': self.lr_d2,
            'masked_fraction': self.masked_fraction,
        })
        for name, value in zip(class_names, self.thresholds):
            row[f"thr_{name}"] = value
        row['eval_miou'] = "" if self.eval_miou is None else self.eval_miou
        return row

    def to_dict(self):
        d = asdict(self)
        d['losses'] = self.losses.to_dict()
        return d


def metrics_columns(class_names) -> List[str]:
    return (["iteration", *LOSS_TERMS, "total", "lr_g", "lr_d1", "lr_d2", "masked_fraction"]
            + [f"thr_{name}" for name in class_names] + ["eval_miou"])


@dataclass
class EvalReport:
    """Per-class IoU and mIoU for one split."""
    split: str
    samples: int
    class_names: List[str]
    iou: List[float]
    miou: float
    pixel_accuracy: float
    iteration: Optional[int] = None

    def to_dict(self):
        d = asdict(self)
        # classes absent from the scenes have no IoU
        d['iou'] = [json_number(v) for v in self.iou]
        d['miou'] = json_number(self.miou)
        d['pixel_accuracy'] = json_number(self.pixel_accuracy)
        return d


@dataclass
class RunRecord:
    """Everything a finished run reports back to its caller."""
    run_dir: str
    config_hash: str
    entries: List[RunRecordEntry] = field(default_factory=list)
    evaluations: List[EvalReport] = field(default_factory=list)
    best_miou: Optional[float] = None
    best_iteration: Optional[int] = None
    final_checkpoint: Optional[str] = None
    seconds: float = 0.0

    @property
    def final_miou(self) -> Optional[float]:
        return self.evaluations[-1].miou if self.evaluations else None

    def to_dict(self):
        return {
            'run_dir': self.run_dir,
            'config_hash': self.config_hash,
            'iterations': len(self.entries),
            'evaluations': [e.to_dict() for e in self.evaluations],
            'best_miou': json_number(self.best_miou),
            'best_iteration': self.best_iteration,
            'final_miou': json_number(self.final_miou),
            'final_checkpoint': self.final_checkpoint,
            'seconds': self.seconds,
        }
