"""
metrics.py

Confusion matrix, per-class IoU and mIoU for segmentation evaluation.
Rows are ground truth, columns are predictions.
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)


@dataclass
class ConfusionMatrix:
    num_classes: int
    ignore_index: int = 255
    counts: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.counts is None:
            self.counts = np.zeros((self.num_classes, self.num_classes), dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accumulate(self, pred: np.ndarray, gt: np.ndarray) -> "ConfusionMatrix":
        """Tally one batch; ignore-index ground-truth pixels are skipped."""
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
        valid = gt != self.ignore_index
        gt, pred = gt[valid].astype(np.int64), pred[valid].astype(np.int64)
        if gt.size == 0:
            return self
        c = self.num_classes
        if gt.min() < 0 or gt.max() >= c or pred.min() < 0 or pred.max() >= c:
            raise ValueError(f"labels outside [0, {c})")
        self.counts += np.bincount(c * gt + pred, minlength=c * c).reshape(c, c)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ValueError("cannot merge confusion matrices of different size")
        return ConfusionMatrix(self.num_classes, self.ignore_index, self.counts + other.counts)

    def iou_per_class(self) -> np.ndarray:
        """diag / (row + col - diag); NaN where the class never occurs."""
        diag = np.diag(self.counts).astype(np.float64)
        union = self.counts.sum(axis=1) + self.counts.sum(axis=0) - diag
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(union > 0, diag / np.where(union > 0, union, 1), np.nan)

    def miou(self, class_subset: Optional[Sequence[int]] = None) -> float:
        """Mean IoU over present classes (optionally a subset); NaN if none is present."""
        iou = self.iou_per_class()
        if class_subset is not None:
            iou = iou[list(class_subset)]
        present = iou[~np.isnan(iou)]
        return float(present.mean()) if present.size else float("nan")

    def pixel_accuracy(self) -> float:
        total = self.total
        return float(np.trace(self.counts) / total) if total else float("nan")

    def write_report(self, path: Union[str, Path], class_names: Sequence[str],
                     class_subset: Optional[Sequence[int]] = None) -> Path:
        """CSV with one row per class and a final `mean` row; absent classes are left blank."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        iou = self.iou_per_class()
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            writer.writerow(["class_id", "class_name", "iou"])
            for c, name in enumerate(class_names):
                writer.writerow([c, name, "" if np.isnan(iou[c]) else repr(float(iou[c]))])
            mean = self.miou(class_subset)
            writer.writerow(["", "mean", "" if np.isnan(mean) else repr(mean)])
        logger.info(f"Evaluation report written: {path}")
        return path


def accumulate(cm: ConfusionMatrix, pred: np.ndarray, gt: np.ndarray) -> ConfusionMatrix:
    return cm.accumulate(pred, gt)


def iou_per_class(cm: ConfusionMatrix) -> np.ndarray:
    return cm.iou_per_class()


def miou(cm: ConfusionMatrix, class_subset: Optional[Sequence[int]] = None) -> float:
    return cm.miou(class_subset)


def print_report(class_names: Sequence[str], iou: Sequence[float], mean: float, title: str = "EVALUATION"):
    print("\n" + "=" * 70)
    print(title)
    print("=" * 70)
    for name, value in zip(class_names, iou):
        shown = "-" if value is None or np.isnan(value) else f"{value * 100:6.2f}"
        print(f"  {name:<20} {shown}")
    print("-" * 70)
    print(f"  {'mIoU':<20} {mean * 100:6.2f}")
    print("=" * 70 + "\n")
