# metrics.py
"""
Segmentation evaluation: accumulated confusion matrix and per-class IoU
"""

from typing import Tuple

import numpy as np

from ..ot_assign.errors import EvaluationError, ShapeError
from ..ot_assign.pixel_loss import IGNORE_INDEX


class ConfusionMatrix:
    """matrix[gt, pred] pixel counts accumulated over batches; ignore labels skipped."""

    def __init__(self, num_classes: int, ignore_value: int = IGNORE_INDEX):
        self.num_classes = num_classes
        self.ignore_value = ignore_value
        self.matrix = np.zeros((num_classes, num_classes), dtype=np.int64)

    def add(self, preds: np.ndarray, labels: np.ndarray):
        preds = np.asarray(preds, dtype=np.int64)
        labels = np.asarray(labels, dtype=np.int64)
        if preds.shape != labels.shape:
            raise ShapeError(f"predictions {preds.shape} and labels {labels.shape} differ in shape")
        keep = (labels != self.ignore_value) & (labels >= 0) & (labels < self.num_classes)
        kept = preds[keep]
        if kept.size and (kept.min() < 0 or kept.max() >= self.num_classes):
            raise ValueError(f"predicted classes must lie in [0, {self.num_classes}), found [{kept.min()}, {kept.max()}]")
        index = self.num_classes * labels[keep] + kept
        self.matrix += np.bincount(index, minlength=self.num_classes ** 2).reshape(self.num_classes, self.num_classes)

    @property
    def total(self) -> int:
        return int(self.matrix.sum())

    def iou(self) -> Tuple[np.ndarray, float]:
        """
        Per-class IoU = TP / (TP + FP + FN) and its mean.

        Classes absent from both predictions and labels get NaN and are left
        out of the mean.

        Raises:
            EvaluationError: If no labeled pixel has been accumulated
        """
        if self.total == 0:
            raise EvaluationError("evaluation set is empty")
        tp = np.diag(self.matrix).astype(np.float64)
        union = self.matrix.sum(axis=0) + self.matrix.sum(axis=1) - tp
        with np.errstate(invalid="ignore", divide="ignore"):
            per_class = np.where(union > 0, tp / union, np.nan)
        return per_class, float(np.nanmean(per_class))

    def pixel_accuracy(self) -> float:
        return float(np.trace(self.matrix) / max(self.total, 1))
