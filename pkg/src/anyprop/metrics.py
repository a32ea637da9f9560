"""Segmentation metrics: confusion matrix and mean IoU.

Follows the global-confusion convention: counts accumulate over all evaluated
pixels, per-class IoU is TP / (TP + FP + FN), and classes whose union is zero
(never predicted and never present) are excluded from the mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from anyprop.scene import LabelMap


@dataclass(frozen=True)
class ConfusionMatrix:
    """K x K pixel counts; rows are ground truth, columns are predictions."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64, copy=True)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError(f"confusion matrix must be square, got {counts.shape}")
        if (counts < 0).any():
            raise ValueError("confusion counts must be non-negative")
        object.__setattr__(self, "counts", counts)
        counts.setflags(write=False)

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    def total(self) -> int:
        return int(self.counts.sum())

    def iou(self) -> np.ndarray:
        """Per-class IoU; NaN marks classes with zero union."""
        tp = np.diag(self.counts).astype(np.float64)
        fp = self.counts.sum(axis=0).astype(np.float64) - tp
        fn = self.counts.sum(axis=1).astype(np.float64) - tp
        union = tp + fp + fn
        with np.errstate(invalid="ignore", divide="ignore"):
            out = tp / union
        out[union == 0.0] = np.nan
        return out

    def mean_iou(self) -> float:
        return float(np.nanmean(self.iou()))


def confusion(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> ConfusionMatrix:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match gt shape {gt.shape}")
    if pred.min(initial=0) < 0 or pred.max(initial=0) >= num_classes:
        raise ValueError(f"predictions outside [0, {num_classes})")
    if gt.min(initial=0) < 0 or gt.max(initial=0) >= num_classes:
        raise ValueError(f"ground truth outside [0, {num_classes})")
    idx = gt.astype(np.int64).ravel() * num_classes + pred.astype(np.int64).ravel()
    counts = np.bincount(idx, minlength=num_classes * num_classes)
    return ConfusionMatrix(counts.reshape(num_classes, num_classes))


def miou(pred: LabelMap | np.ndarray, gt: LabelMap | np.ndarray,
         num_classes: int | None = None):
    """Confusion matrix, per-class IoU (NaN = zero union), and their mean."""
    if isinstance(pred, LabelMap) and isinstance(gt, LabelMap):
        if pred.num_classes != gt.num_classes:
            raise ValueError(
                f"class counts differ: {pred.num_classes} vs {gt.num_classes}"
            )
    if isinstance(pred, LabelMap):
        if num_classes is None:
            num_classes = pred.num_classes
        pred = pred.labels
    if isinstance(gt, LabelMap):
        if num_classes is None:
            num_classes = gt.num_classes
        gt = gt.labels
    if num_classes is None:
        raise ValueError("num_classes is required for bare arrays")
    cm = confusion(pred, gt, num_classes)
    per_class = cm.iou()
    return cm, per_class, float(np.nanmean(per_class))
