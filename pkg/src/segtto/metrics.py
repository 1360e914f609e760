"""Confusion accumulation and intersection-over-union reporting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MetricError
from .types import IGNORE_LABEL, SegmentationMask


@dataclass
class ConfusionAccumulator:
    """n x n integer counts; rows are ground truth, columns predictions."""

    n_categories: int
    matrix: np.ndarray = field(default=None)
    ignored: int = 0

    def __post_init__(self):
        if self.n_categories < 1:
            raise MetricError(f"need at least one category, got {self.n_categories}")
        if self.matrix is None:
            self.matrix = np.zeros((self.n_categories, self.n_categories), dtype=np.int64)

    def add(self, pred: SegmentationMask, gt: np.ndarray) -> None:
        """Accumulate one image. Pixels whose ground truth is IGNORE_LABEL are
        counted as ignored and contribute nothing else."""
        gt = np.asarray(gt)
        if pred.labels.shape != gt.shape:
            raise MetricError(
                f"prediction shape {pred.labels.shape} does not match ground truth {gt.shape}"
            )
        keep = gt != IGNORE_LABEL
        self.ignored += int((~keep).sum())
        gt_kept = gt[keep].astype(np.int64)
        pred_kept = pred.labels[keep].astype(np.int64)
        n = self.n_categories
        if gt_kept.size and (gt_kept.min() < 0 or gt_kept.max() >= n):
            raise MetricError("ground truth labels outside the vocabulary range")
        if pred_kept.size and (pred_kept.min() < 0 or pred_kept.max() >= n):
            raise MetricError("predicted labels outside the vocabulary range")
        binned = np.bincount(n * gt_kept + pred_kept, minlength=n * n)
        self.matrix += binned.reshape(n, n)

    def merge(self, other: "ConfusionAccumulator") -> None:
        if other.n_categories != self.n_categories:
            raise MetricError("cannot merge accumulators of different sizes")
        self.matrix += other.matrix
        self.ignored += other.ignored


def accumulate(conf: ConfusionAccumulator, pred: SegmentationMask, gt: np.ndarray) -> ConfusionAccumulator:
    conf.add(pred, gt)
    return conf


def compute_miou(conf: ConfusionAccumulator) -> tuple[list[float | None], float]:
    """Per-class IoU and its mean over classes with nonzero union.

    Classes absent from both ground truth and predictions report None and are
    excluded from the mean.
    """
    matrix = conf.matrix
    if matrix.sum() == 0:
        raise MetricError("confusion matrix is empty; nothing was accumulated")
    diag = np.diag(matrix).astype(np.float64)
    union = matrix.sum(axis=0) + matrix.sum(axis=1) - np.diag(matrix)
    per_class: list[float | None] = []
    valid = []
    for c in range(conf.n_categories):
        if union[c] == 0:
            per_class.append(None)
        else:
            iou = float(diag[c] / union[c])
            per_class.append(iou)
            valid.append(iou)
    if not valid:
        raise MetricError("no class has a nonzero union")
    return per_class, float(np.mean(valid))


@dataclass
class Report:
    per_class_iou: list[float | None]
    miou: float | None
    image_count: int
    skipped_count: int
    config_echo: str
    version: str

    def to_dict(self) -> dict:
        return {
            "per_class_iou": self.per_class_iou,
            "miou": self.miou,
            "image_count": self.image_count,
            "skipped_count": self.skipped_count,
            "config_echo": self.config_echo,
            "version": self.version,
        }

    def to_text(self, names: list[str] | None = None) -> str:
        lines = [f"images: {self.image_count}  skipped: {self.skipped_count}"]
        for c, iou in enumerate(self.per_class_iou):
            name = names[c] if names else f"class {c}"
            shown = "n/a" if iou is None else f"{iou:.4f}"
            lines.append(f"  {name}: {shown}")
        if self.miou is not None:
            lines.append(f"mIoU: {self.miou:.4f}")
        return "\n".join(lines)
