"""Segmentation quality metrics: IoU, pixel accuracy, and the IoU-Acc hybrid.

IoU-Acc falls back to whole-frame pixel accuracy when the ground-truth
foreground covers strictly less than ``area_threshold`` of the frame, so
near-empty frames still score models that correctly predict little area.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .imaging import BinaryMask


@dataclass(frozen=True)
class MetricReport:
    """One frame's IoU-Acc value plus which branch produced it."""

    iou_acc: float
    used_accuracy_branch: bool
    gt_area_fraction: float


def _check_dims(pred: BinaryMask, gt: BinaryMask) -> None:
    if (pred.width, pred.height) != (gt.width, gt.height):
        raise ValueError(
            f"mask dimensions differ: {pred.width}x{pred.height} vs {gt.width}x{gt.height}"
        )


def iou(pred: BinaryMask, gt: BinaryMask) -> float:
    """Intersection over union; 1.0 when both masks are empty."""
    _check_dims(pred, gt)
    inter = int(np.count_nonzero(pred.bits & gt.bits))
    union = int(np.count_nonzero(pred.bits | gt.bits))
    if union == 0:
        return 1.0
    return inter / union


def pixel_accuracy(pred: BinaryMask, gt: BinaryMask) -> float:
    """Fraction of pixels where the masks agree."""
    _check_dims(pred, gt)
    total = pred.bits.size
    return int(np.count_nonzero(pred.bits == gt.bits)) / total


def iou_acc(pred: BinaryMask, gt: BinaryMask, area_threshold: float = 0.05) -> MetricReport:
    """IoU, or pixel accuracy when gt area is strictly below the threshold."""
    _check_dims(pred, gt)
    if not 0.0 < area_threshold < 1.0:
        raise ValueError(f"area_threshold must be in (0, 1), got {area_threshold}")
    gt_fraction = int(np.count_nonzero(gt.bits)) / gt.bits.size
    use_accuracy = gt_fraction < area_threshold
    value = pixel_accuracy(pred, gt) if use_accuracy else iou(pred, gt)
    return MetricReport(iou_acc=value, used_accuracy_branch=use_accuracy, gt_area_fraction=gt_fraction)


def mean_metric(reports: Sequence[MetricReport] | Iterable[MetricReport]) -> float:
    """Arithmetic mean of per-frame IoU-Acc values."""
    values = [r.iou_acc for r in reports]
    if not values:
        raise ValueError("mean_metric needs at least one report")
    return float(sum(values) / len(values))
