"""Segmentation metrics: pixel accuracy, IoU, Dice, and DPA with aggregation.

Distributional Pixel Accuracy (DPA) scores how well the predicted per-class
pixel *proportions* match the ground truth, ignoring spatial alignment
entirely; it is the headline metric for surface-proportion estimation, where
two disjoint regions of equal size are a perfect answer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import AreaMismatch, NoDefinedClasses
from .masks import ConfusionCounts


@dataclass(frozen=True)
class PerClassMetric:
    """Per-class scores plus a flag excluding classes absent from both masks."""

    values: np.ndarray  # length C, in [0, 1] where defined
    defined: np.ndarray  # length C, bool


@dataclass(frozen=True)
class AggregationMode:
    """How per-class scores collapse to one number.

    ``weighted`` scales each class by its ground-truth pixel count, so
    dominant classes dominate the score; ``macro`` treats classes equally.
    Background is excluded by default, matching how the models are selected,
    but deployments that care about it can flip ``include_background``.
    """

    mode: str = "weighted"
    include_background: bool = False

    def __post_init__(self):
        if self.mode not in ("macro", "weighted"):
            raise ValueError(f"aggregation mode must be 'macro' or 'weighted', got {self.mode!r}")


DEFAULT_AGGREGATION = AggregationMode()


def pixel_accuracy(conf: ConfusionCounts) -> float:
    """Fraction of pixels whose predicted class matches the ground truth."""
    return float(conf.tp.sum() / conf.total_pixels)


def per_class_iou(conf: ConfusionCounts) -> PerClassMetric:
    """Intersection over union per class; 0/0 classes are marked undefined."""
    denom = conf.tp + conf.fp + conf.fn
    defined = denom > 0
    values = np.zeros(conf.num_classes, dtype=np.float64)
    values[defined] = conf.tp[defined] / denom[defined]
    return PerClassMetric(values=values, defined=defined)


def per_class_dice(conf: ConfusionCounts) -> PerClassMetric:
    """Dice coefficient per class; 0/0 classes are marked undefined."""
    denom = 2 * conf.tp + conf.fp + conf.fn
    defined = denom > 0
    values = np.zeros(conf.num_classes, dtype=np.float64)
    values[defined] = 2 * conf.tp[defined] / denom[defined]
    return PerClassMetric(values=values, defined=defined)


def per_class_dpa(pred_counts: np.ndarray, gt_counts: np.ndarray) -> PerClassMetric:
    """Distributional pixel accuracy: 1 minus the proportion gap per class.

    Both count vectors must cover the same total area; a class absent from
    both masks is undefined, mirroring the IoU/Dice convention.
    """
    t_pred = int(np.sum(pred_counts))
    t_gt = int(np.sum(gt_counts))
    if t_pred != t_gt:
        raise AreaMismatch(f"predicted area {t_pred} != ground-truth area {t_gt}")
    values = 1.0 - np.abs(
        np.asarray(pred_counts, dtype=np.float64) / t_pred
        - np.asarray(gt_counts, dtype=np.float64) / t_gt
    )
    defined = (np.asarray(pred_counts) > 0) | (np.asarray(gt_counts) > 0)
    return PerClassMetric(values=values, defined=defined)


def aggregate(
    metric: PerClassMetric,
    gt_counts: np.ndarray,
    mode: AggregationMode = DEFAULT_AGGREGATION,
) -> float:
    """Collapse per-class scores into one number under the given mode.

    Raises NoDefinedClasses when filtering leaves nothing to average (or, in
    weighted mode, when every remaining class has zero true pixels).
    """
    keep = metric.defined.copy()
    if not mode.include_background:
        keep[0] = False
    if not keep.any():
        raise NoDefinedClasses("no defined classes left to aggregate")
    values = metric.values[keep]
    if mode.mode == "macro":
        return float(values.mean())
    weights = np.asarray(gt_counts, dtype=np.float64)[keep]
    total = weights.sum()
    if total <= 0:
        raise NoDefinedClasses("weighted aggregation has zero total ground-truth weight")
    return float((values * weights).sum() / total)


@dataclass(frozen=True)
class MetricsReport:
    """Full metric set for one prediction/ground-truth comparison or split."""

    pixel_accuracy: float
    iou: PerClassMetric
    dice: PerClassMetric
    dpa: PerClassMetric
    iou_agg: float
    dice_agg: float
    dpa_agg: float
    aggregation: AggregationMode

    def to_json(self) -> str:
        def per_class(m: PerClassMetric):
            return [
                {"class": i, "value": float(v), "defined": bool(d)}
                for i, (v, d) in enumerate(zip(m.values, m.defined))
            ]

        return json.dumps(
            {
                "aggregation": {
                    "mode": self.aggregation.mode,
                    "include_background": self.aggregation.include_background,
                },
                "pixel_accuracy": self.pixel_accuracy,
                "iou": {"per_class": per_class(self.iou), "aggregate": self.iou_agg},
                "dice": {"per_class": per_class(self.dice), "aggregate": self.dice_agg},
                "dpa": {"per_class": per_class(self.dpa), "aggregate": self.dpa_agg},
            },
            indent=2,
        )


def metrics_report(
    conf: ConfusionCounts,
    pred_counts: np.ndarray,
    gt_counts: np.ndarray,
    mode: AggregationMode = DEFAULT_AGGREGATION,
) -> MetricsReport:
    """Compute every metric plus its aggregate for one comparison."""
    iou = per_class_iou(conf)
    dice = per_class_dice(conf)
    dpa = per_class_dpa(pred_counts, gt_counts)
    return MetricsReport(
        pixel_accuracy=pixel_accuracy(conf),
        iou=iou,
        dice=dice,
        dpa=dpa,
        iou_agg=aggregate(iou, gt_counts, mode),
        dice_agg=aggregate(dice, gt_counts, mode),
        dpa_agg=aggregate(dpa, gt_counts, mode),
        aggregation=mode,
    )
