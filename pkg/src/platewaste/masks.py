"""Label masks, per-class pixel counting, proportions, and confusion counts.

A label mask is a dense H×W map of integer class indices with background
fixed at index 0. Every other module consumes masks through this one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch


class LabelMask:
    """Hard H×W class-index map with a declared number of classes.

    Labels are stored row-major as int32. Construction validates the
    invariants (positive dimensions, labels in 0..num_classes-1), so
    downstream code never re-checks them.
    """

    __slots__ = ("width", "height", "num_classes", "_labels")

    def __init__(self, labels, num_classes: int):
        arr = np.asarray(labels)
        if arr.ndim != 2:
            raise DimensionMismatch(f"labels must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionMismatch(f"mask dimensions must be positive, got {arr.shape}")
        if num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {num_classes}")
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(
                f"label values must lie in [0, {num_classes - 1}], "
                f"got range [{arr.min()}, {arr.max()}]"
            )
        self.height, self.width = int(arr.shape[0]), int(arr.shape[1])
        self.num_classes = int(num_classes)
        self._labels = np.ascontiguousarray(arr, dtype=np.int32)
        self._labels.setflags(write=False)

    @property
    def labels(self) -> np.ndarray:
        """Read-only (H, W) int32 view of the class indices."""
        return self._labels

    @property
    def num_pixels(self) -> int:
        return self.width * self.height

    def same_geometry(self, other: "LabelMask") -> bool:
        return (
            self.width == other.width
            and self.height == other.height
            and self.num_classes == other.num_classes
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabelMask):
            return NotImplemented
        return self.same_geometry(other) and bool(np.array_equal(self._labels, other._labels))

    def __repr__(self) -> str:
        return f"LabelMask({self.height}x{self.width}, C={self.num_classes})"


@dataclass(frozen=True)
class ConfusionCounts:
    """Per-class true positive / false positive / false negative pixel counts."""

    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    total_pixels: int

    @property
    def num_classes(self) -> int:
        return len(self.tp)


def class_pixel_counts(mask: LabelMask) -> np.ndarray:
    """Count pixels per class; counts[c] sums to H*W over all c."""
    return np.bincount(mask.labels.ravel(), minlength=mask.num_classes).astype(np.int64)


def class_proportions(mask: LabelMask) -> np.ndarray:
    """Per-class pixel fraction of the mask area, summing to 1.

    The denominator is the mask's own H*W, so the same formula serves
    any grid size, not just 256x256 production images.
    """
    return class_pixel_counts(mask) / float(mask.num_pixels)


def confusion_counts(pred: LabelMask, gt: LabelMask) -> ConfusionCounts:
    """Pixel-wise per-class TP/FP/FN between a predicted and ground-truth mask.

    Raises DimensionMismatch when the two masks differ in shape or class count.
    """
    if not pred.same_geometry(gt):
        raise DimensionMismatch(
            f"pred {pred!r} and gt {gt!r} must share dimensions and num_classes"
        )
    c = pred.num_classes
    # joint histogram: rows = gt class, cols = predicted class
    joint = np.bincount(
        gt.labels.ravel().astype(np.int64) * c + pred.labels.ravel(),
        minlength=c * c,
    ).reshape(c, c)
    tp = np.diag(joint).astype(np.int64)
    fp = joint.sum(axis=0).astype(np.int64) - tp
    fn = joint.sum(axis=1).astype(np.int64) - tp
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, total_pixels=gt.num_pixels)
