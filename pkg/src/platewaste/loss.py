"""Capped dynamic inverse-frequency cross-entropy loss.

Class weights are recomputed from the ground-truth labels of every batch:
raw inverse-frequency weights 1/(f_c + eps) are capped so the max/min ratio
never exceeds ``cap_ratio``, then normalized to sum to the class count. The
loss itself is weighted pixel-wise cross-entropy with an analytic gradient
in closed form (weights are constants of the batch, never differentiated).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, ShapeMismatch
from .masks import LabelMask

LOG_PROB_FLOOR = -50.0  # keeps pathological logits from emitting -inf loss


@dataclass(frozen=True)
class LossWeights:
    """Normalized per-class weights plus the knobs that produced them."""

    w_hat: np.ndarray
    epsilon: float
    cap_ratio: float


@dataclass(frozen=True)
class LossValue:
    loss: float
    gradient: np.ndarray | None = None  # d loss / d logits, same shape as logits


def _labels_array(gt_batch) -> np.ndarray:
    """Accept a list of LabelMask or an int array; return (B, H, W) int labels."""
    if isinstance(gt_batch, np.ndarray):
        arr = gt_batch
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3:
            raise ShapeMismatch(f"label array must be (B, H, W), got {arr.shape}")
        return arr.astype(np.int64, copy=False)
    masks = list(gt_batch)
    if not masks:
        raise EmptyInput("empty ground-truth batch")
    return np.stack([np.asarray(m.labels, dtype=np.int64) for m in masks])


def batch_frequencies(gt_batch, num_classes: int | None = None) -> np.ndarray:
    """Pool per-class pixel counts over one batch of ground-truth masks."""
    if not isinstance(gt_batch, np.ndarray):
        gt_batch = list(gt_batch)
        if not gt_batch:
            raise EmptyInput("empty ground-truth batch")
        if num_classes is None and isinstance(gt_batch[0], LabelMask):
            num_classes = gt_batch[0].num_classes
            if any(m.num_classes != num_classes for m in gt_batch):
                raise ShapeMismatch("batch masks disagree on num_classes")
    if num_classes is None:
        raise ValueError("num_classes is required when gt_batch is a plain array")
    labels = _labels_array(gt_batch)
    return np.bincount(labels.ravel(), minlength=num_classes).astype(np.int64)


def capped_weights(
    frequencies: np.ndarray, epsilon: float = 1.0, cap_ratio: float = 10.0
) -> LossWeights:
    """Inverse-frequency weights, ratio-capped and normalized to sum to C.

    ``epsilon`` defaults to one pixel so absent classes stay finite;
    ``cap_ratio`` bounds max(w)/min(w) so trace classes cannot dominate.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if cap_ratio < 1:
        raise ValueError(f"cap_ratio must be >= 1, got {cap_ratio}")
    f = np.asarray(frequencies, dtype=np.float64)
    raw = 1.0 / (f + epsilon)
    capped = np.minimum(raw, raw.min() * cap_ratio)
    w_hat = capped / capped.sum() * len(f)
    return LossWeights(w_hat=w_hat, epsilon=float(epsilon), cap_ratio=float(cap_ratio))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable log-softmax over axis 1 of (B, C, H, W) logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def weighted_ce_loss(
    logits: np.ndarray,
    gt_batch,
    weights: LossWeights,
    with_gradient: bool = False,
) -> LossValue:
    """Weighted pixel-wise cross-entropy over a (B, C, H, W) logit tensor.

    Returns the scalar loss, and when requested the closed-form gradient
    w_hat[y] * (softmax - onehot(y)) / N per pixel, with N the total pixel
    count of the batch. Accumulation runs in float64 regardless of the
    logits' dtype.
    """
    labels = _labels_array(gt_batch)
    if logits.ndim != 4:
        raise ShapeMismatch(f"logits must be (B, C, H, W), got {logits.shape}")
    b, c, h, w = logits.shape
    if labels.shape != (b, h, w):
        raise ShapeMismatch(f"labels {labels.shape} do not match logits {logits.shape}")
    if len(weights.w_hat) != c:
        raise ShapeMismatch(f"{len(weights.w_hat)} weights for {c} classes")

    logp = log_softmax(logits.astype(np.float64, copy=False))
    n = b * h * w
    bi, hi, wi = np.ogrid[:b, :h, :w]
    logp_true = np.maximum(logp[bi, labels, hi, wi], LOG_PROB_FLOOR)
    pixel_w = weights.w_hat[labels]
    loss = float(-(pixel_w * logp_true).sum() / n)

    gradient = None
    if with_gradient:
        probs = np.exp(logp)
        grad = probs * pixel_w[:, None, :, :]
        grad[bi, labels, hi, wi] -= pixel_w
        gradient = (grad / n).astype(logits.dtype, copy=False)
    return LossValue(loss=loss, gradient=gradient)
