"""Training loop, split evaluation, and throughput benchmarking.

Every batch recomputes the class-imbalance loss weights from its own
ground-truth labels before the forward pass. Model selection tracks the
highest validation weighted IoU over non-background classes, with ties
broken by the earliest epoch, and the winning parameters are restored into
the model when training finishes.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from .errors import Divergence, EmptySplit
from .loss import batch_frequencies, capped_weights, weighted_ce_loss
from .masks import LabelMask, class_pixel_counts, confusion_counts
from .metrics import (
    DEFAULT_AGGREGATION,
    AggregationMode,
    MetricsReport,
    PerClassMetric,
    aggregate,
    per_class_dice,
    per_class_dpa,
    per_class_iou,
    pixel_accuracy,
)
from .models import Model
from .optim import AdamW, LrSchedule, default_schedule, lr_at


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4
    epochs: int = 50
    schedule: LrSchedule | None = None  # None -> tiered default over the budget
    weight_decay: float = 1e-4
    loss_epsilon: float = 1.0
    loss_cap_ratio: float = 10.0
    betas: tuple = (0.9, 0.999)
    opt_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def resolved_schedule(self) -> LrSchedule:
        return self.schedule if self.schedule is not None else default_schedule(self.epochs)


@dataclass(frozen=True)
class HistoryRow:
    epoch: int
    lr: float
    train_weighted_dice: float
    train_weighted_iou: float
    val_weighted_dice: float
    val_weighted_iou: float
    loss: float


@dataclass
class TrainResult:
    best_epoch: int
    best_val_iou: float
    best_params: dict
    history: list


HISTORY_COLUMNS = (
    "epoch",
    "lr",
    "train_weighted_dice",
    "train_weighted_iou",
    "val_weighted_dice",
    "val_weighted_iou",
    "loss",
)


def write_history_csv(history, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTORY_COLUMNS)
        for row in history:
            writer.writerow(
                [row.epoch]
                + [
                    f"{v:.17g}"
                    for v in (
                        row.lr,
                        row.train_weighted_dice,
                        row.train_weighted_iou,
                        row.val_weighted_dice,
                        row.val_weighted_iou,
                        row.loss,
                    )
                ]
            )


def _split_metrics(model: Model, images: np.ndarray, labels: np.ndarray, mode: AggregationMode):
    """Mean per-image (pixel accuracy, weighted IoU, weighted Dice, weighted DPA)."""
    c = model.config.num_classes
    accs, ious, dices, dpas = [], [], [], []
    for i in range(len(images)):
        pred = model.predict_labels(images[i : i + 1])[0]
        pred_mask = LabelMask(pred, c)
        gt_mask = LabelMask(labels[i], c)
        conf = confusion_counts(pred_mask, gt_mask)
        gt_counts = class_pixel_counts(gt_mask)
        pred_counts = class_pixel_counts(pred_mask)
        accs.append(pixel_accuracy(conf))
        ious.append(aggregate(per_class_iou(conf), gt_counts, mode))
        dices.append(aggregate(per_class_dice(conf), gt_counts, mode))
        dpas.append(aggregate(per_class_dpa(pred_counts, gt_counts), gt_counts, mode))
    return (
        float(np.mean(accs)),
        float(np.mean(ious)),
        float(np.mean(dices)),
        float(np.mean(dpas)),
    )


def train(
    config: TrainConfig,
    model: Model,
    train_data: tuple[np.ndarray, np.ndarray],
    val_data: tuple[np.ndarray, np.ndarray],
    weight_hook=None,
) -> TrainResult:
    """Run the full loop and restore the best-validation parameters in place.

    ``weight_hook(epoch, batch_index, weights)`` observes the per-batch loss
    weights when provided, which is how the weight invariants get audited
    during a real run.
    """
    train_images, train_labels = train_data
    val_images, val_labels = val_data
    if len(train_images) == 0:
        raise EmptySplit("training split is empty")
    if len(val_images) == 0:
        raise EmptySplit("validation split is empty")

    schedule = config.resolved_schedule()
    c = model.config.num_classes
    optimizer = AdamW(
        lr=lr_at(schedule, 0),
        betas=config.betas,
        eps=config.opt_eps,
        weight_decay=config.weight_decay,
    )
    rng = np.random.Generator(np.random.PCG64(config.seed))
    mode = DEFAULT_AGGREGATION

    history: list[HistoryRow] = []
    best_epoch = -1
    best_iou = -np.inf
    best_params: dict = {}

    for epoch in range(config.epochs):
        lr = lr_at(schedule, epoch)
        optimizer.lr = lr
        order = rng.permutation(len(train_images))
        losses = []
        for bi, start in enumerate(range(0, len(order), config.batch_size)):
            idx = order[start : start + config.batch_size]
            xb = train_images[idx]
            yb = train_labels[idx]
            weights = capped_weights(
                batch_frequencies(yb, num_classes=c),
                epsilon=config.loss_epsilon,
                cap_ratio=config.loss_cap_ratio,
            )
            if weight_hook is not None:
                weight_hook(epoch, bi, weights)
            logits, tape = model.forward_training(xb)
            lv = weighted_ce_loss(logits, yb, weights, with_gradient=True)
            if not np.isfinite(lv.loss):
                raise Divergence(f"non-finite loss at epoch {epoch}, batch {bi}")
            grads, _ = model.backward(tape, lv.gradient)
            optimizer.step(model.params, grads)
            losses.append(lv.loss)

        _, train_iou, train_dice, _ = _split_metrics(model, train_images, train_labels, mode)
        _, val_iou, val_dice, _ = _split_metrics(model, val_images, val_labels, mode)
        history.append(
            HistoryRow(
                epoch=epoch,
                lr=lr,
                train_weighted_dice=train_dice,
                train_weighted_iou=train_iou,
                val_weighted_dice=val_dice,
                val_weighted_iou=val_iou,
                loss=float(np.mean(losses)),
            )
        )
        if val_iou > best_iou:
            best_iou = val_iou
            best_epoch = epoch
            best_params = model.copy_params()

    model.load_params(best_params)
    return TrainResult(
        best_epoch=best_epoch, best_val_iou=float(best_iou), best_params=best_params,
        history=history,
    )


def evaluate(
    model: Model,
    images: np.ndarray,
    labels: np.ndarray,
    mode: AggregationMode = DEFAULT_AGGREGATION,
) -> MetricsReport:
    """Per-image metrics averaged over a split, as one report.

    Per-class values average over the images where the class is defined;
    aggregates average the per-image aggregate.
    """
    if len(images) == 0:
        raise EmptySplit("evaluation split is empty")
    c = model.config.num_classes
    sums = {k: np.zeros(c) for k in ("iou", "dice", "dpa")}
    defined_counts = {k: np.zeros(c, dtype=np.int64) for k in ("iou", "dice", "dpa")}
    accs, iou_aggs, dice_aggs, dpa_aggs = [], [], [], []
    for i in range(len(images)):
        pred = LabelMask(model.predict_labels(images[i : i + 1])[0], c)
        gt = LabelMask(labels[i], c)
        conf = confusion_counts(pred, gt)
        gt_counts = class_pixel_counts(gt)
        per_class = {
            "iou": per_class_iou(conf),
            "dice": per_class_dice(conf),
            "dpa": per_class_dpa(class_pixel_counts(pred), gt_counts),
        }
        for key, metric in per_class.items():
            sums[key][metric.defined] += metric.values[metric.defined]
            defined_counts[key][metric.defined] += 1
        accs.append(pixel_accuracy(conf))
        iou_aggs.append(aggregate(per_class["iou"], gt_counts, mode))
        dice_aggs.append(aggregate(per_class["dice"], gt_counts, mode))
        dpa_aggs.append(aggregate(per_class["dpa"], gt_counts, mode))

    def mean_metric(key: str) -> PerClassMetric:
        defined = defined_counts[key] > 0
        values = np.zeros(c)
        values[defined] = sums[key][defined] / defined_counts[key][defined]
        return PerClassMetric(values=values, defined=defined)

    return MetricsReport(
        pixel_accuracy=float(np.mean(accs)),
        iou=mean_metric("iou"),
        dice=mean_metric("dice"),
        dpa=mean_metric("dpa"),
        iou_agg=float(np.mean(iou_aggs)),
        dice_agg=float(np.mean(dice_aggs)),
        dpa_agg=float(np.mean(dpa_aggs)),
        aggregation=mode,
    )


@dataclass(frozen=True)
class ThroughputStats:
    mean: float
    min: float
    max: float


def benchmark_throughput(
    model: Model,
    batch_size: int = 4,
    warmup: int = 1,
    iters: int = 3,
    image_size: int | None = None,
    seed: int = 0,
) -> dict[str, ThroughputStats]:
    """Images/second for pure inference and for full training steps."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    size = image_size or model.config.input_size
    c = model.config.num_classes
    rng = np.random.Generator(np.random.PCG64(seed))
    x = rng.random((batch_size, model.config.in_channels, size, size), dtype=np.float32)
    y = rng.integers(0, c, size=(batch_size, size, size))
    weights = capped_weights(batch_frequencies(y, num_classes=c))
    optimizer = AdamW(lr=1e-3, weight_decay=1e-4)

    def inference_step():
        model.forward(x)

    def train_step():
        logits, tape = model.forward_training(x)
        lv = weighted_ce_loss(logits, y, weights, with_gradient=True)
        grads, _ = model.backward(tape, lv.gradient)
        optimizer.step(model.params, grads)

    saved = model.copy_params()  # the timing steps must not perturb the model
    try:
        out = {}
        for name, step in (("inference", inference_step), ("train_step", train_step)):
            for _ in range(warmup):
                step()
            rates = []
            for _ in range(iters):
                t0 = time.perf_counter()
                step()
                rates.append(batch_size / (time.perf_counter() - t0))
            out[name] = ThroughputStats(
                mean=float(np.mean(rates)), min=float(np.min(rates)), max=float(np.max(rates))
            )
    finally:
        model.load_params(saved)
    return out
