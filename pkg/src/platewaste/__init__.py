"""Plate-level food consumption and waste estimation toolkit.

Estimates per-class eating and remaining rates from pre/post-consumption
segmentation masks, and trains/evaluates toy-scale U-Net-family models with
a batch-dynamic class-imbalance loss, decoupled weight decay, and
proportion-aware evaluation metrics.
"""

from .masks import LabelMask, ConfusionCounts, class_pixel_counts, class_proportions, confusion_counts
from .metrics import (
    AggregationMode,
    MetricsReport,
    PerClassMetric,
    aggregate,
    metrics_report,
    per_class_dice,
    per_class_dpa,
    per_class_iou,
    pixel_accuracy,
)
from .waste import (
    PreBenchmark,
    WasteReport,
    eating_rate,
    mean_eating_rate,
    pooled_pre_benchmark,
    remaining_rate,
    waste_report,
)
from .loss import LossValue, LossWeights, batch_frequencies, capped_weights, weighted_ce_loss
from .models import Model, ModelConfig, build, load_checkpoint, param_count, save_checkpoint
from .optim import Adam, AdamW, LrSchedule, default_schedule, lr_at

__version__ = "0.1.0"

__all__ = [
    "LabelMask",
    "ConfusionCounts",
    "class_pixel_counts",
    "class_proportions",
    "confusion_counts",
    "AggregationMode",
    "MetricsReport",
    "PerClassMetric",
    "aggregate",
    "metrics_report",
    "per_class_dice",
    "per_class_dpa",
    "per_class_iou",
    "pixel_accuracy",
    "PreBenchmark",
    "WasteReport",
    "eating_rate",
    "mean_eating_rate",
    "pooled_pre_benchmark",
    "remaining_rate",
    "waste_report",
    "LossValue",
    "LossWeights",
    "batch_frequencies",
    "capped_weights",
    "weighted_ce_loss",
    "Model",
    "ModelConfig",
    "build",
    "param_count",
    "save_checkpoint",
    "load_checkpoint",
    "Adam",
    "AdamW",
    "LrSchedule",
    "default_schedule",
    "lr_at",
    "__version__",
]
