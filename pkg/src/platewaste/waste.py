"""Consumption benchmark, eating rates, remaining rates, and report assembly.

The pre-consumption masks of a food type are pooled into a per-class
benchmark proportion; each post-consumption dish is compared against that
benchmark to yield an eating rate, and the remaining (waste) rate is its
complement.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmptyInput, ZeroBenchmark
from .masks import LabelMask, class_pixel_counts


@dataclass(frozen=True)
class PreBenchmark:
    """Pooled per-class pre-consumption proportion used as the rate denominator."""

    values: np.ndarray  # length C, fractions in [0, 1]
    n_pre_images: int


@dataclass(frozen=True)
class WasteRow:
    class_index: int
    class_name: str
    pre_avg: float
    post_avg: float
    eating_rate: float
    remaining_rate: float


@dataclass(frozen=True)
class WasteReport:
    """Per-food-type waste figures: one row per food class plus totals."""

    food_type: str
    rows: list[WasteRow]
    pre_total: float
    post_total: float
    n_pre: int
    n_post: int
    clamped: bool = field(default=True)

    def to_json(self) -> str:
        doc = {
            "food_type": self.food_type,
            "n_pre": self.n_pre,
            "n_post": self.n_post,
            "clamped": self.clamped,
            "classes": [
                {
                    "index": r.class_index,
                    "name": r.class_name,
                    "pre_avg": r.pre_avg,
                    "post_avg": r.post_avg,
                    "eating_rate": r.eating_rate,
                    "remaining_rate": r.remaining_rate,
                }
                for r in self.rows
            ],
            "totals": {"pre_avg": self.pre_total, "post_avg": self.post_total},
        }
        return json.dumps(doc, indent=2)

    def write_csv(self, fh) -> None:
        """Write rows as CSV: food type, class, pre avg, post avg, eating rate, remaining rate."""
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["food_type", "class", "pre_avg", "post_avg", "eating_rate", "remaining_rate"]
        )
        for r in self.rows:
            writer.writerow(
                [
                    self.food_type,
                    f"{r.class_index}/{r.class_name}",
                    f"{r.pre_avg:.10g}",
                    f"{r.post_avg:.10g}",
                    f"{r.eating_rate:.10g}",
                    f"{r.remaining_rate:.10g}",
                ]
            )
        writer.writerow(
            [self.food_type, "Total", f"{self.pre_total:.10g}", f"{self.post_total:.10g}", "", ""]
        )


def pooled_pre_benchmark(pre_masks: list[LabelMask]) -> PreBenchmark:
    """Pool pixel counts over all pre-consumption masks into one proportion vector.

    Pooling (sum of counts over sum of areas) equals the mean of per-image
    proportions whenever all images share an area, and stays well defined
    for mixed sizes.
    """
    if not pre_masks:
        raise EmptyInput("pooled_pre_benchmark needs at least one pre-consumption mask")
    c = pre_masks[0].num_classes
    for m in pre_masks:
        if m.num_classes != c:
            raise DimensionMismatch("all pre-consumption masks must share num_classes")
    counts = np.zeros(c, dtype=np.int64)
    area = 0
    for m in pre_masks:
        counts += class_pixel_counts(m)
        area += m.num_pixels
    return PreBenchmark(values=counts / float(area), n_pre_images=len(pre_masks))


def eating_rate(benchmark: float, post_prop: float, clamp: bool = True) -> float:
    """Percent of the benchmark proportion that disappeared after consumption.

    Negative rates (a dish carrying more of the class than the pooled
    benchmark) are clamped to 0 unless ``clamp`` is disabled.
    """
    if benchmark <= 0.0:
        raise ZeroBenchmark(f"class benchmark must be positive, got {benchmark}")
    rate = (benchmark - post_prop) / benchmark * 100.0
    if clamp and rate < 0.0:
        return 0.0
    return rate


def mean_eating_rate(rates: list[float]) -> float:
    if not rates:
        raise EmptyInput("mean_eating_rate needs at least one per-dish rate")
    return float(np.mean(rates))


def remaining_rate(mean_eating: float) -> float:
    """Complement of the mean eating rate."""
    return 100.0 - mean_eating


def waste_report(
    food_type: str,
    class_names: list[str],
    pre_masks: list[LabelMask],
    post_masks: list[LabelMask],
    clamp: bool = True,
) -> WasteReport:
    """Assemble a per-class waste report for one food type.

    Per post-consumption dish, each food class's eating rate is measured
    against the pooled pre-consumption benchmark, then averaged across
    dishes; the background class is excluded from the rate rows.
    """
    if not pre_masks:
        raise EmptyInput(f"{food_type}: no pre-consumption masks")
    if not post_masks:
        raise EmptyInput(f"{food_type}: no post-consumption masks")
    benchmark = pooled_pre_benchmark(pre_masks)
    c = len(benchmark.values)
    if len(class_names) != c:
        raise DimensionMismatch(
            f"class table has {len(class_names)} names but masks declare {c} classes"
        )
    post_pooled = pooled_pre_benchmark(post_masks)  # same pooling arithmetic
    per_dish_props = [class_pixel_counts(m) / float(m.num_pixels) for m in post_masks]

    rows = []
    for ci in range(1, c):
        rates = [eating_rate(float(benchmark.values[ci]), float(p[ci]), clamp) for p in per_dish_props]
        mean_rate = mean_eating_rate(rates)
        rows.append(
            WasteRow(
                class_index=ci,
                class_name=class_names[ci],
                pre_avg=float(benchmark.values[ci]),
                post_avg=float(post_pooled.values[ci]),
                eating_rate=mean_rate,
                remaining_rate=remaining_rate(mean_rate),
            )
        )
    return WasteReport(
        food_type=food_type,
        rows=rows,
        pre_total=float(benchmark.values[1:].sum()),
        post_total=float(post_pooled.values[1:].sum()),
        n_pre=len(pre_masks),
        n_post=len(post_masks),
        clamped=clamp,
    )
