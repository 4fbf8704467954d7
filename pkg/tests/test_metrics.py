import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from platewaste.errors import AreaMismatch, NoDefinedClasses
from platewaste.masks import LabelMask, class_pixel_counts, confusion_counts
from platewaste.metrics import (
    AggregationMode,
    aggregate,
    metrics_report,
    per_class_dice,
    per_class_dpa,
    per_class_iou,
    pixel_accuracy,
)

MACRO = AggregationMode(mode="macro", include_background=True)
WEIGHTED = AggregationMode(mode="weighted", include_background=True)


def masks_from_arrays(pred, gt, c):
    return LabelMask(pred, c), LabelMask(gt, c)


def translated_square_fixture(size=16, side=4, c=2):
    """Equal-area disjoint class-1 squares: perfect proportions, zero overlap."""
    gt = np.zeros((size, size), dtype=int)
    gt[:side, :side] = 1
    pred = np.zeros((size, size), dtype=int)
    pred[-side:, -side:] = 1
    return masks_from_arrays(pred, gt, c)


class TestPixelAccuracy:
    def test_perfect(self, rng):
        m = LabelMask(rng.integers(0, 3, (8, 8)), 3)
        assert pixel_accuracy(confusion_counts(m, m)) == 1.0

    def test_total_disagreement(self):
        pred = LabelMask(np.ones((4, 4), dtype=int), 2)
        gt = LabelMask(np.zeros((4, 4), dtype=int), 2)
        assert pixel_accuracy(confusion_counts(pred, gt)) == 0.0

    def test_ninety_of_hundred(self):
        gt = np.zeros((10, 10), dtype=int)
        pred = gt.copy()
        pred.ravel()[:10] = 1
        conf = confusion_counts(LabelMask(pred, 2), LabelMask(gt, 2))
        assert pixel_accuracy(conf) == pytest.approx(0.9)


class TestIoUDice:
    def test_identical_masks_are_one(self, rng):
        m = LabelMask(rng.integers(0, 3, (8, 8)), 3)
        conf = confusion_counts(m, m)
        present = class_pixel_counts(m) > 0
        assert np.all(per_class_iou(conf).values[present] == 1.0)
        assert np.all(per_class_dice(conf).values[present] == 1.0)

    def test_half_overlap(self):
        # two 100-px class-1 regions overlapping on 50 px
        gt = np.zeros((20, 20), dtype=int)
        gt.ravel()[0:100] = 1
        pred = np.zeros((20, 20), dtype=int)
        pred.ravel()[50:150] = 1
        conf = confusion_counts(LabelMask(pred, 2), LabelMask(gt, 2))
        assert per_class_iou(conf).values[1] == pytest.approx(1 / 3)
        assert per_class_dice(conf).values[1] == pytest.approx(0.5)

    def test_absent_class_is_undefined(self):
        pred = LabelMask(np.zeros((4, 4), dtype=int), 3)
        gt = LabelMask(np.zeros((4, 4), dtype=int), 3)
        conf = confusion_counts(pred, gt)
        iou = per_class_iou(conf)
        assert not iou.defined[1] and not iou.defined[2]
        assert iou.defined[0]

    def test_one_sided_presence_scores_zero(self):
        pred = LabelMask(np.zeros((4, 4), dtype=int), 2)
        gt = LabelMask(np.eye(4, dtype=int), 2)
        iou = per_class_iou(confusion_counts(pred, gt))
        assert iou.defined[1] and iou.values[1] == 0.0

    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1))
    def test_dice_iou_identity_and_order(self, seed):
        rng = np.random.default_rng(seed)
        pred = LabelMask(rng.integers(0, 3, (10, 10)), 3)
        gt = LabelMask(rng.integers(0, 3, (10, 10)), 3)
        conf = confusion_counts(pred, gt)
        iou, dice = per_class_iou(conf), per_class_dice(conf)
        for c in range(3):
            if not iou.defined[c]:
                continue
            assert dice.values[c] == pytest.approx(
                2 * iou.values[c] / (1 + iou.values[c]), abs=1e-12
            )
            assert iou.values[c] <= dice.values[c] + 1e-12


class TestDPA:
    def test_identical_masks(self, rng):
        m = LabelMask(rng.integers(0, 3, (8, 8)), 3)
        counts = class_pixel_counts(m)
        dpa = per_class_dpa(counts, counts)
        assert np.all(dpa.values[dpa.defined] == 1.0)

    def test_translated_disjoint_regions(self):
        pred, gt = translated_square_fixture()
        conf = confusion_counts(pred, gt)
        pc, gc = class_pixel_counts(pred), class_pixel_counts(gt)
        assert per_class_dpa(pc, gc).values[1] == 1.0
        assert per_class_iou(conf).values[1] == 0.0
        assert per_class_dice(conf).values[1] == 0.0
        # only the overlap of the two background regions agrees
        assert pixel_accuracy(conf) == pytest.approx((256 - 32) / 256)

    def test_thirty_vs_fifty_percent(self):
        pred_counts = np.array([70, 30])
        gt_counts = np.array([50, 50])
        assert per_class_dpa(pred_counts, gt_counts).values[1] == pytest.approx(0.8)

    def test_area_mismatch_raises(self):
        with pytest.raises(AreaMismatch):
            per_class_dpa(np.array([4, 0]), np.array([4, 1]))

    def test_one_iff_counts_equal(self, rng):
        pred_counts = rng.integers(0, 50, 4)
        gt_counts = pred_counts.copy()
        gt_counts[1] += 1
        gt_counts[2] -= 1
        dpa = per_class_dpa(pred_counts, gt_counts)
        assert dpa.values[0] == 1.0 and dpa.values[3] == 1.0
        assert dpa.values[1] < 1.0 and dpa.values[2] < 1.0

    def test_invariant_under_count_preserving_shuffle(self, rng):
        gt = LabelMask(rng.integers(0, 3, (12, 12)), 3)
        pred_labels = rng.integers(0, 3, (12, 12))
        base = per_class_dpa(
            class_pixel_counts(LabelMask(pred_labels, 3)), class_pixel_counts(gt)
        ).values
        for _ in range(10):
            shuffled = rng.permutation(pred_labels.ravel()).reshape(12, 12)
            v = per_class_dpa(
                class_pixel_counts(LabelMask(shuffled, 3)), class_pixel_counts(gt)
            ).values
            assert np.array_equal(v, base)


class TestAggregate:
    def test_equal_values_any_mode(self):
        from platewaste.metrics import PerClassMetric

        m = PerClassMetric(values=np.array([0.7, 0.7, 0.7]), defined=np.array([True] * 3))
        counts = np.array([10, 200, 3])
        assert aggregate(m, counts, MACRO) == pytest.approx(0.7)
        assert aggregate(m, counts, WEIGHTED) == pytest.approx(0.7)

    def test_macro_vs_weighted_hand_case(self):
        from platewaste.metrics import PerClassMetric

        m = PerClassMetric(values=np.array([1.0, 0.0]), defined=np.array([True, True]))
        counts = np.array([900, 100])
        assert aggregate(m, counts, MACRO) == pytest.approx(0.5)
        assert aggregate(m, counts, WEIGHTED) == pytest.approx(0.9)

    def test_background_exclusion(self):
        from platewaste.metrics import PerClassMetric

        m = PerClassMetric(values=np.array([0.2, 0.8]), defined=np.array([True, True]))
        mode = AggregationMode(mode="macro", include_background=False)
        assert aggregate(m, np.array([10, 10]), mode) == pytest.approx(0.8)

    def test_no_defined_classes_raises(self):
        from platewaste.metrics import PerClassMetric

        m = PerClassMetric(values=np.zeros(2), defined=np.array([True, False]))
        with pytest.raises(NoDefinedClasses):
            aggregate(m, np.array([5, 5]), AggregationMode(include_background=False))

    def test_uniform_counts_weighted_equals_macro(self, rng):
        from platewaste.metrics import PerClassMetric

        vals = rng.random(4)
        m = PerClassMetric(values=vals, defined=np.array([True] * 4))
        counts = np.full(4, 77)
        assert aggregate(m, counts, WEIGHTED) == pytest.approx(aggregate(m, counts, MACRO))

    def test_undefined_classes_are_skipped(self):
        from platewaste.metrics import PerClassMetric

        m = PerClassMetric(values=np.array([0.5, 0.0, 0.9]), defined=np.array([True, False, True]))
        assert aggregate(m, np.array([100, 50, 100]), MACRO) == pytest.approx(0.7)

    def test_bad_mode_rejected(self):
        with pytest.raises(ValueError):
            AggregationMode(mode="median")


class TestReport:
    def test_perfect_prediction_report(self, rng):
        m = LabelMask(rng.integers(0, 3, (8, 8)), 3)
        conf = confusion_counts(m, m)
        counts = class_pixel_counts(m)
        report = metrics_report(conf, counts, counts)
        assert report.pixel_accuracy == 1.0
        assert report.iou_agg == 1.0 and report.dice_agg == 1.0 and report.dpa_agg == 1.0

    def test_aggregate_between_min_max(self, rng):
        pred = LabelMask(rng.integers(0, 3, (10, 10)), 3)
        gt = LabelMask(rng.integers(0, 3, (10, 10)), 3)
        conf = confusion_counts(pred, gt)
        report = metrics_report(conf, class_pixel_counts(pred), class_pixel_counts(gt))
        for metric, agg in ((report.iou, report.iou_agg), (report.dice, report.dice_agg)):
            defined = metric.defined.copy()
            defined[0] = False
            vals = metric.values[defined]
            assert vals.min() - 1e-12 <= agg <= vals.max() + 1e-12

    def test_json_round_trip_fields(self, rng):
        import json

        m = LabelMask(rng.integers(0, 2, (6, 6)), 2)
        conf = confusion_counts(m, m)
        counts = class_pixel_counts(m)
        doc = json.loads(metrics_report(conf, counts, counts).to_json())
        assert set(doc) == {"aggregation", "pixel_accuracy", "iou", "dice", "dpa"}
        assert len(doc["iou"]["per_class"]) == 2
