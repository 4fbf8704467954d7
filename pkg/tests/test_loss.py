import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from platewaste.errors import EmptyInput, ShapeMismatch
from platewaste.loss import batch_frequencies, capped_weights, log_softmax, weighted_ce_loss
from platewaste.masks import LabelMask, class_pixel_counts


def fd_gradient(logits, labels, weights, h=1e-5):
    """Central-difference loss gradient, the independent oracle."""
    grad = np.zeros_like(logits)
    it = np.nditer(logits, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = logits[idx]
        logits[idx] = orig + h
        lp = weighted_ce_loss(logits, labels, weights).loss
        logits[idx] = orig - h
        lm = weighted_ce_loss(logits, labels, weights).loss
        logits[idx] = orig
        grad[idx] = (lp - lm) / (2 * h)
        it.iternext()
    return grad


class TestBatchFrequencies:
    def test_single_background_mask(self):
        m = LabelMask(np.zeros((4, 4), dtype=int), 2)
        assert batch_frequencies([m]).tolist() == [16, 0]

    def test_two_half_masks(self):
        m = LabelMask([[0, 1], [0, 1]], 2)
        assert batch_frequencies([m, m]).tolist() == [4, 4]

    def test_matches_mask_counts_summed(self, rng):
        masks = [LabelMask(rng.integers(0, 3, (6, 6)), 3) for _ in range(4)]
        expected = sum(class_pixel_counts(m) for m in masks)
        assert batch_frequencies(masks).tolist() == expected.tolist()

    def test_empty_raises(self):
        with pytest.raises(EmptyInput):
            batch_frequencies([])

    def test_array_input_needs_num_classes(self):
        with pytest.raises(ValueError):
            batch_frequencies(np.zeros((1, 2, 2), dtype=int))
        assert batch_frequencies(np.zeros((1, 2, 2), dtype=int), num_classes=3).tolist() == [4, 0, 0]


class TestCappedWeights:
    def test_balanced_frequencies_give_unit_weights(self):
        w = capped_weights(np.array([100, 100]))
        assert w.w_hat.tolist() == [1.0, 1.0]

    def test_hand_computed_capped_case(self):
        # raw weights [1/990, 1/10]; cap binds the rare class at 10/990
        w = capped_weights(np.array([990, 10]), epsilon=1e-12, cap_ratio=10.0)
        assert w.w_hat == pytest.approx([2 / 11, 20 / 11], abs=1e-4)
        assert w.w_hat.max() / w.w_hat.min() == pytest.approx(10.0, abs=1e-9)
        assert w.w_hat.sum() == pytest.approx(2.0, abs=1e-12)

    def test_absent_class_hits_the_cap(self):
        w = capped_weights(np.array([65536, 0]), epsilon=1.0, cap_ratio=10.0)
        assert w.w_hat.max() / w.w_hat.min() == pytest.approx(10.0, rel=1e-9)

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            capped_weights(np.array([1, 1]), epsilon=0.0)
        with pytest.raises(ValueError):
            capped_weights(np.array([1, 1]), cap_ratio=0.5)

    @settings(max_examples=100)
    @given(
        st.lists(st.integers(0, 10**7), min_size=2, max_size=6),
        st.floats(1.0, 100.0),
    )
    def test_sum_and_ratio_invariants(self, freqs, lam):
        w = capped_weights(np.array(freqs), epsilon=1.0, cap_ratio=lam)
        assert w.w_hat.sum() == pytest.approx(len(freqs), abs=1e-9)
        assert w.w_hat.max() / w.w_hat.min() <= lam + 1e-9
        assert np.all(w.w_hat > 0)

    @settings(max_examples=50)
    @given(st.lists(st.integers(1, 10**6), min_size=2, max_size=5), st.integers(2, 1000))
    def test_scale_invariance_at_tiny_epsilon(self, freqs, k):
        f = np.array(freqs)
        eps = 1e-12 * f.min()
        a = capped_weights(f, epsilon=eps).w_hat
        b = capped_weights(k * f, epsilon=eps * k).w_hat
        assert a == pytest.approx(b, rel=1e-6)

    def test_huge_cap_with_balanced_frequencies_is_uniform(self):
        w = capped_weights(np.array([500, 500, 500]), cap_ratio=1e12)
        assert w.w_hat == pytest.approx([1.0, 1.0, 1.0], abs=1e-12)


class TestWeightedCELoss:
    def test_uniform_logits_two_classes_is_ln2(self):
        logits = np.zeros((1, 2, 256, 256))
        labels = np.zeros((1, 256, 256), dtype=int)
        labels[:, ::2] = 1  # exactly balanced -> unit weights
        w = capped_weights(batch_frequencies(labels, num_classes=2))
        assert w.w_hat.tolist() == [1.0, 1.0]
        lv = weighted_ce_loss(logits, labels, w)
        assert lv.loss == pytest.approx(np.log(2.0), abs=1e-9)

    def test_perfect_prediction_limit(self, rng):
        labels = rng.integers(0, 3, (2, 4, 4))
        logits = np.full((2, 3, 4, 4), -40.0)
        bi, hi, wi = np.ogrid[:2, :4, :4]
        logits[bi, labels, hi, wi] = 40.0
        w = capped_weights(batch_frequencies(labels, num_classes=3))
        assert weighted_ce_loss(logits, labels, w).loss < 1e-10

    def test_loss_nonnegative_and_floored(self):
        logits = np.zeros((1, 2, 2, 2))
        logits[0, 0] = 1e6  # drives true-class log-prob to the floor
        labels = np.ones((1, 2, 2), dtype=int)
        w = capped_weights(np.array([4, 4]))
        lv = weighted_ce_loss(logits, labels, w)
        assert np.isfinite(lv.loss) and lv.loss > 0

    def test_gradient_matches_finite_differences(self, rng):
        for _ in range(20):
            logits = rng.normal(size=(2, 3, 4, 4)) * 2
            labels = rng.integers(0, 3, (2, 4, 4))
            w = capped_weights(batch_frequencies(labels, num_classes=3))
            lv = weighted_ce_loss(logits, labels, w, with_gradient=True)
            fd = fd_gradient(logits, labels, w)
            denom = np.maximum(np.abs(fd), 1e-8)
            assert np.max(np.abs(lv.gradient - fd) / denom) < 1e-4

    def test_gradient_sums_to_zero_per_pixel(self, rng):
        # softmax minus onehot sums to zero over the class axis
        logits = rng.normal(size=(1, 4, 3, 3))
        labels = rng.integers(0, 4, (1, 3, 3))
        w = capped_weights(batch_frequencies(labels, num_classes=4))
        g = weighted_ce_loss(logits, labels, w, with_gradient=True).gradient
        assert np.allclose(g.sum(axis=1), 0.0, atol=1e-15)

    def test_permutation_equivariance(self, rng):
        logits = rng.normal(size=(1, 3, 4, 4))
        labels = rng.integers(0, 3, (1, 4, 4))
        w = capped_weights(batch_frequencies(labels, num_classes=3))
        base = weighted_ce_loss(logits, labels, w).loss
        perm = rng.permutation(16)
        logits_p = logits.reshape(1, 3, 16)[:, :, perm].reshape(1, 3, 4, 4)
        labels_p = labels.reshape(1, 16)[:, perm].reshape(1, 4, 4)
        assert weighted_ce_loss(logits_p, labels_p, w).loss == pytest.approx(base, rel=1e-12)

    def test_balanced_unit_weights_match_plain_ce(self, rng):
        # with all weights 1 the loss is the plain mean cross-entropy
        logits = rng.normal(size=(1, 2, 4, 4))
        labels = np.zeros((1, 4, 4), dtype=int)
        labels[0, 2:] = 1
        w = capped_weights(batch_frequencies(labels, num_classes=2), cap_ratio=1e9)
        logp = log_softmax(logits)
        bi, hi, wi = np.ogrid[:1, :4, :4]
        plain = float(-(logp[bi, labels, hi, wi]).mean())
        assert weighted_ce_loss(logits, labels, w).loss == pytest.approx(plain, rel=1e-12)

    def test_shape_mismatch_raises(self):
        w = capped_weights(np.array([1, 1]))
        with pytest.raises(ShapeMismatch):
            weighted_ce_loss(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3), dtype=int), w)
        with pytest.raises(ShapeMismatch):
            weighted_ce_loss(np.zeros((1, 3, 4, 4)), np.zeros((1, 4, 4), dtype=int), w)
