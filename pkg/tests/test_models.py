import numpy as np
import pytest

from platewaste.errors import InvalidConfig, ShapeMismatch
from platewaste.loss import batch_frequencies, capped_weights, weighted_ce_loss
from platewaste.models import Model, ModelConfig, build, load_checkpoint, save_checkpoint
from platewaste.optim import AdamW


def tally_unet(width, depth=5, in_ch=3, classes=2):
    """Independent closed-form parameter tally from the layer list."""
    ch = [width * 2**i for i in range(depth)]

    def conv(ci, co, k):
        return ci * co * k * k + co

    total = conv(in_ch, ch[0], 3) + conv(ch[0], ch[0], 3)
    for i in range(1, depth):
        total += conv(ch[i - 1], ch[i], 3) + conv(ch[i], ch[i], 3)
    for i in range(depth - 2, -1, -1):
        total += conv(ch[i + 1], ch[i], 2)  # transposed conv has the same count
        total += conv(2 * ch[i], ch[i], 3) + conv(ch[i], ch[i], 3)
    return total + conv(ch[0], classes, 1)


def tally_unetpp(width, depth=5, in_ch=3, classes=2):
    ch = [width * 2**i for i in range(depth)]

    def conv(ci, co, k):
        return ci * co * k * k + co

    total = conv(in_ch, ch[0], 3) + conv(ch[0], ch[0], 3)
    for i in range(1, depth):
        total += conv(ch[i - 1], ch[i], 3) + conv(ch[i], ch[i], 3)
    for j in range(1, depth):
        for i in range(depth - j):
            total += conv(ch[i + 1], ch[i], 2)
            total += conv((j + 1) * ch[i], ch[i], 3) + conv(ch[i], ch[i], 3)
    return total + conv(ch[0], classes, 1)


class TestParamCounts:
    @pytest.mark.parametrize(
        "family,width,millions",
        [("unet", 64, 31.04), ("unet", 32, 7.77), ("unetpp", 64, 36.15), ("unetpp", 32, 9.04)],
    )
    def test_published_counts_within_one_percent(self, family, width, millions):
        model = build(ModelConfig(family=family, base_width=width, num_classes=2), init_seed=0)
        assert model.param_count() == pytest.approx(millions * 1e6, rel=0.01)

    @pytest.mark.parametrize("family,tally", [("unet", tally_unet), ("unetpp", tally_unetpp)])
    @pytest.mark.parametrize("width", [2, 8, 32])
    def test_matches_independent_tally(self, family, tally, width):
        model = build(ModelConfig(family=family, base_width=width, num_classes=3), init_seed=0)
        assert model.param_count() == tally(width, classes=3)

    def test_head_is_one_by_one_projection(self):
        model = build(ModelConfig(family="unet", base_width=64, num_classes=2), init_seed=0)
        assert model.params["head.w"].size + model.params["head.b"].size == 130

    def test_lighter_variant_is_smaller(self):
        for family in ("unet", "unetpp"):
            full = build(ModelConfig(family=family, base_width=16, num_classes=2), 0)
            lite = build(ModelConfig(family=family, base_width=8, num_classes=2), 0)
            assert lite.param_count() < full.param_count()

    def test_nested_exceeds_plain_at_equal_width(self):
        unet = build(ModelConfig(family="unet", base_width=8, num_classes=2), 0)
        unetpp = build(ModelConfig(family="unetpp", base_width=8, num_classes=2), 0)
        assert unetpp.param_count() > unet.param_count()


class TestForward:
    def test_output_matches_input_size(self, rng):
        model = build(
            ModelConfig(family="unet", base_width=4, num_classes=3, input_size=32), init_seed=1
        )
        x = rng.random((2, 3, 32, 32), dtype=np.float32)
        y = model.forward(x)
        assert y.shape == (2, 3, 32, 32)

    def test_small_bottleneck_shape(self, rng):
        model = build(
            ModelConfig(family="unet", base_width=8, num_classes=2, input_size=32), init_seed=1
        )
        z = model.encode(rng.random((1, 3, 32, 32), dtype=np.float32))
        assert z.shape == (1, 128, 2, 2)

    def test_unetpp_shapes(self, rng):
        model = build(
            ModelConfig(family="unetpp", base_width=4, num_classes=2, input_size=16), init_seed=1
        )
        x = rng.random((1, 3, 16, 16), dtype=np.float32)
        assert model.forward(x).shape == (1, 2, 16, 16)

    def test_bad_input_raises(self, rng):
        model = build(ModelConfig(family="unet", base_width=4, num_classes=2, input_size=32), 0)
        with pytest.raises(ShapeMismatch):
            model.forward(rng.random((1, 3, 30, 30), dtype=np.float32))
        with pytest.raises(ShapeMismatch):
            model.forward(rng.random((1, 1, 32, 32), dtype=np.float32))

    def test_invalid_config_rejected(self):
        with pytest.raises(InvalidConfig):
            ModelConfig(family="unet", base_width=4, num_classes=2, input_size=40)
        with pytest.raises(InvalidConfig):
            ModelConfig(family="segnet", base_width=4, num_classes=2)

    def test_predict_labels_argmax(self, rng):
        model = build(ModelConfig(family="unet", base_width=2, num_classes=4, input_size=16), 0)
        x = rng.random((2, 3, 16, 16), dtype=np.float32)
        labels = model.predict_labels(x)
        assert labels.shape == (2, 16, 16)
        assert labels.min() >= 0 and labels.max() < 4


class TestDeterminism:
    def test_rebuild_is_bit_identical(self):
        cfg = ModelConfig(family="unetpp", base_width=4, num_classes=2, input_size=16)
        a, b = build(cfg, init_seed=99), build(cfg, init_seed=99)
        assert list(a.params) == list(b.params)
        for k in a.params:
            assert np.array_equal(a.params[k], b.params[k])

    def test_different_seeds_differ(self):
        cfg = ModelConfig(family="unet", base_width=4, num_classes=2, input_size=16)
        a, b = build(cfg, init_seed=0), build(cfg, init_seed=1)
        assert not np.array_equal(a.params["enc0.c1.w"], b.params["enc0.c1.w"])

    def test_forward_is_deterministic(self, rng):
        model = build(ModelConfig(family="unet", base_width=4, num_classes=2, input_size=16), 5)
        x = rng.random((1, 3, 16, 16), dtype=np.float32)
        assert np.array_equal(model.forward(x), model.forward(x))


class TestGradients:
    @pytest.mark.parametrize("family", ["unet", "unetpp"])
    def test_loss_gradient_matches_finite_differences(self, family, rng):
        cfg = ModelConfig(family=family, base_width=2, num_classes=2, input_size=16)
        model = build(cfg, init_seed=3, dtype=np.float64)
        x = rng.normal(size=(1, 3, 16, 16))
        labels = rng.integers(0, 2, (1, 16, 16))
        weights = capped_weights(batch_frequencies(labels, num_classes=2))

        logits, tape = model.forward_training(x)
        lv = weighted_ce_loss(logits, labels, weights, with_gradient=True)
        grads, _ = model.backward(tape, lv.gradient)

        def loss_now():
            return weighted_ce_loss(model.forward(x), labels, weights).loss

        h = 1e-6
        names = list(model.params)
        worst = 0.0
        for _ in range(30):
            name = names[rng.integers(len(names))]
            p = model.params[name]
            idx = tuple(rng.integers(s) for s in p.shape)
            orig = p[idx]
            p[idx] = orig + h
            lp = loss_now()
            p[idx] = orig - h
            lm = loss_now()
            p[idx] = orig
            fd = (lp - lm) / (2 * h)
            denom = max(abs(fd), abs(grads[name][idx]), 1e-10)
            worst = max(worst, abs(fd - grads[name][idx]) / denom)
        assert worst < 1e-3


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        cfg = ModelConfig(family="unet", base_width=4, num_classes=3, input_size=16)
        model = build(cfg, init_seed=11)
        # dirty the params so we are not just re-deriving the init
        opt = AdamW(lr=1e-3, weight_decay=1e-4)
        grads = {k: rng.normal(size=v.shape).astype(np.float32) for k, v in model.params.items()}
        opt.step(model.params, grads)

        path = tmp_path / "model.npz"
        save_checkpoint(model, path, optimizer=opt, metadata={"best_epoch": 4})
        loaded, meta, opt_state = load_checkpoint(path)

        assert meta == {"best_epoch": 4}
        assert loaded.config == cfg
        for k in model.params:
            assert np.array_equal(loaded.params[k], model.params[k])
        assert opt_state["t"] == 1 and opt_state["weight_decay"] == 1e-4
        for k in opt.m:
            assert np.array_equal(opt_state["m"][k], opt.m[k])

    def test_resumed_optimizer_matches(self, tmp_path, rng):
        cfg = ModelConfig(family="unet", base_width=2, num_classes=2, input_size=16)
        model = build(cfg, init_seed=0)
        opt = AdamW(lr=1e-3, weight_decay=1e-4)
        g = {k: rng.normal(size=v.shape).astype(np.float32) for k, v in model.params.items()}
        opt.step(model.params, {k: v.copy() for k, v in g.items()})
        save_checkpoint(model, tmp_path / "c.npz", optimizer=opt)

        loaded, _, opt_state = load_checkpoint(tmp_path / "c.npz")
        resumed = AdamW(
            lr=opt_state["lr"],
            betas=tuple(opt_state["betas"]),
            eps=opt_state["eps"],
            weight_decay=opt_state["weight_decay"],
        )
        resumed.load_state_dict({"t": opt_state["t"], "m": opt_state["m"], "v": opt_state["v"]})
        opt.step(model.params, {k: v.copy() for k, v in g.items()})
        resumed.step(loaded.params, {k: v.copy() for k, v in g.items()})
        for k in model.params:
            assert np.array_equal(model.params[k], loaded.params[k])

    def test_forward_reproduces_after_load(self, tmp_path, rng):
        cfg = ModelConfig(family="unetpp", base_width=2, num_classes=2, input_size=16)
        model = build(cfg, init_seed=7)
        x = rng.random((1, 3, 16, 16), dtype=np.float32)
        before = model.forward(x)
        save_checkpoint(model, tmp_path / "m.npz")
        loaded, _, _ = load_checkpoint(tmp_path / "m.npz")
        assert np.array_equal(before, loaded.forward(x))
