import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from floodwatch import raster, segnet, synthetic
from floodwatch.errors import (
    DimensionMismatch,
    EmptyBatch,
    EmptyDataset,
    NonFiniteInput,
    ShapeMismatch,
)
from oracles import (
    adam_reference,
    brute_focal_loss,
    brute_jaccard_loss,
    max_relative_error,
    numeric_gradient,
)

LN2 = 0.6931471805599453


def uniform_probs(h, w, k=4):
    return np.full((h, w, k), 1.0 / k)


def onehot(labels, k=4):
    return np.eye(k)[labels]


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_allclose(segnet.softmax(np.zeros(4)), 0.25)

    def test_dominant_no_overflow(self):
        p = segnet.softmax(np.array([1000.0, 0, 0, 0]))
        assert np.all(np.isfinite(p))
        np.testing.assert_allclose(p, [1, 0, 0, 0], atol=1e-12)

    def test_matches_direct_formula(self):
        # mpmath, 30 digits
        expected = [0.0320586032800849884508, 0.0871443187420325674895,
                    0.236882818089910132298, 0.643914259887972311762]
        np.testing.assert_allclose(segnet.softmax(np.array([1.0, 2, 3, 4])), expected,
                                   rtol=0, atol=1e-9)

    def test_non_finite(self):
        with pytest.raises(NonFiniteInput):
            segnet.softmax(np.array([np.nan, 0, 0, 0]))

    @given(st.lists(st.floats(-500, 500), min_size=4, max_size=4))
    def test_normalized(self, logits):
        p = segnet.softmax(np.array(logits))
        assert abs(p.sum() - 1) < 1e-6
        assert np.all((p >= 0) & (p <= 1))


class TestFocal:
    def test_perfect(self):
        labels = np.random.default_rng(0).integers(0, 4, (5, 6))
        assert segnet.focal_loss(onehot(labels), labels, 2.0) == 0.0

    def test_gamma_zero_is_cross_entropy(self):
        probs = np.zeros((3, 3, 4))
        probs[..., 1] = 0.5
        probs[..., 2] = 0.5
        labels = np.ones((3, 3), int)
        assert segnet.focal_loss(probs, labels, 0.0) == pytest.approx(LN2, abs=1e-12)

    def test_gamma_two(self):
        probs = np.zeros((3, 3, 4))
        probs[..., 0] = 0.5
        probs[..., 3] = 0.5
        labels = np.zeros((3, 3), int)
        assert segnet.focal_loss(probs, labels, 2.0) == pytest.approx(0.173286795139986327, abs=1e-12)

    @settings(max_examples=30)
    @given(seed=st.integers(0, 10 ** 6), gamma=st.sampled_from([0.0, 0.5, 1.0, 2.0, 5.0]))
    def test_against_loops(self, seed, gamma):
        rng = np.random.default_rng(seed)
        probs = segnet.softmax(rng.normal(size=(4, 5, 4)))
        labels = rng.integers(0, 4, (4, 5))
        assert segnet.focal_loss(probs, labels, gamma) == pytest.approx(
            brute_focal_loss(probs, labels, gamma), rel=1e-12)
        if gamma == 0.0:
            ce = -np.mean(np.log(np.take_along_axis(probs, labels[..., None], -1)))
            assert abs(segnet.focal_loss(probs, labels, 0.0) - ce) < 1e-9

    def test_zero_probability_clamped(self):
        probs = np.zeros((1, 2, 4))
        probs[..., 0] = 1.0
        labels = np.array([[1, 1]])
        assert segnet.focal_loss(probs, labels, 2.0) == pytest.approx(-math.log(1e-12))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            segnet.focal_loss(uniform_probs(2, 2), np.zeros((3, 2), int))


class TestJaccard:
    def test_perfect(self):
        labels = np.random.default_rng(1).integers(0, 4, (6, 6))
        assert segnet.jaccard_loss(onehot(labels), labels) == 0.0

    def test_disjoint(self):
        labels = np.zeros((4, 4), int)
        labels[:2] = 1
        pred = np.where(labels == 0, 2, 3)
        assert segnet.jaccard_loss(onehot(pred), labels) == pytest.approx(1.0)

    def test_uniform_vs_single_class(self):
        labels = np.zeros((8, 8), int)
        probs = uniform_probs(8, 8)
        # class 0: I = 16, U = 16 + 64 - 16 = 64 -> 0.25; other classes J = 0
        assert segnet.jaccard_loss(probs, labels) == pytest.approx(0.9375, abs=1e-12)
        assert segnet.jaccard_loss(probs, labels) == pytest.approx(
            brute_jaccard_loss(probs, labels), abs=1e-12)

    def test_absent_class_counts_as_one(self):
        labels = np.zeros((2, 2), int)
        probs = onehot(labels)
        # classes 1..3 have no mass and no truth; perfect class 0
        assert segnet.jaccard_loss(probs, labels) == 0.0

    @settings(max_examples=30)
    @given(seed=st.integers(0, 10 ** 6))
    def test_range_and_oracle(self, seed):
        rng = np.random.default_rng(seed)
        probs = segnet.softmax(rng.normal(scale=3, size=(5, 4, 4)))
        labels = rng.integers(0, 4, (5, 4))
        loss = segnet.jaccard_loss(probs, labels)
        assert 0.0 <= loss <= 1.0
        assert loss == pytest.approx(brute_jaccard_loss(probs, labels), abs=1e-12)

    def test_zero_only_for_match(self):
        labels = np.zeros((3, 3), int)
        pred = labels.copy()
        pred[0, 0] = 1
        assert segnet.jaccard_loss(onehot(pred), labels) > 0


class TestCombined:
    def test_perfect(self):
        labels = np.random.default_rng(2).integers(0, 4, (4, 4))
        assert segnet.combined_loss(onehot(labels), labels, segnet.TrainConfig()) == 0.0

    def test_focal_only(self):
        rng = np.random.default_rng(3)
        probs = segnet.softmax(rng.normal(size=(4, 4, 4)))
        labels = rng.integers(0, 4, (4, 4))
        cfg = segnet.TrainConfig(loss_weights=(1, 0))
        assert segnet.combined_loss(probs, labels, cfg) == segnet.focal_loss(probs, labels, 2.0)

    def test_additive(self):
        labels = np.zeros((8, 8), int)
        # -(0.75**2) ln 0.25 + 0.9375, mpmath
        got = segnet.combined_loss(uniform_probs(8, 8), labels, segnet.TrainConfig(gamma=2))
        assert got == pytest.approx(1.71729057812993847, abs=1e-12)

    @pytest.mark.parametrize("kw", [dict(gamma=-1), dict(loss_weights=(0, 0)),
                                    dict(loss_weights=(-1, 1)), dict(batch_size=0)])
    def test_config_invariants(self, kw):
        with pytest.raises(ValueError):
            segnet.TrainConfig(**kw)


class TestConfusionIoU:
    def test_identical(self):
        m = np.random.default_rng(0).integers(0, 4, (10, 10))
        c = segnet.confusion(m, m)
        assert not c.fp.any() and not c.fn.any()
        per, mean = segnet.iou(c)
        assert mean == 1.0
        assert np.all(per[~np.isnan(per)] == 1.0)

    def test_two_pixels(self):
        c = segnet.confusion(np.array([[0, 1]]), np.array([[0, 0]]))
        assert (c.tp[0], c.fp[0], c.fn[0]) == (1, 0, 1)
        assert (c.tp[1], c.fp[1], c.fn[1]) == (0, 1, 0)

    def test_swap_symmetry(self):
        rng = np.random.default_rng(5)
        a, b = rng.integers(0, 4, (2, 7, 7))
        ab, ba = segnet.confusion(a, b), segnet.confusion(b, a)
        assert np.array_equal(ab.fp, ba.fn) and np.array_equal(ab.fn, ba.fp)
        assert np.array_equal(ab.tp, ba.tp)

    def test_half_and_half(self):
        truth = np.zeros((2, 2), int)
        truth[1] = 1
        per, mean = segnet.iou(segnet.confusion(np.zeros((2, 2), int), truth))
        assert per[0] == 0.5 and per[1] == 0.0
        assert mean == 0.25
        assert np.isnan(per[2]) and np.isnan(per[3])

    def test_formula(self):
        c = segnet.ConfusionCounts(np.array([3]), np.array([1]), np.array([2]))
        assert segnet.iou(c)[0][0] == 0.5

    def test_mismatch(self):
        with pytest.raises(DimensionMismatch):
            segnet.confusion(np.zeros((2, 2)), np.zeros((2, 3)))

    @given(seed=st.integers(0, 10 ** 6))
    def test_counts_consistent(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.integers(0, 4, (2, 6, 5))
        c = segnet.confusion(a, b)
        assert c.tp.sum() + c.fp.sum() == a.size
        assert c.tp.sum() + c.fn.sum() == a.size
        per, _ = segnet.iou(c)
        ok = per[~np.isnan(per)]
        assert np.all((ok >= 0) & (ok <= 1))


class TestForward:
    def test_zero_head_uniform(self):
        net = segnet.ToySegNet.init(0, width=4, zero_head=True)
        p = segnet.forward(net, np.zeros((8, 8, 3), np.uint8))
        np.testing.assert_allclose(p, 0.25)

    def test_deterministic(self):
        img = np.random.default_rng(0).integers(0, 256, (16, 16, 3), dtype=np.uint8)
        a = segnet.forward(segnet.ToySegNet.init(7), img)
        b = segnet.forward(segnet.ToySegNet.init(7), img)
        assert a.tobytes() == b.tobytes()

    def test_shape_256(self):
        img = np.random.default_rng(0).integers(0, 256, (256, 256, 3), dtype=np.uint8)
        p = segnet.forward(segnet.ToySegNet.init(0), img)
        assert p.shape == (256, 256, 4)
        np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-6)

    def test_odd_dims(self):
        with pytest.raises(DimensionMismatch):
            segnet.forward(segnet.ToySegNet.init(0), np.zeros((7, 8, 3), np.uint8))

    def test_param_count(self):
        f = 16
        expected = 27 * f + f + 9 * f * f + f + 2 * f * 4 + 4
        assert segnet.ToySegNet.init(0, width=f).num_parameters == expected


class TestGradients:
    @pytest.mark.parametrize("seed", range(5))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        net = segnet.ToySegNet.init(seed, width=3)
        x = rng.uniform(-1, 1, (2, 4, 4, 3))
        y = rng.integers(0, 4, (2, 4, 4))
        cfg = segnet.TrainConfig(gamma=float(rng.choice([0.0, 1.0, 2.0, 3.5])))
        _, analytic = segnet.gradients(net, x, y, cfg)
        numeric = numeric_gradient(
            lambda: segnet.combined_loss(segnet.forward(net, x), y, cfg), net.params)
        assert max_relative_error(analytic, numeric) < 1e-4

    def test_single_parameter_slope(self):
        rng = np.random.default_rng(11)
        net = segnet.ToySegNet.init(11, width=4)
        x = rng.uniform(-1, 1, (1, 6, 6, 3))
        y = rng.integers(0, 4, (1, 6, 6))
        cfg = segnet.TrainConfig()
        _, g = segnet.gradients(net, x, y, cfg)
        w = net.params["w2"]
        idx = (1, 2, 0, 3)
        old = w[idx]
        w[idx] = old + 1e-4
        up = segnet.combined_loss(segnet.forward(net, x), y, cfg)
        w[idx] = old - 1e-4
        down = segnet.combined_loss(segnet.forward(net, x), y, cfg)
        w[idx] = old
        assert g["w2"][idx] == pytest.approx((up - down) / 2e-4, rel=1e-4)

    def test_batch_is_mean_of_examples(self):
        rng = np.random.default_rng(4)
        net = segnet.ToySegNet.init(4, width=4)
        x = rng.uniform(-1, 1, (2, 4, 6, 3))
        y = rng.integers(0, 4, (2, 4, 6))
        cfg = segnet.TrainConfig()
        loss, g = segnet.gradients(net, x, y, cfg)
        l0, g0 = segnet.gradients(net, x[:1], y[:1], cfg)
        l1, g1 = segnet.gradients(net, x[1:], y[1:], cfg)
        assert loss == pytest.approx((l0 + l1) / 2, rel=1e-12)
        for k in g:
            np.testing.assert_allclose(g[k], (g0[k] + g1[k]) / 2, rtol=1e-10, atol=1e-14)

    def test_vanishes_at_minimum(self):
        net = segnet.ToySegNet.init(0, width=4, zero_head=True)
        net.params["b3"][:] = [60.0, 0, 0, 0]
        x = np.zeros((1, 4, 4, 3))
        y = np.zeros((1, 4, 4), int)
        cfg = segnet.TrainConfig()
        loss, g = segnet.gradients(net, x, y, cfg)
        probs = segnet.forward(net, x)
        assert segnet.focal_loss(probs, y, cfg.gamma) < 1e-20
        # classes 1..3 are absent from the truth but keep ~e-60 mass: J = 0 each, a flat term
        assert loss == pytest.approx(0.75, abs=1e-12)
        assert math.sqrt(sum(float((v ** 2).sum()) for v in g.values())) < 1e-12

    def test_empty_batch(self):
        with pytest.raises(EmptyBatch):
            segnet.gradients(segnet.ToySegNet.init(0), np.zeros((0, 4, 4, 3)),
                             np.zeros((0, 4, 4), int), segnet.TrainConfig())


class TestAdam:
    def _one(self, value):
        return {"w": np.array([value])}

    def test_zero_gradient(self):
        params = self._one(1.5)
        mom = {"m": self._one(0.2), "v": self._one(0.04)}
        new, m2 = segnet.adam_step(params, self._one(0.0), mom, segnet.TrainConfig(), t=3)
        assert m2["m"]["w"][0] == pytest.approx(0.9 * 0.2)
        assert m2["v"]["w"][0] == pytest.approx(0.999 * 0.04)
        fresh = segnet.init_moments(params)
        same, _ = segnet.adam_step(params, self._one(0.0), fresh, segnet.TrainConfig(), t=1)
        assert same["w"][0] == 1.5

    @pytest.mark.parametrize("g", [3.0, -0.02, 1e-3])
    def test_first_step_sign(self, g):
        params = self._one(0.0)
        new, _ = segnet.adam_step(params, self._one(g), segnet.init_moments(params),
                                  segnet.TrainConfig(), t=1)
        assert new["w"][0] == pytest.approx(-1e-3 * math.copysign(1, g), rel=1e-4)

    def test_reference_sequence(self):
        grads = [0.3, -0.1]
        ref = adam_reference(2.0, grads)
        params = self._one(2.0)
        mom = segnet.init_moments(params)
        for t, g in enumerate(grads, start=1):
            params, mom = segnet.adam_step(params, self._one(g), mom, segnet.TrainConfig(), t)
            w, m, v = ref[t - 1]
            assert params["w"][0] == pytest.approx(w, abs=1e-15)
            assert mom["m"]["w"][0] == pytest.approx(m, abs=1e-15)
            assert mom["v"]["w"][0] == pytest.approx(v, abs=1e-15)

    def test_shape_mismatch(self):
        params = {"w": np.zeros(3)}
        with pytest.raises(ShapeMismatch):
            segnet.adam_step(params, {"w": np.zeros(2)}, segnet.init_moments(params),
                             segnet.TrainConfig(), 1)


@pytest.fixture(scope="module")
def small_data():
    images, masks = synthetic.make_dataset(48, 16, seed=5)
    return images, masks, raster.split_dataset(range(48), 0.75, seed=5)


class TestTrain:
    def test_zero_epochs(self, small_data):
        images, masks, split = small_data
        net = segnet.ToySegNet.init(0)
        state = segnet.train(images, masks, split, segnet.TrainConfig(epochs=0), net=net)
        assert state.history == []
        for k in net.params:
            assert np.array_equal(state.net.params[k], net.params[k])

    def test_loss_decreases(self, small_data):
        images, masks, split = small_data
        cfg = segnet.TrainConfig(epochs=4, learning_rate=1e-2, seed=1)
        state = segnet.train(images, masks, split, cfg)
        assert len(state.history) == 4
        assert state.history[-1].train_loss < state.history[0].train_loss

    def test_checkpoints_and_resume(self, small_data, tmp_path):
        images, masks, split = small_data
        cfg = segnet.TrainConfig(epochs=3, learning_rate=1e-2, seed=2, batch_size=8)
        full = segnet.train(images, masks, split, cfg, checkpoint_dir=tmp_path)
        assert sorted(p.name for p in tmp_path.iterdir()) == [
            "epoch_001.npz", "epoch_002.npz", "epoch_003.npz"]
        state, saved_cfg = segnet.load_checkpoint(tmp_path / "epoch_001.npz")
        assert saved_cfg == cfg and state.epoch == 1
        resumed = segnet.train(images, masks, split, saved_cfg, resume=state)
        for k in full.net.params:
            assert full.net.params[k].tobytes() == resumed.net.params[k].tobytes()
        assert resumed.history == full.history

    def test_deterministic(self, small_data):
        images, masks, split = small_data
        cfg = segnet.TrainConfig(epochs=1, seed=9)
        a = segnet.train(images, masks, split, cfg)
        b = segnet.train(images, masks, split, cfg)
        assert all(a.net.params[k].tobytes() == b.net.params[k].tobytes() for k in a.net.params)

    def test_empty(self, small_data):
        images, masks, _ = small_data
        with pytest.raises(EmptyDataset):
            segnet.train(images, masks, raster.DatasetSplit([], [0], 0.75, 0),
                         segnet.TrainConfig(epochs=1))

    def test_history_csv(self, small_data, tmp_path):
        images, masks, split = small_data
        state = segnet.train(images, masks, split, segnet.TrainConfig(epochs=2, seed=3))
        path = tmp_path / "hist.csv"
        segnet.write_history_csv(path, state.history)
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,split,loss,miou"
        assert [l.split(",")[:2] for l in lines[1:]] == [
            ["1", "train"], ["1", "val"], ["2", "train"], ["2", "val"]]
