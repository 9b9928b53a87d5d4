import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pnnkit import _fallback, kernels, pnn
from pnnkit.errors import ConfigError, InvalidInputError, NumericError
from pnnkit.network import DenseNet, init_linear
from pnnkit.training import (
    AdamState,
    TrainConfig,
    adam_step,
    batches,
    cross_entropy,
    finite_difference_audit,
    iterations_per_epoch,
    train,
)


class TestCrossEntropy:
    def test_onehot_is_zero(self):
        loss, _ = cross_entropy(np.eye(3), [0, 1, 2])
        assert loss == 0.0

    @pytest.mark.parametrize("c", [2, 3, 7, 10])
    def test_uniform_is_log_c(self, c):
        loss, _ = cross_entropy(np.full((4, c), 1.0 / c), [0, 1, 0, c - 1])
        assert abs(loss - math.log(c)) < 1e-9

    def test_hand_case(self):
        p = np.array([[0.7, 0.2, 0.1], [0.1, 0.8, 0.1]])
        loss, grad = cross_entropy(p, [0, 1])
        assert abs(loss - (-(math.log(0.7) + math.log(0.8)) / 2)) < 1e-12
        assert abs(loss - 0.28990) < 1e-5
        np.testing.assert_allclose(grad, [[-0.15, 0.1, 0.05], [0.05, -0.1, 0.05]], atol=1e-15)

    def test_floor(self):
        loss, _ = cross_entropy(np.array([[1.0, 0.0], [1.0, 0.0]]), [1, 1])
        assert loss == pytest.approx(-math.log(1e-12))

    def test_label_range(self):
        with pytest.raises(InvalidInputError):
            cross_entropy(np.full((1, 2), 0.5), [2])


def scalar_adam(p, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook Adam written out on Python floats."""
    m = v = 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        p = p - lr * mhat / (math.sqrt(vhat) + eps)
        out.append(p)
    return out


class TestAdam:
    def test_zero_gradient_is_noop(self):
        cfg = TrainConfig(weight_decay=0.0)
        params = {"w": np.array([1.0, -2.0])}
        state = adam_step(params, {"w": np.zeros(2)}, AdamState(), cfg, 1)
        np.testing.assert_array_equal(params["w"], [1.0, -2.0])
        np.testing.assert_array_equal(state.m["w"], 0.0)
        np.testing.assert_array_equal(state.v["w"], 0.0)

    @pytest.mark.parametrize("g", [1e-3, 0.5, -3.0, 100.0])
    def test_first_step_magnitude(self, g):
        cfg = TrainConfig(learning_rate=1e-3, weight_decay=0.0)
        params = {"w": np.array([0.0])}
        adam_step(params, {"w": np.array([g])}, AdamState(), cfg, 1)
        assert abs(params["w"][0]) == pytest.approx(1e-3 * abs(g) / (abs(g) + 1e-8), rel=1e-12)
        assert abs(params["w"][0]) == pytest.approx(1e-3, rel=1e-4)

    def test_three_steps_match_hand_iteration(self):
        cfg = TrainConfig(learning_rate=0.1, weight_decay=0.0)
        params = {"w": np.array([0.5])}
        state = AdamState()
        expected = scalar_adam(0.5, [1.0, 1.0, 1.0], 0.1)
        for t in range(1, 4):
            adam_step(params, {"w": np.array([1.0])}, state, cfg, t)
            assert abs(params["w"][0] - expected[t - 1]) < 1e-12

    def test_coupled_weight_decay(self):
        cfg = TrainConfig(learning_rate=0.1, weight_decay=0.01)
        params = {"w": np.array([2.0])}
        state = AdamState()
        # decay enters the gradient: g_eff = g + wd * p
        p = 2.0
        m = v = 0.0
        for t in range(1, 4):
            g = 0.3 + 0.01 * p
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            p -= 0.1 * (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.999**t)) + 1e-8)
            adam_step(params, {"w": np.array([0.3])}, state, cfg, t)
            assert abs(params["w"][0] - p) < 1e-12

    def test_decoupled_weight_decay(self):
        cfg = TrainConfig(learning_rate=0.1, weight_decay=0.01, decoupled_weight_decay=True)
        params = {"w": np.array([2.0])}
        adam_step(params, {"w": np.array([0.0])}, AdamState(), cfg, 1)
        assert params["w"][0] == pytest.approx(2.0 - 0.1 * 0.01 * 2.0, rel=1e-12)

    def test_batchnorm_params_skip_decay(self):
        cfg = TrainConfig(learning_rate=0.1, weight_decay=0.5)
        params = {"hidden.0.weight": np.ones(3), "hidden.0.gamma": np.ones(3), "hidden.0.beta": np.ones(3)}
        grads = {k: np.zeros(3) for k in params}
        adam_step(params, grads, AdamState(), cfg, 1)
        assert np.all(params["hidden.0.weight"] < 1)
        np.testing.assert_array_equal(params["hidden.0.gamma"], 1.0)
        np.testing.assert_array_equal(params["hidden.0.beta"], 1.0)

    def test_non_finite_names_block(self):
        params = {"classifier.bias": np.zeros(2)}
        with pytest.raises(NumericError, match="classifier.bias"):
            adam_step(params, {"classifier.bias": np.array([0.0, np.nan])}, AdamState(), TrainConfig(), 1)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000), st.booleans())
    def test_backends_agree(self, seed, decoupled):
        rng = np.random.default_rng(seed)
        p0, g = rng.normal(size=50), rng.normal(size=50)
        m0, v0 = rng.normal(size=50), rng.random(50)
        a = [p0.copy(), g, m0.copy(), v0.copy()]
        b = [p0.copy(), g, m0.copy(), v0.copy()]
        args = (0.01, 0.9, 0.999, 0.3, 0.02, 1e-8, 0.1, decoupled)
        kernels.adam_update(*a, *args)
        _fallback.adam_update(*b, *args)
        for x, y in zip(a, b):
            np.testing.assert_allclose(x, y, rtol=1e-14, atol=1e-15)


class TestBatches:
    def test_merge_single_remainder(self):
        sizes = [len(b) for b in batches(17, 8, None)]
        assert sizes == [8, 9]
        assert iterations_per_epoch(17, 8) == 2

    def test_no_merge_needed(self):
        assert [len(b) for b in batches(18, 8, None)] == [8, 8, 2]
        assert iterations_per_epoch(18, 8) == 3

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 300), st.integers(2, 40))
    def test_partition(self, n, b):
        if b > n:
            b = n
        chunks = batches(n, b, np.random.default_rng(n))
        assert sorted(np.concatenate(chunks).tolist()) == list(range(n))
        assert all(len(c) >= 2 for c in chunks)
        assert len(chunks) == iterations_per_epoch(n, b)


def separable_set(n_per_class=12, k=10, seed=0):
    rng = np.random.default_rng(seed)
    x0 = rng.random((n_per_class, k)) + np.r_[2.0, np.zeros(k - 1)]
    x1 = rng.random((n_per_class, k)) + np.r_[np.zeros(k - 1), 2.0]
    return np.vstack([x0, x1]), np.repeat([0, 1], n_per_class)


class TestTrain:
    def test_deterministic(self):
        x, y = separable_set()
        cfg = TrainConfig(epochs=3, seed=5)
        m1, h1 = train(pnn.init(pnn.PNNConfig(k=10, hidden=4, depth=2), 1), x, y, cfg)
        m2, h2 = train(pnn.init(pnn.PNNConfig(k=10, hidden=4, depth=2), 1), x, y, cfg)
        for a, b in zip(m1.tensors(), m2.tensors()):
            np.testing.assert_array_equal(a, b)
        assert h1.to_text() == h2.to_text()

    def test_history_lengths(self):
        x, y = separable_set(n_per_class=9)  # 18 samples, batch 8 -> 3 iterations
        _, hist = train(pnn.init(pnn.PNNConfig(k=10, hidden=3, depth=2), 0), x, y, TrainConfig(epochs=4))
        assert len(hist.loss) == len(hist.accuracy) == 4 * 3
        assert hist.epoch_boundaries == [3, 6, 9, 12]
        assert hist.epoch_of_iteration == [1] * 3 + [2] * 3 + [3] * 3 + [4] * 3
        norm = hist.normalized_grad_sum()
        assert min(norm) == 0.0 and max(norm) == 1.0

    def test_history_text_columns(self):
        x, y = separable_set(n_per_class=4)
        _, hist = train(pnn.init(pnn.PNNConfig(k=10, hidden=3, depth=1), 0), x, y, TrainConfig(epochs=2))
        lines = hist.to_text().splitlines()
        assert lines[0] == "iteration\tepoch\tloss\ttrain_accuracy"
        assert "epoch\tgrad_sum\tgrad_sum_normalized" in lines

    def test_pnn_reaches_full_train_accuracy(self):
        x, y = separable_set(n_per_class=20, k=32, seed=1)
        model = pnn.init(pnn.PNNConfig(k=32, hidden=8, depth=3), 3)
        model, _ = train(model, x, y, TrainConfig(learning_rate=1e-3, epochs=30))
        assert np.all(model.predict_proba(x).argmax(axis=1) == y)

    def test_linear_softmax_sanity(self):
        x, y = separable_set(n_per_class=20, k=8, seed=2)
        rng = np.random.default_rng(0)
        model = DenseNet(8, [], init_linear(rng, 8, 2, np.float64), [[0]])
        model, _ = train(model, x, y, TrainConfig(learning_rate=1e-2, weight_decay=0.0, epochs=30))
        assert np.all(model.predict_proba(x).argmax(axis=1) == y)

    def test_loss_decreases(self):
        x, y = separable_set(n_per_class=20, k=16, seed=3)
        _, hist = train(pnn.init(pnn.PNNConfig(k=16, hidden=6, depth=3), 0), x, y,
                        TrainConfig(learning_rate=1e-3, epochs=20))
        per_epoch = hist.epoch_mean_loss()
        assert per_epoch[-1] < per_epoch[0]

    def test_stop_at_perfect(self):
        x, y = separable_set(n_per_class=20, k=8, seed=2)
        cfg = TrainConfig(learning_rate=1e-2, epochs=50, stop_at_perfect_train_accuracy=True)
        _, hist = train(pnn.init(pnn.PNNConfig(k=8, hidden=4, depth=2), 0), x, y, cfg)
        assert hist.epochs < 50

    def test_validation(self):
        x, y = separable_set(n_per_class=3)
        model = pnn.init(pnn.PNNConfig(k=10, hidden=2, depth=1))
        with pytest.raises(InvalidInputError):
            train(model, x, y, TrainConfig(batch_size=7))
        with pytest.raises(InvalidInputError):
            train(model, x[:0], y[:0])
        with pytest.raises(InvalidInputError):
            train(model, x[:3], y[:3], TrainConfig(batch_size=2))  # class 1 missing
        with pytest.raises(ConfigError):
            TrainConfig(batch_size=1)
        with pytest.raises(ConfigError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ConfigError):
            TrainConfig(epochs=0)


class TestAudit:
    def test_step_size_behaviour(self):
        model = pnn.init(pnn.PNNConfig(k=16, hidden=4, depth=3, classes=3), 0)
        rng = np.random.default_rng(1)
        x, y = rng.normal(size=(4, 16)), np.array([0, 1, 2, 1])
        fine = finite_difference_audit(model, x, y, h=1e-6)
        coarse = finite_difference_audit(model, x, y, h=1e-2)
        assert fine < 1e-5
        assert coarse > fine

    def test_leaves_model_unchanged(self):
        model = pnn.init(pnn.PNNConfig(k=6, hidden=2, depth=2, classes=2), 0)
        before = [t.copy() for t in model.tensors()]
        finite_difference_audit(model, np.random.default_rng(0).normal(size=(3, 6)), np.array([0, 1, 0]))
        for a, b in zip(before, model.tensors()):
            np.testing.assert_array_equal(a, b)
