import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from confident_ecg.nn import BackboneConfig, Network, PlainCNNConfig
from confident_ecg.optim import (
    LR_FLOOR,
    AdamState,
    DivergenceError,
    TrainConfig,
    TrainReport,
    adam_step,
    plateau_lr,
    softmax,
    softmax_cross_entropy,
    train,
)


class TestLoss:
    def test_uniform_logits(self):
        for label in range(5):
            loss, _ = softmax_cross_entropy(np.zeros((1, 5)), [label])
            assert loss == pytest.approx(math.log(5), abs=1e-12)

    def test_large_margin_is_stable(self):
        logits = np.zeros((2, 5))
        logits[[0, 1], [3, 1]] = 1e4
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            loss, grad = softmax_cross_entropy(logits, [3, 1])
        assert loss < 1e-6
        assert np.all(np.isfinite(grad))

    def test_gradient_finite_differences(self):
        rng = np.random.default_rng(0)
        logits = rng.standard_normal((4, 5))
        labels = rng.integers(0, 5, 4)
        _, grad = softmax_cross_entropy(logits, labels)
        eps = 1e-6
        numeric = np.zeros_like(logits)
        for idx in np.ndindex(logits.shape):
            up, down = logits.copy(), logits.copy()
            up[idx] += eps
            down[idx] -= eps
            numeric[idx] = (softmax_cross_entropy(up, labels)[0] - softmax_cross_entropy(down, labels)[0]) / (2 * eps)
        rel = np.abs(grad - numeric) / np.maximum(np.maximum(np.abs(grad), np.abs(numeric)), 1e-8)
        assert rel.max() < 1e-6

    def test_gradient_rows_sum_to_zero(self):
        _, grad = softmax_cross_entropy(np.random.default_rng(1).standard_normal((3, 5)), [0, 1, 2])
        np.testing.assert_allclose(grad.sum(axis=1), 0, atol=1e-15)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            softmax_cross_entropy(np.zeros((1, 5)), [5])

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.01, 500))
    def test_softmax_rows_sum_to_one(self, seed, scale):
        p = softmax(scale * np.random.default_rng(seed).standard_normal((6, 5)))
        np.testing.assert_allclose(p.sum(axis=1), 1, atol=1e-12)


class TestAdam:
    def test_first_step_closed_form(self):
        params = {"w": np.array([0.5])}
        adam_step(params, {"w": np.array([1.0])}, state := AdamState(), 0.002)
        assert state.t == 1
        assert params["w"][0] == pytest.approx(0.5 - 0.002 / (1 + 1e-8), abs=1e-15)

    def test_zero_gradient_leaves_parameters(self):
        params = {"w": np.array([1.0, -2.0])}
        state = AdamState()
        for _ in range(50):
            adam_step(params, {"w": np.zeros(2)}, state, 0.01)
        np.testing.assert_array_equal(params["w"], [1.0, -2.0])
        assert state.t == 50

    def test_quadratic_matches_scalar_reference(self):
        params = {"w": np.array([1.0])}
        state = AdamState()
        w_ref, m, v = 1.0, 0.0, 0.0
        path = [1.0]
        for t in range(1, 101):
            adam_step(params, {"w": 2 * params["w"]}, state, 0.1)
            g = 2 * w_ref
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            w_ref -= 0.1 * (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.999**t)) + 1e-8)
            assert params["w"][0] == pytest.approx(w_ref, abs=1e-12)
            path.append(params["w"][0])
        path = np.array(path)
        # momentum carries w past the minimum, so |w| is monotone only until
        # the first sign change; after that the swing amplitude decays
        first_cross = int(np.argmax(path < 0))
        assert np.all(np.diff(np.abs(path[:first_cross])) < 0)
        swings = [np.abs(seg).max() for seg in np.split(path, np.flatnonzero(np.diff(np.sign(path))) + 1)[1:-1]]
        assert all(b < a for a, b in zip(swings, swings[1:]))
        assert abs(path[-1]) < 0.1

    def test_divergence_names_parameter(self):
        params = {"a": np.zeros(2), "b": np.zeros(2)}
        with pytest.raises(DivergenceError, match="divergence detected in gradient of b") as exc:
            adam_step(params, {"a": np.ones(2), "b": np.array([1.0, np.nan])}, AdamState(), 0.1)
        assert exc.value.parameter == "b"
        np.testing.assert_array_equal(params["a"], 0)

    def test_state_tensor_round_trip(self):
        params = {"w": np.ones(3)}
        state = AdamState()
        adam_step(params, {"w": np.arange(3.0)}, state, 0.1)
        back = AdamState.from_tensors(state.tensors(), params)
        assert back.t == 1
        np.testing.assert_array_equal(back.m["w"], state.m["w"])
        np.testing.assert_array_equal(back.v["w"], state.v["w"])


class TestPlateau:
    cfg = TrainConfig()

    def test_improving_history_keeps_rate(self):
        hist = list(np.linspace(0.1, 0.9, 30))
        assert all(plateau_lr(hist[:k], self.cfg) == 0.002 for k in range(31))

    def test_flat_history_halves_every_patience_epochs(self):
        flat = [0.5] * 12
        rates = [plateau_lr(flat[:k], self.cfg) for k in range(13)]
        assert rates[:5] == [0.002] * 5
        assert rates[5:10] == [0.001] * 5
        assert rates[10:] == [0.0005] * 3

    def test_rate_below_floor_is_not_raised(self):
        assert plateau_lr([0.5] * 20, TrainConfig(learning_rate=1e-9)) == 1e-9

    def test_floor(self):
        flat = [0.5] * 1000
        rates = [plateau_lr(flat[:k], self.cfg) for k in range(0, 1001, 7)]
        assert min(rates) == LR_FLOOR
        assert all(b <= a for a, b in zip(rates, rates[1:]))

    def test_improvement_resets_patience(self):
        hist = [0.5] * 4 + [0.6] * 6
        assert plateau_lr(hist[:9], self.cfg) == 0.002
        assert plateau_lr(hist, self.cfg) == 0.001

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0, 1), max_size=60))
    def test_never_increases(self, hist):
        rates = [plateau_lr(hist[:k], self.cfg) for k in range(len(hist) + 1)]
        assert all(b <= a for a, b in zip(rates, rates[1:]))
        assert all(r >= LR_FLOOR for r in rates)


def toy_set(n_per_class=40, length=64, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(length)
    xs, ys = [], []
    for i in range(n_per_class):
        phase = rng.uniform(0, 2 * np.pi)
        period = rng.uniform(12, 20)
        xs.append(np.sin(2 * np.pi * t / period + phase))
        xs.append(np.sign(np.sin(2 * np.pi * t / period + phase)))
        ys += [0, 1]
    x = np.array(xs)[:, None, :] + 0.05 * rng.standard_normal((2 * n_per_class, 1, length))
    return x, np.array(ys)


SMALL_CNN = PlainCNNConfig(filters=(4, 8, 8), kernel_size=3, num_categories=2)


class TestTrain:
    def test_separable_toy_reaches_full_accuracy(self):
        x, y = toy_set()
        model = Network.create(SMALL_CNN, seed=0)
        _, report = train(model, x, y, config=TrainConfig(epochs=20, batch_size=16, learning_rate=0.01), rng=np.random.default_rng(0))
        assert len(report.epochs) == 20
        assert report.epochs[-1].train_acc == 1.0
        assert report.seconds > 0

    def test_bitwise_determinism(self):
        x, y = toy_set(10)
        cfg = BackboneConfig(stem_filters=4, num_blocks=2, filter_schedule=(4, 4), num_categories=2)
        runs = []
        for _ in range(2):
            model = Network.create(cfg, seed=1)
            model, report = train(model, x, y, x[:6], y[:6], TrainConfig(epochs=3, batch_size=7), np.random.default_rng(5))
            runs.append((model, report))
        (a, ra), (b, rb) = runs
        for k in a.params:
            assert a.params[k].tobytes() == b.params[k].tobytes()
        assert ra.epochs == rb.epochs

    def test_zero_epochs(self):
        x, y = toy_set(4)
        model = Network.create(SMALL_CNN, seed=0)
        before = {k: v.copy() for k, v in model.params.items()}
        _, report = train(model, x, y, config=TrainConfig(epochs=0))
        assert report.epochs == []
        assert all(np.array_equal(before[k], model.params[k]) for k in before)

    def test_overfits_one_batch(self):
        x, y = toy_set(8)
        model = Network.create(SMALL_CNN, seed=2)
        _, report = train(model, x, y, config=TrainConfig(epochs=10, batch_size=len(x), learning_rate=1e-3, shuffle=False))
        losses = [r.loss for r in report.epochs]
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_learning_rate_sequence_and_csv(self, tmp_path):
        x, y = toy_set(6)
        model = Network.create(SMALL_CNN, seed=0)
        cfg = TrainConfig(epochs=12, batch_size=4, learning_rate=4e-6, plateau_patience=2)
        _, report = train(model, x, y, x, y, cfg, np.random.default_rng(0))
        lrs = report.learning_rates
        assert all(b <= a for a, b in zip(lrs, lrs[1:]))
        assert lrs[0] == 4e-6 and lrs[-1] == LR_FLOOR
        report.to_csv(tmp_path / "r.csv")
        rows = (tmp_path / "r.csv").read_text().splitlines()
        assert rows[0] == "epoch,loss,train_acc,val_acc,lr"
        assert len(rows) == 13

    def test_divergence_aborts_with_partial_report(self):
        x, y = toy_set(4)
        model = Network.create(SMALL_CNN, seed=0)
        calls = []

        def poison(record, m):
            calls.append(record.epoch)
            if record.epoch == 2:
                m.params["head.weight"][...] = np.nan

        with pytest.raises(DivergenceError) as exc:
            train(model, x, y, config=TrainConfig(epochs=5, batch_size=8), on_epoch=poison)
        assert isinstance(exc.value.report, TrainReport)
        assert len(exc.value.report.epochs) == 2

    def test_empty_training_set(self):
        with pytest.raises(ValueError):
            train(Network.create(SMALL_CNN), np.zeros((0, 1, 16)), np.zeros(0, int))
