import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedsel.nn import (
    Architecture,
    LabeledDataset,
    ModelParams,
    accuracy,
    ce_gradient,
    ce_loss,
    forward_probs,
    init_params,
    sgd_train,
    zero_params,
)


def _per_sample_ce(arch, w, x, y):
    """Straight-line cross-entropy oracle: loops and log-sum-exp, logistic arch only."""
    d, n = arch.input_dim, arch.num_classes
    total = 0.0
    for row, label in zip(x, y):
        z = [w[d * n + c] + sum(row[f] * w[f * n + c] for f in range(d)) for c in range(n)]
        zmax = max(z)
        lse = zmax + math.log(sum(math.exp(v - zmax) for v in z))
        total += lse - z[label]
    return total / len(y)


def _margin_params(arch, margin, cls=0):
    """Logistic params whose bias favours ``cls`` by ``margin`` nats."""
    w = np.zeros(arch.num_params)
    w[arch.input_dim * arch.num_classes + cls] = margin
    return ModelParams(arch, w)


def _random_data(rng, m, d, n):
    return LabeledDataset(rng.normal(size=(m, d)), rng.integers(0, n, size=m))


class TestInit:
    def test_deterministic(self):
        arch = Architecture(4, 3)
        a, b = init_params(arch, 7), init_params(arch, 7)
        np.testing.assert_array_equal(a.weights, b.weights)

    def test_seed_sensitive(self):
        arch = Architecture(4, 3)
        assert not np.array_equal(init_params(arch, 7).weights, init_params(arch, 8).weights)

    def test_range(self):
        w = init_params(Architecture(16, 10, 8), 3).weights
        assert w.min() >= -0.05 and w.max() < 0.05

    def test_param_count_logistic(self):
        # 4*3 weights + 3 biases
        assert Architecture(4, 3).num_params == 15
        assert init_params(Architecture(4, 3), 0).weights.shape == (15,)

    def test_param_count_hidden(self):
        # 4*5 + 5 + 5*3 + 3
        assert Architecture(4, 3, 5).num_params == 43

    @pytest.mark.parametrize("kw", [dict(input_dim=0, num_classes=3), dict(input_dim=2, num_classes=1),
                                    dict(input_dim=2, num_classes=3, hidden_dim=-1)])
    def test_invalid_arch(self, kw):
        with pytest.raises(ValueError):
            Architecture(**kw)

    def test_params_reject_wrong_length_and_nan(self):
        arch = Architecture(2, 2)
        with pytest.raises(ValueError):
            ModelParams(arch, np.zeros(5))
        bad = np.zeros(arch.num_params)
        bad[0] = np.nan
        with pytest.raises(ValueError):
            ModelParams(arch, bad)


class TestForward:
    def test_zero_weights_uniform(self):
        arch = Architecture(3, 4)
        p = forward_probs(zero_params(arch), np.random.default_rng(0).normal(size=(6, 3)))
        np.testing.assert_allclose(p, 0.25, atol=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), hidden=st.sampled_from([0, 4]), scale=st.floats(0.01, 50))
    def test_rows_sum_to_one(self, seed, hidden, scale):
        rng = np.random.default_rng(seed)
        arch = Architecture(5, 4, hidden)
        params = ModelParams(arch, scale * rng.normal(size=arch.num_params))
        p = forward_probs(params, rng.normal(size=(7, 5)))
        assert np.all(np.abs(p.sum(axis=1) - 1) < 1e-9)
        assert np.all(p >= 0) and np.all(p <= 1)

    def test_large_margin_class_zero(self):
        arch = Architecture(2, 3)
        p = forward_probs(_margin_params(arch, 10.0), np.ones((4, 2)))
        # closed form: 1 / (1 + 2 e^-10)
        expected = 1.0 / (1.0 + 2.0 * math.exp(-10.0))
        assert expected > 0.99
        np.testing.assert_allclose(p[:, 0], expected, rtol=1e-12)
        assert np.all(np.argmax(p, axis=1) == 0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            forward_probs(zero_params(Architecture(3, 2)), np.zeros((2, 4)))


class TestLoss:
    def test_perfect_predictor_zero(self):
        arch = Architecture(2, 3)
        data = LabeledDataset(np.ones((5, 2)), np.zeros(5, dtype=int))
        assert ce_loss(_margin_params(arch, 60.0), data) == pytest.approx(0.0, abs=1e-12)

    def test_uniform_predictor_ln_n(self):
        rng = np.random.default_rng(1)
        data = _random_data(rng, 20, 3, 10)
        assert ce_loss(zero_params(Architecture(3, 10)), data) == pytest.approx(math.log(10), abs=1e-12)

    def test_matches_per_sample_oracle(self):
        rng = np.random.default_rng(5)
        arch = Architecture(3, 4)
        params = ModelParams(arch, rng.normal(size=arch.num_params))
        data = _random_data(rng, 5, 3, 4)
        oracle = _per_sample_ce(arch, params.weights, data.features.tolist(), data.labels.tolist())
        assert ce_loss(params, data) == pytest.approx(oracle, rel=1e-12)

    def test_clamp_keeps_loss_finite(self):
        arch = Architecture(1, 2)
        data = LabeledDataset(np.ones((1, 1)), np.array([1]))
        loss = ce_loss(_margin_params(arch, 1e4), data)
        assert loss == pytest.approx(-math.log(1e-12))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            ce_loss(zero_params(Architecture(2, 2)), LabeledDataset(np.zeros((0, 2)), np.zeros(0)))

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            ce_loss(zero_params(Architecture(2, 2)), LabeledDataset(np.zeros((1, 2)), np.array([2])))


@pytest.mark.parametrize("hidden", [0, 3])
@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(hidden, seed):
    rng = np.random.default_rng(seed)
    arch = Architecture(3, 4, hidden)
    w = 0.5 * rng.normal(size=arch.num_params)
    data = _random_data(rng, 6, 3, 4)
    analytic = ce_gradient(ModelParams(arch, w), data)
    h = 1e-5
    numeric = np.empty_like(w)
    for i in range(w.size):
        up, dn = w.copy(), w.copy()
        up[i] += h
        dn[i] -= h
        numeric[i] = (ce_loss(ModelParams(arch, up), data) - ce_loss(ModelParams(arch, dn), data)) / (2 * h)
    rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12)
    assert rel < 1e-4


class TestSGD:
    def _separable(self):
        rng = np.random.default_rng(11)
        x = np.concatenate([rng.normal(-2, 0.5, size=(40, 2)), rng.normal(2, 0.5, size=(40, 2))])
        y = np.repeat([0, 1], 40)
        return LabeledDataset(x, y)

    def test_lr_zero_identity(self):
        arch = Architecture(2, 2)
        p = init_params(arch, 1)
        out = sgd_train(p, self._separable(), epochs=3, batch_size=8, lr=0.0, seed=0)
        np.testing.assert_array_equal(out.weights, p.weights)

    @pytest.mark.parametrize("hidden", [0, 4])
    def test_loss_decreases(self, hidden):
        arch = Architecture(2, 2, hidden)
        data = self._separable()
        p = init_params(arch, 2)
        out = sgd_train(p, data, epochs=20, batch_size=16, lr=0.1, seed=3)
        assert ce_loss(out, data) < ce_loss(p, data)

    def test_deterministic_and_pure(self):
        arch = Architecture(2, 2)
        data = self._separable()
        p = init_params(arch, 4)
        before = p.weights.copy()
        a = sgd_train(p, data, epochs=4, batch_size=7, lr=0.05, seed=9)
        b = sgd_train(p, data, epochs=4, batch_size=7, lr=0.05, seed=9)
        assert a.weights.tobytes() == b.weights.tobytes()
        np.testing.assert_array_equal(p.weights, before)

    def test_seed_changes_path(self):
        arch = Architecture(2, 2)
        data = self._separable()
        p = init_params(arch, 4)
        a = sgd_train(p, data, epochs=2, batch_size=7, lr=0.05, seed=1)
        b = sgd_train(p, data, epochs=2, batch_size=7, lr=0.05, seed=2)
        assert not np.array_equal(a.weights, b.weights)

    def test_full_batch_step_matches_gradient(self):
        arch = Architecture(2, 3)
        rng = np.random.default_rng(0)
        data = _random_data(rng, 10, 2, 3)
        p = init_params(arch, 0)
        out = sgd_train(p, data, epochs=1, batch_size=10, lr=0.3, seed=0)
        np.testing.assert_allclose(out.weights, p.weights - 0.3 * ce_gradient(p, data), atol=1e-14)

    @pytest.mark.parametrize("kw", [dict(epochs=0), dict(batch_size=0), dict(lr=-1.0)])
    def test_bad_hyperparameters(self, kw):
        args = dict(epochs=1, batch_size=4, lr=0.1, seed=0) | kw
        with pytest.raises(ValueError):
            sgd_train(init_params(Architecture(2, 2), 0), self._separable(), **args)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            sgd_train(init_params(Architecture(2, 2), 0), LabeledDataset(np.zeros((0, 2)), np.zeros(0)),
                      epochs=1, batch_size=1, lr=0.1, seed=0)


class TestAccuracy:
    def test_perfect(self):
        arch = Architecture(1, 2)
        # logit_1 - logit_0 = 2x: sign of x decides the class
        w = np.array([-1.0, 1.0, 0.0, 0.0])
        x = np.array([[-1.0]] * 5 + [[1.0]] * 5)
        y = np.repeat([0, 1], 5)
        assert accuracy(ModelParams(arch, w), LabeledDataset(x, y)) == 1.0

    def test_tie_breaks_to_lowest_class(self):
        y = np.array([0, 0, 0, 1, 1, 2, 2, 2, 2, 1])
        data = LabeledDataset(np.random.default_rng(0).normal(size=(10, 3)), y)
        assert accuracy(zero_params(Architecture(3, 3)), data) == pytest.approx(0.3)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_range(self, seed):
        rng = np.random.default_rng(seed)
        arch = Architecture(3, 4)
        acc = accuracy(ModelParams(arch, rng.normal(size=arch.num_params)), _random_data(rng, 9, 3, 4))
        assert 0.0 <= acc <= 1.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            accuracy(zero_params(Architecture(2, 2)), LabeledDataset(np.zeros((0, 2)), np.zeros(0)))
