"""Teacher/data generation and exact forward evaluation."""

import numpy as np
import pytest

from shallowbayes import rng
from shallowbayes.activations import builtin, g_eval
from shallowbayes.model import (
    Dataset,
    ModelParams,
    generate_dataset,
    network_output,
    post_activation,
    r2_absolute,
    sample_teacher,
    v_prior_mean,
)


def _params(**kw):
    base = dict(
        d=20, gamma=0.5, alpha=0.5, delta=0.1,
        w_prior="gaussian", v_prior="constant_one",
        activation=builtin("he2"),
    )
    base.update(kw)
    return ModelParams(**base)


class TestPostActivation:
    def test_matches_scalar_loop_oracle(self):
        params = _params(d=20, activation=builtin("relu"))
        teacher = sample_teacher(params, master_seed=7)
        gen = rng.stream(7, "probe")
        x = gen.standard_normal(params.d)
        lam = post_activation(teacher.v0, teacher.W0, x, params.activation)
        acc = 0.0
        for i in range(params.k):
            h = sum(teacher.W0[i, a] * x[a] for a in range(params.d)) / np.sqrt(params.d)
            acc += teacher.v0[i] * max(h, 0.0)
        assert lam == pytest.approx(acc / np.sqrt(params.k), abs=1e-12)

    def test_zero_weights_give_constant_output(self):
        spec = builtin("he2")  # sigma(0) = -1/sqrt(2)
        k, d = 8, 5
        lam = post_activation(np.ones(k), np.zeros((k, d)), np.ones(d), spec)
        assert lam == pytest.approx(-np.sqrt(k / 2.0), abs=1e-12)

    def test_identity_network_reads_first_coordinate(self):
        spec = builtin("identity")
        d = 6
        W = np.sqrt(d) * np.eye(d)
        v = np.zeros(d)
        v[0] = np.sqrt(d)
        x = np.arange(1.0, d + 1.0)
        assert post_activation(v, W, x, spec) == pytest.approx(x[0], abs=1e-12)

    def test_shape_mismatch(self):
        spec = builtin("identity")
        with pytest.raises(ValueError):
            post_activation(np.ones(3), np.ones((4, 5)), np.ones(5), spec)


class TestDatasets:
    def test_noiseless_labels_are_deterministic(self):
        params = _params(delta=0.0)
        teacher = sample_teacher(params, 3)
        data = generate_dataset(teacher, params, 3)
        lam = network_output(teacher.v0, teacher.W0, data.X, params.activation)
        np.testing.assert_array_equal(data.y, lam)

    def test_bit_exact_regeneration(self):
        params = _params()
        teacher = sample_teacher(params, 11)
        a = generate_dataset(teacher, params, 11)
        b = generate_dataset(teacher, params, 11)
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.y, b.y)

    def test_train_and_test_streams_differ(self):
        params = _params()
        teacher = sample_teacher(params, 11)
        train = generate_dataset(teacher, params, 11)
        test = generate_dataset(teacher, params, 11, purpose="test")
        assert not np.array_equal(train.X[0], test.X[0])

    def test_noise_variance(self):
        params = _params(d=30, delta=0.5, alpha=2.0)
        teacher = sample_teacher(params, 5)
        data = generate_dataset(teacher, params, 5)
        lam = network_output(teacher.v0, teacher.W0, data.X, params.activation)
        resid = data.y - lam
        n = resid.size
        stderr = params.delta * np.sqrt(2.0 / n)
        assert abs(resid.var() - params.delta) < 3 * stderr

    def test_label_variance_decomposition(self):
        # Var(y) ~ r_K + delta with the centred kernel self-overlap
        spec = builtin("relu").centered()
        params = _params(d=150, gamma=0.5, alpha=0.5, delta=0.1, activation=spec)
        teacher = sample_teacher(params, 21)
        data = generate_dataset(teacher, params, 21)
        r2 = r2_absolute(params.gamma, params.v_prior)
        r_k = spec.mu1**2 + 0.5 * spec.mu2**2 * r2 + g_eval(1.0, spec, "kernel")
        assert data.y.var() == pytest.approx(r_k + params.delta, rel=0.05)


class TestPriors:
    def test_teacher_moments(self):
        params = _params(d=80, gamma=1.0, w_prior="gaussian")
        teacher = sample_teacher(params, 9)
        kd = teacher.W0.size
        assert abs(teacher.W0.mean()) < 5 / np.sqrt(kd)
        assert abs(teacher.W0.var() - 1.0) < 5 / np.sqrt(kd)

    def test_rademacher_weights_are_signs(self):
        params = _params(w_prior="rademacher")
        teacher = sample_teacher(params, 1)
        assert set(np.unique(teacher.W0)) == {-1.0, 1.0}

    def test_readout_priors(self):
        gen = rng.stream(0, "x")
        from shallowbayes.model import sample_readouts

        assert np.all(sample_readouts("constant_one", 10, gen) == 1.0)
        r = sample_readouts("rademacher", 1000, gen)
        assert set(np.unique(r)) == {-1.0, 1.0}
        u = sample_readouts("uniform_sym", 100000, gen)
        assert np.max(np.abs(u)) <= np.sqrt(3.0)
        assert u.var() == pytest.approx(1.0, rel=0.02)
        g = sample_readouts("gaussian", 100000, gen)
        assert g.var() == pytest.approx(1.0, rel=0.02)

    def test_r2_values(self):
        assert r2_absolute(0.5, "constant_one") == 1.5
        assert r2_absolute(0.5, "rademacher") == 1.0
        assert v_prior_mean("gaussian") == 0.0

    def test_invalid_priors_rejected(self):
        with pytest.raises(ValueError):
            _params(w_prior="laplace")
        with pytest.raises(ValueError):
            _params(v_prior="exponential")
        with pytest.raises(ValueError):
            _params(delta=-0.1)

    def test_shape_arithmetic(self):
        p = _params(d=100, gamma=0.5, alpha=0.25)
        assert p.k == 50
        assert p.n == 2500


class TestStreams:
    def test_purpose_isolation(self):
        a = rng.stream(4, "alpha").standard_normal(5)
        b = rng.stream(4, "beta").standard_normal(5)
        assert not np.array_equal(a, b)

    def test_reproducibility(self):
        a = rng.stream(4, "alpha", 2).standard_normal(5)
        b = rng.stream(4, "alpha", 2).standard_normal(5)
        np.testing.assert_array_equal(a, b)
