"""Matrix-sensing AMP learner: moment estimators, fits, and prediction."""

import math

import numpy as np
import pytest

from shallowbayes.activations import builtin
from shallowbayes.gamp import (
    GampConfig,
    GampDivergence,
    GampState,
    estimate_mean,
    estimate_s1,
    gamp_rie_fit,
    goe_sensing_fit,
    predict,
)
from shallowbayes.model import (
    Dataset,
    ModelParams,
    generate_dataset,
    sample_teacher,
)

RELU = builtin("relu")
HE2 = builtin("he2")

# universal-branch solver output at relu, gamma=0.5, alpha=2, delta=0.1,
# constant read-outs (packaged constant_one table)
UNI_EPS_RELU_A2 = 0.1281410962
UNI_Q2_RELU_A2 = 0.7879612097
UNI_QHAT2_RELU_A2 = 2.4840577747


def _problem(seed, *, d, alpha, delta, activation, v_prior="constant_one",
             w_prior="gaussian"):
    params = ModelParams(d=d, gamma=0.5, alpha=alpha, delta=delta,
                         w_prior=w_prior, v_prior=v_prior,
                         activation=activation)
    teacher = sample_teacher(params, master_seed=seed)
    dataset = generate_dataset(teacher, params, master_seed=seed)
    return params, teacher, dataset


def _s2_of(teacher):
    k, d = teacher.W0.shape
    return teacher.W0.T @ np.diag(teacher.v0) @ teacher.W0 / math.sqrt(k * d)


def _s1_of(teacher):
    return (teacher.v0 @ teacher.W0) / math.sqrt(teacher.W0.shape[0])


@pytest.fixture(scope="module")
def relu_fit():
    """One mid-load fit reused by the theory-comparison tests."""
    params, teacher, dataset = _problem(11, d=150, alpha=2.0, delta=0.1,
                                        activation=RELU)
    state = gamp_rie_fit(dataset, RELU, 0.1)
    return params, teacher, dataset, state


@pytest.fixture(scope="module")
def he2_fit():
    """Noiseless quadratic-activation fit (the exactly-solvable sensing map)."""
    params, teacher, dataset = _problem(7, d=150, alpha=4.0, delta=1e-6,
                                        activation=HE2, v_prior="rademacher")
    state = gamp_rie_fit(dataset, HE2, 1e-6, GampConfig(max_iter=120))
    return params, teacher, dataset, state


class TestEstimateMean:
    def test_sample_mean(self):
        ds = Dataset(X=np.zeros((4, 2)), y=np.array([1.0, 2.0, 3.0, 6.0]))
        assert estimate_mean(ds) == pytest.approx(3.0)

    def test_empty_rejected(self):
        ds = Dataset(X=np.zeros((0, 2)), y=np.zeros(0))
        with pytest.raises(ValueError):
            estimate_mean(ds)


class TestEstimateS1:
    def test_zero_linear_component_skips(self):
        _, _, ds = _problem(3, d=20, alpha=1.0, delta=0.1, activation=HE2)
        s1, skipped = estimate_s1(ds, estimate_mean(ds), HE2.centered())
        assert skipped
        assert not s1.any()

    def test_noiseless_linear_teacher_exact(self):
        ident = builtin("identity")
        _, teacher, ds = _problem(3, d=40, alpha=2.0, delta=0.0,
                                  activation=ident, v_prior="gaussian")
        s1, skipped = estimate_s1(ds, estimate_mean(ds), ident.centered())
        assert not skipped
        assert np.abs(s1 - _s1_of(teacher)).max() < 1e-8

    def test_relu_direction_recovered(self):
        _, teacher, ds = _problem(9, d=100, alpha=2.0, delta=0.1,
                                  activation=RELU)
        s1, _ = estimate_s1(ds, estimate_mean(ds), RELU.centered())
        truth = _s1_of(teacher)
        cos = s1 @ truth / (np.linalg.norm(s1) * np.linalg.norm(truth))
        assert cos > 0.99

    def test_underdetermined_rejected(self):
        ds = Dataset(X=np.zeros((5, 8)), y=np.zeros(5))
        with pytest.raises(ValueError, match="n >= d"):
            estimate_s1(ds, 0.0, RELU.centered())


class TestConfig:
    def test_bad_damping(self):
        with pytest.raises(ValueError):
            GampConfig(damping=1.0)

    def test_bad_patience(self):
        with pytest.raises(ValueError):
            GampConfig(divergence_patience=1)
        with pytest.raises(ValueError):
            GampConfig(stall_patience=1)

    def test_bad_tol(self):
        with pytest.raises(ValueError):
            GampConfig(tol=0.0)


class TestFitGuards:
    def test_no_quadratic_component(self):
        he3 = builtin("he3")
        _, _, ds = _problem(3, d=20, alpha=1.0, delta=0.1, activation=he3)
        with pytest.raises(ValueError, match="mu2 = 0"):
            gamp_rie_fit(ds, he3, 0.1)

    def test_prior_arguments_travel_together(self):
        _, _, ds = _problem(3, d=20, alpha=1.0, delta=0.1, activation=HE2)
        with pytest.raises(ValueError, match="together"):
            gamp_rie_fit(ds, HE2, 0.1, gamma=0.5)

    def test_divergence_aborts_with_trace(self):
        # tightened patience on a sub-resolution noiseless problem, where
        # the iterate wanders once the shrinker stops resolving the noise
        _, _, ds = _problem(7, d=100, alpha=4.0, delta=1e-6, activation=HE2,
                            v_prior="rademacher")
        cfg = GampConfig(max_iter=120, divergence_patience=2)
        with pytest.raises(GampDivergence) as err:
            gamp_rie_fit(ds, HE2, 1e-6, cfg, gamma=0.5, v_prior="rademacher")
        state = err.value.state
        assert "diverged" in state.flags
        assert not state.converged
        assert state.iterations > 0
        assert len(state.residuals) == state.iterations
        assert state.mse == state.r2


class TestFitRelu:
    def test_converges(self, relu_fit):
        *_, state = relu_fit
        assert state.converged
        assert state.iterations < 60
        assert state.best_iteration == state.iterations

    def test_prediction_error_matches_universal_theory(self, relu_fit):
        params, teacher, _, state = relu_fit
        test_set = generate_dataset(teacher, params, master_seed=11,
                                    n=4000, purpose="test")
        y_hat = predict(state, test_set.X, RELU.centered())
        mse = float(np.mean((test_set.y - y_hat) ** 2))
        assert mse == pytest.approx(UNI_EPS_RELU_A2, rel=0.10)

    def test_overlap_matches_universal_fixed_point(self, relu_fit):
        *_, state = relu_fit
        assert state.q2_implied == pytest.approx(UNI_Q2_RELU_A2, rel=0.05)
        assert state.q_hat2_implied == pytest.approx(UNI_QHAT2_RELU_A2,
                                                     rel=0.05)

    def test_tensor_error_matches_theory_gap(self, relu_fit):
        _, teacher, _, state = relu_fit
        emp = float(np.sum((state.s2_hat - _s2_of(teacher)) ** 2)) / 150
        assert emp == pytest.approx(1.0 - UNI_Q2_RELU_A2, rel=0.10)

    def test_variance_trace_settles(self, relu_fit):
        *_, state = relu_fit
        trace = np.asarray(state.v_trace)
        assert trace.min() > 0.0
        assert np.diff(trace[7:]).max() < 1e-6

    def test_symmetric_estimate(self, relu_fit):
        *_, state = relu_fit
        assert np.abs(state.s2_hat - state.s2_hat.T).max() < 1e-12

    def test_moment_estimates_near_prior_values(self, relu_fit):
        # data-driven norm and trace scale against the matched-prior ones
        *_, state = relu_fit
        assert state.r2 == pytest.approx(1.5, rel=0.05)


class TestFitQuadratic:
    def test_near_exact_recovery(self, he2_fit):
        _, teacher, _, state = he2_fit
        emp = float(np.sum((state.s2_hat - _s2_of(teacher)) ** 2)) / 150
        # the sensing map is exactly quadratic here, so the fit should be
        # orders of magnitude below the r2 scale
        assert state.converged
        assert emp < 1e-3
        assert emp / state.r2 < 1e-3

    def test_linear_step_skipped(self, he2_fit):
        *_, state = he2_fit
        assert "linear component skipped (mu1 = 0)" in state.flags
        assert not state.s1_hat.any()

    def test_prior_override_agrees(self):
        params, teacher, ds = _problem(7, d=100, alpha=4.0, delta=1e-6,
                                       activation=HE2, v_prior="rademacher")
        cfg = GampConfig(max_iter=120)
        est = gamp_rie_fit(ds, HE2, 1e-6, cfg)
        told = gamp_rie_fit(ds, HE2, 1e-6, cfg, gamma=0.5,
                            v_prior="rademacher")
        truth = _s2_of(teacher)
        for state in (est, told):
            emp = float(np.sum((state.s2_hat - truth) ** 2)) / 100
            assert emp < 5e-3

    def test_stall_keeps_best_iterate(self):
        # at d=100 the wander sets in before the residual criterion can
        # trigger; the fit must still hand back its best pass, flagged
        _, teacher, ds = _problem(7, d=100, alpha=4.0, delta=1e-6,
                                  activation=HE2, v_prior="rademacher")
        state = gamp_rie_fit(ds, HE2, 1e-6, GampConfig(max_iter=120))
        assert not state.converged
        assert "stalled; kept the lowest-variance iterate" in state.flags
        assert state.best_iteration < state.iterations
        emp = float(np.sum((state.s2_hat - _s2_of(teacher)) ** 2)) / 100
        assert emp < 5e-3


class TestPermutationEquivariance:
    def test_conjugate_permutation(self):
        _, _, ds = _problem(5, d=60, alpha=2.0, delta=0.1, activation=RELU)
        state = gamp_rie_fit(ds, RELU, 0.1)
        perm = np.random.default_rng(0).permutation(60)
        permuted = Dataset(X=ds.X[:, perm], y=ds.y)
        state_p = gamp_rie_fit(permuted, RELU, 0.1)
        gap = np.abs(state_p.s2_hat
                     - state.s2_hat[np.ix_(perm, perm)]).max()
        assert gap < 1e-12


class TestGoeSensing:
    def test_matches_tracked_error(self):
        _, teacher, _ = _problem(7, d=100, alpha=4.0, delta=1e-6,
                                 activation=HE2, v_prior="rademacher")
        truth = _s2_of(teacher)
        state = goe_sensing_fit(truth, 2.0, 0.5, 13, GampConfig(max_iter=60))
        assert state.converged
        assert "synthetic GOE sensing" in state.flags
        emp = float(np.sum((state.s2_hat - truth) ** 2)) / 100
        assert state.mse == pytest.approx(emp, rel=0.25)


class TestPredict:
    def _blank_state(self, d, y0=0.25):
        return GampState(y0_hat=y0, s1_hat=np.zeros(d),
                         s2_hat=np.zeros((d, d)), delta_eff=1.0, alpha=1.0,
                         r2=1.0, mse=1.0, converged=True, iterations=1)

    def test_zero_state_returns_mean(self):
        state = self._blank_state(4)
        assert predict(state, np.ones(4), HE2.centered()) == 0.25
        batch = predict(state, np.ones((3, 4)), HE2.centered())
        assert batch.shape == (3,)
        assert np.all(batch == 0.25)

    def test_exact_teacher_tensors_reproduce_labels(self):
        # binary inner rows have exact unit row norm, making the order-2
        # identity exact rather than d -> infinity
        params, teacher, ds = _problem(13, d=30, alpha=1.0, delta=0.0,
                                       activation=HE2, v_prior="gaussian",
                                       w_prior="rademacher")
        state = GampState(y0_hat=0.0, s1_hat=np.zeros(30),
                          s2_hat=_s2_of(teacher), delta_eff=0.0,
                          alpha=1.0, r2=1.0, mse=0.0, converged=True,
                          iterations=1)
        y_hat = predict(state, ds.X, HE2.centered())
        assert np.abs(y_hat - ds.y).max() < 1e-10

    def test_dimension_mismatch(self):
        state = self._blank_state(4)
        with pytest.raises(ValueError, match="dimension"):
            predict(state, np.ones(5), HE2.centered())

    def test_single_vector_returns_scalar(self):
        state = self._blank_state(4)
        out = predict(state, np.zeros(4), RELU.centered())
        assert isinstance(out, float)


class TestStateProperties:
    def test_q2_implied(self):
        state = GampState(y0_hat=0.0, s1_hat=np.zeros(2),
                          s2_hat=np.zeros((2, 2)), delta_eff=2.0, alpha=1.0,
                          r2=1.0, mse=0.25, converged=True, iterations=3,
                          v_trace=(2.0, 0.5))
        assert state.q2_implied == pytest.approx(0.75)
        assert state.q_hat2_implied == pytest.approx(4.0 / 2.5)

    def test_qhat2_uses_best_iteration(self):
        state = GampState(y0_hat=0.0, s1_hat=np.zeros(2),
                          s2_hat=np.zeros((2, 2)), delta_eff=1.0, alpha=1.0,
                          r2=1.0, mse=0.25, converged=False, iterations=3,
                          best_iteration=1, v_trace=(3.0, 0.5, 9.0))
        assert state.q_hat2_implied == pytest.approx(1.0)
