"""Error formulas: overlap-based theory values and sample-based estimates."""

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shallowbayes import rng
from shallowbayes.activations import builtin, g_eval
from shallowbayes.generalization import (
    ErrorReport,
    EstimationWarning,
    eps_from_samples,
    eps_opt_gaussian,
    eps_opt_generic,
    error_report,
    gibbs_error_relation,
    gibbs_from_bayes,
    tensor_overlaps,
)
from shallowbayes.model import ModelParams, network_output, sample_teacher
from shallowbayes.saddle import (
    ChannelModel,
    SaddleWarning,
    TheoryParams,
    solve_specialisation,
)

RELU = builtin("relu")
SIG3 = builtin("he2he3")


def _theory(**kw):
    base = dict(gamma=0.5, alpha=1.0, delta=0.1, w_prior="gaussian",
                v_prior="constant_one", activation=SIG3)
    base.update(kw)
    return TheoryParams(**base)


def _gaussian_density(var):
    return lambda y, lam: (np.exp(-0.5 * (y - lam) ** 2 / var)
                           / math.sqrt(2.0 * math.pi * var))


class TestErrorReport:
    def _report(self, **kw):
        base = dict(eps_opt=0.3, eps_gibbs=0.5, delta=0.1, phase="universal",
                    linear_term=0.0, quadratic_term=0.15, tail_term=0.05)
        base.update(kw)
        return ErrorReport(**base)

    def test_excess_error_property(self):
        assert self._report().eps_minus_delta == pytest.approx(0.2)

    def test_json_dict_carries_every_field(self):
        d = self._report(flags=("x",)).to_json_dict()
        assert d["eps_minus_delta"] == pytest.approx(0.2)
        assert d["phase"] == "universal"
        assert d["flags"] == ["x"]

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            self._report(eps_opt=float("nan"))


class TestEpsOptGaussian:
    def test_full_overlaps_leave_only_noise(self):
        for delta in (1e-4, 0.1, 1.25):
            p = _theory(delta=delta)
            assert eps_opt_gaussian(1.0, 1.0, p) == pytest.approx(delta,
                                                                  abs=1e-14)

    def test_matches_branch_solver(self):
        p = _theory()
        sol = solve_specialisation(p)
        assert eps_opt_gaussian(sol.state.q2, sol.state.qW, p) == \
            pytest.approx(sol.eps_opt, abs=1e-12)

    def test_generic_channel_refused(self):
        chan = ChannelModel.generic(_gaussian_density(0.3),
                                    noise_scale=math.sqrt(0.3))
        with pytest.raises(ValueError):
            eps_opt_gaussian(0.5, 0.5, _theory(delta=0.0, channel=chan))

    @given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    @settings(max_examples=25, deadline=None)
    def test_components_nonnegative(self, q2, qW):
        p = _theory()
        spec = SIG3.centered()
        quad = 0.5 * spec.mu2 ** 2 * (1.0 - q2)
        tail = g_eval(1.0, spec) - g_eval(qW, spec)
        assert quad >= -1e-12
        assert tail >= -1e-12
        assert eps_opt_gaussian(q2, qW, p) >= p.delta - 1e-12

    def test_nonincreasing_along_branch(self):
        sols = [solve_specialisation(_theory(alpha=a)) for a in (1.0, 2.0, 4.0)]
        errs = [s.eps_opt for s in sols]
        assert errs[0] > errs[1] > errs[2]


class TestEpsOptGeneric:
    def test_gaussian_density_matches_closed_form(self):
        var = 0.3
        chan = ChannelModel.generic(_gaussian_density(var),
                                    noise_scale=math.sqrt(var))
        for qK, rK in ((0.2, 0.5), (0.37, 0.38), (0.0, 1.0)):
            assert eps_opt_generic(qK, rK, chan) == pytest.approx(
                var + rK - qK, abs=1e-5)

    def test_zero_overlap_predicts_the_mean(self):
        var = 0.3
        chan = ChannelModel.generic(_gaussian_density(var),
                                    noise_scale=math.sqrt(var))
        assert eps_opt_generic(0.0, 0.8, chan) == pytest.approx(var + 0.8,
                                                                abs=1e-6)
        # degenerate rK: the label reduces to pure channel noise
        assert eps_opt_generic(0.0, 0.0, chan) == pytest.approx(var, abs=1e-6)

    def test_full_overlap_leaves_conditional_variance(self):
        # logistic noise with scale s has variance s^2 pi^2 / 3
        s = 0.4
        chan = ChannelModel.generic(
            lambda y, lam: np.exp(-(y - lam) / s)
            / (s * (1.0 + np.exp(-(y - lam) / s)) ** 2),
            noise_scale=s * math.pi / math.sqrt(3.0))
        assert eps_opt_generic(0.7, 0.7, chan) == pytest.approx(
            s ** 2 * math.pi ** 2 / 3.0, rel=1e-6)

    def test_overlap_order_enforced(self):
        chan = ChannelModel.generic(_gaussian_density(0.3),
                                    noise_scale=math.sqrt(0.3))
        with pytest.raises(ValueError):
            eps_opt_generic(0.6, 0.5, chan)

    def test_truncating_grid_warns(self):
        chan = ChannelModel.generic(_gaussian_density(0.3),
                                    noise_scale=math.sqrt(0.3),
                                    y_halfwidth=0.8)
        with pytest.warns(SaddleWarning):
            eps_opt_generic(0.2, 0.5, chan)

    def test_gaussian_channel_short_circuits(self):
        assert eps_opt_generic(0.2, 0.5, ChannelModel.gaussian(0.3)) == \
            pytest.approx(0.6, abs=1e-15)


class TestTensorOverlaps:
    def test_matches_scalar_loops(self):
        g = rng.stream(3, "overlap-oracle", 0)
        k, d = 3, 5
        Wa, Wb = g.standard_normal((k, d)), g.standard_normal((k, d))
        va, vb = g.standard_normal(k), g.standard_normal(k)
        qW, qs = tensor_overlaps(Wa, va, Wb, vb, ell_max=3)
        omega = [[sum(Wa[i, a] * Wb[j, a] for a in range(d)) / d
                  for j in range(k)] for i in range(k)]
        assert qW == pytest.approx(sum(omega[i][i] for i in range(k)) / k,
                                   abs=1e-12)
        for ell in (1, 2, 3):
            want = sum(va[i] * omega[i][j] ** ell * vb[j]
                       for i in range(k) for j in range(k)) / k
            assert qs[ell - 1] == pytest.approx(want, abs=1e-12)

    def test_binary_self_overlap_is_exact(self):
        mp = ModelParams(d=60, gamma=0.5, alpha=1.0, delta=0.1,
                         w_prior="rademacher", v_prior="rademacher",
                         activation=SIG3)
        t = sample_teacher(mp, 5)
        qW, _ = tensor_overlaps(t.W0, t.v0, t.W0, t.v0)
        assert qW == pytest.approx(1.0, abs=1e-14)

    def test_independent_draws_have_small_overlaps(self):
        g = rng.stream(8, "overlap-indep", 0)
        k, d = 50, 100
        Wa, Wb = g.standard_normal((k, d)), g.standard_normal((k, d))
        v = np.ones(k)
        qW, qs = tensor_overlaps(Wa, v, Wb, v, ell_max=3)
        assert abs(qW) < 5.0 / math.sqrt(k * d)
        assert abs(qs[2]) < 0.05

    def test_high_orders_follow_the_power_ansatz(self):
        # at the self-overlap of a binary teacher the diagonal dominates,
        # so Q_ell for ell >= 3 is close to qW^ell times the readout norm
        mp = ModelParams(d=100, gamma=0.5, alpha=1.0, delta=0.1,
                         w_prior="rademacher", v_prior="constant_one",
                         activation=SIG3)
        t = sample_teacher(mp, 5)
        qW, qs = tensor_overlaps(t.W0, t.v0, t.W0, t.v0, ell_max=5)
        for ell in (3, 4, 5):
            assert qs[ell - 1] == pytest.approx(qW ** ell, rel=0.05)

    def test_validation(self):
        W = np.ones((2, 3))
        with pytest.raises(ValueError):
            tensor_overlaps(W, np.ones(2), W, np.ones(2), ell_max=6)
        with pytest.raises(ValueError):
            tensor_overlaps(W, np.ones(2), np.ones((2, 4)), np.ones(2))


class TestEpsFromSamples:
    def _teacher(self, d=100, seed=11):
        mp = ModelParams(d=d, gamma=0.5, alpha=1.0, delta=0.1,
                         w_prior="gaussian", v_prior="constant_one",
                         activation=RELU)
        return mp, sample_teacher(mp, seed)

    def test_teacher_samples_give_zero_excess(self):
        mp, t = self._teacher(d=40)
        for mode, samples in (("nishimori", [t.W0]),
                              ("no_nishimori", [t.W0, t.W0])):
            rep = eps_from_samples(t, samples, RELU, mode, delta=0.1)
            assert rep.eps_minus_delta == pytest.approx(0.0, abs=1e-12)
            assert rep.eps_opt == pytest.approx(0.1, abs=1e-12)
            assert rep.eps_gibbs == pytest.approx(0.1, abs=1e-12)

    def test_prior_samples_match_direct_monte_carlo(self):
        # data-free surrogate: posterior = prior, so the estimator must
        # agree with a test-set evaluation of the same pair products
        mp, t = self._teacher()
        g = rng.stream(11, "indep-samples", 0)
        samples = [g.standard_normal((mp.k, mp.d)) for _ in range(4)]
        rep = eps_from_samples(t, samples, RELU, "no_nishimori", delta=0.1)

        gt = rng.stream(11, "test-set", 0)
        X = gt.standard_normal((10_000, mp.d))
        y = network_output(t.v0, t.W0, X, RELU) \
            + math.sqrt(0.1) * gt.standard_normal(10_000)
        lams = [network_output(t.v0, W, X, RELU) for W in samples]
        prods = [(y - lams[a]) * (y - lams[b])
                 for a in range(4) for b in range(a + 1, 4)]
        per_point = np.mean(prods, axis=0)
        mc = float(per_point.mean()) - 0.1
        se = float(per_point.std(ddof=1) / math.sqrt(per_point.size))
        assert abs(rep.eps_minus_delta - mc) < 3.0 * (se + rep.stderr)
        # sanity on the scale itself: independent samples predict nothing
        spec = RELU.centered()
        rough = spec.mu1 ** 2 + 0.5 * spec.mu2 ** 2 * 1.5 + g_eval(1.0, spec)
        assert rep.eps_minus_delta == pytest.approx(rough, rel=0.15)

    def test_modes_agree_on_exchangeable_construction(self):
        # teacher and samples all drawn from the prior: replica indices
        # are exchangeable by construction, so both overlap combinations
        # estimate the same quantity
        mp, t = self._teacher(d=80, seed=21)
        g = rng.stream(21, "exchangeable", 0)
        samples = [g.standard_normal((mp.k, mp.d)) for _ in range(6)]
        a = eps_from_samples(t, samples, RELU, "nishimori", delta=0.1)
        b = eps_from_samples(t, samples, RELU, "no_nishimori", delta=0.1)
        combined = math.hypot(a.stderr, b.stderr)
        assert abs(a.eps_minus_delta - b.eps_minus_delta) < 3.0 * combined + 0.02

    def test_component_split_adds_up(self):
        mp, t = self._teacher(d=60)
        g = rng.stream(13, "split", 0)
        samples = [g.standard_normal((mp.k, mp.d)) for _ in range(3)]
        rep = eps_from_samples(t, samples, RELU, "no_nishimori", delta=0.1)
        total = rep.linear_term + rep.quadratic_term + rep.tail_term
        assert rep.eps_minus_delta == pytest.approx(total, abs=1e-12)
        assert rep.n_terms == 3
        assert rep.mode == "no_nishimori"

    def test_sample_count_requirements(self):
        mp, t = self._teacher(d=40)
        with pytest.raises(ValueError):
            eps_from_samples(t, [], RELU, "nishimori")
        with pytest.raises(ValueError):
            eps_from_samples(t, [t.W0], RELU, "no_nishimori")
        with pytest.raises(ValueError):
            eps_from_samples(t, [t.W0], RELU, "bootstrap")
        with pytest.raises(ValueError):
            eps_from_samples(t, [t.W0], RELU, "nishimori",
                             v_samples=[t.v0, t.v0])

    def test_below_floor_estimate_is_flagged(self):
        # an inflated copy of the teacher overshoots every overlap, which
        # drives the plug-in estimate negative
        mp, t = self._teacher(d=40)
        with pytest.warns(EstimationWarning):
            rep = eps_from_samples(t, [2.0 * t.W0], RELU, "nishimori",
                                   delta=0.1)
        assert "estimate below noise floor" in rep.flags
        assert rep.eps_minus_delta < 0.0


class TestGibbsRelation:
    def test_fixed_points_and_doubling(self):
        assert gibbs_error_relation(0.1, 0.1) == pytest.approx(0.1)
        assert gibbs_error_relation(0.3, 0.1) == pytest.approx(0.2)
        assert gibbs_from_bayes(0.2, 0.1) == pytest.approx(0.3)

    @given(st.floats(0.0, 5.0), st.floats(1e-3, 2.0))
    @settings(max_examples=25, deadline=None)
    def test_roundtrip(self, excess, delta):
        eps = delta + excess
        assert gibbs_error_relation(gibbs_from_bayes(eps, delta), delta) == \
            pytest.approx(eps, rel=1e-12, abs=1e-12)

    def test_below_floor_warns(self):
        with pytest.warns(EstimationWarning):
            got = gibbs_error_relation(0.05, 0.1)
        assert got == pytest.approx(0.075)


class TestErrorReportFromSolution:
    def test_specialisation_report(self):
        p = _theory()
        sol = solve_specialisation(p)
        rep = error_report(sol, p)
        assert rep.eps_opt == pytest.approx(sol.eps_opt, abs=1e-12)
        assert rep.eps_gibbs - 0.1 == pytest.approx(
            2.0 * (sol.eps_opt - 0.1), abs=1e-12)
        assert rep.phase == "specialisation"
        assert rep.eps_minus_delta == pytest.approx(
            rep.quadratic_term + rep.tail_term, abs=1e-12)

    def test_generic_channel_report_matches_gaussian(self):
        var = 0.1
        chan = ChannelModel.generic(_gaussian_density(var),
                                    noise_scale=math.sqrt(var))
        p_gauss = _theory(delta=var)
        p_gen = _theory(delta=0.0, channel=chan)
        sol = solve_specialisation(p_gauss)
        rep = error_report(sol, p_gen)
        assert rep.delta == pytest.approx(var, abs=1e-6)
        assert rep.eps_opt == pytest.approx(sol.eps_opt, abs=1e-5)
