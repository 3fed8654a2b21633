"""Hermite coefficients, second moments, and the kernel tail g."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtr

from shallowbayes.activations import (
    ActivationSpec,
    builtin,
    g_eval,
    g_prime,
    hermite_coefficients,
    pair_correlation,
    second_moment,
)

SQRT_2PI = math.sqrt(2 * math.pi)

# closed forms for the ELU coefficients, from splitting E[He_l(z) elu(z)] at 0
# and integrating the exponential branch exactly: E[e^z He_l(z) 1_{z<0}] etc.
_E_HALF_PHI = math.exp(0.5) * ndtr(-1.0)  # e^{1/2} Phi(-1)
ELU_MU_EXACT = (
    1.0 / SQRT_2PI + _E_HALF_PHI - 0.5,
    0.5 + _E_HALF_PHI,
    _E_HALF_PHI,
    _E_HALF_PHI - 1.0 / SQRT_2PI,
    _E_HALF_PHI - 1.0 / SQRT_2PI,
)


class TestTableValues:
    def test_relu_leading_coefficients(self):
        spec = builtin("relu")
        expected = [1 / SQRT_2PI, 0.5, 1 / SQRT_2PI, 0.0, -1 / SQRT_2PI]
        np.testing.assert_allclose(spec.mu[:5], expected, atol=1e-6)

    def test_relu_printed_row(self):
        spec = builtin("relu")
        np.testing.assert_allclose(
            spec.mu[:5], [0.39894, 0.5, 0.39894, 0.0, -0.39894], atol=1e-5
        )
        assert abs(spec.nu - 0.5) < 1e-9

    def test_elu_printed_row(self):
        spec = builtin("elu")
        np.testing.assert_allclose(
            spec.mu[:5], [0.16052, 0.76158, 0.26158, -0.13736, -0.13736], atol=1e-5
        )
        assert abs(spec.nu - 0.64494) < 1e-5

    def test_elu_closed_forms(self):
        spec = builtin("elu")
        np.testing.assert_allclose(spec.mu[:5], ELU_MU_EXACT, atol=1e-9)

    def test_identity(self):
        spec = builtin("identity")
        assert spec.mu[1] == 1.0
        assert np.all(spec.mu[[0, 2, 3, 4]] == 0.0)
        assert spec.nu == 1.0

    def test_runtime_under_a_second(self):
        import time

        t0 = time.perf_counter()
        builtin("relu")
        builtin("elu")
        assert time.perf_counter() - t0 < 1.0


class TestPolynomialBuiltins:
    def test_he2_algebra(self):
        spec = builtin("he2")
        assert abs(spec.mu[2] - math.sqrt(2.0)) < 1e-14
        assert abs(spec.nu - 1.0) < 1e-14

    def test_he3_algebra(self):
        spec = builtin("he3")
        assert abs(spec.mu[3] - math.sqrt(6.0)) < 1e-14
        assert abs(spec.nu - 1.0) < 1e-14

    def test_he2he3_algebra(self):
        spec = builtin("he2he3")
        assert abs(spec.mu[2] - math.sqrt(2.0)) < 1e-14
        assert abs(spec.mu[3] - 1.0) < 1e-14
        assert abs(spec.nu - (1.0 + 1.0 / 6.0)) < 1e-14

    def test_quadrature_matches_exact_polynomial(self):
        spec = builtin("he2he3")
        mu_quad = hermite_coefficients(spec.evaluate, spec.L)
        np.testing.assert_allclose(mu_quad[:8], spec.mu[:8], atol=1e-8)

    def test_custom_poly_requires_coefficients(self):
        with pytest.raises(ValueError):
            builtin("custom-poly")

    def test_unknown_name(self):
        with pytest.raises(ValueError):
            builtin("swish")


class TestKernelTail:
    def test_g_at_zero(self):
        for name in ("relu", "elu", "he2he3"):
            assert g_eval(0.0, builtin(name)) == pytest.approx(0.0, abs=1e-12)

    def test_quadratic_activation_has_no_tail(self):
        spec = builtin("he2")
        for x in (-1.0, -0.3, 0.2, 1.0):
            assert g_eval(x, spec) == 0.0
            assert g_prime(x, spec) == 0.0

    def test_relu_g1_closed_form(self):
        # nu - mu0^2 - mu1^2 - mu2^2/2 = 1/2 - 1/(2pi) - 1/4 - 1/(4pi)
        expected = 0.5 - 1.0 / (2 * math.pi) - 0.25 - 1.0 / (4 * math.pi)
        spec = builtin("relu")
        assert g_eval(1.0, spec, method="kernel") == pytest.approx(expected, abs=1e-10)
        assert expected == pytest.approx(0.011268, abs=5e-7)

    def test_relu_series_misses_only_the_tail(self):
        spec = builtin("relu")
        gap = g_eval(1.0, spec, method="kernel") - g_eval(1.0, spec, method="series")
        assert 0.0 < gap < 2e-4
        assert gap == pytest.approx(spec.tail_bound, rel=0.05)

    def test_he3_tail_is_cubic(self):
        spec = builtin("he3")
        for x in (-0.8, 0.1, 0.7, 1.0):
            assert g_eval(x, spec) == pytest.approx(x**3, abs=1e-12)
            assert g_prime(x, spec) == pytest.approx(3 * x**2, abs=1e-12)

    def test_relu_gprime_zero_at_origin(self):
        assert g_prime(0.0, builtin("relu"), method="kernel") == pytest.approx(0.0, abs=1e-10)

    def test_relu_gprime_at_one(self):
        # K'(1) - mu1^2 - mu2^2 = 1/2 - 1/4 - 1/(2pi)
        expected = 0.25 - 1.0 / (2 * math.pi)
        assert g_prime(1.0, builtin("relu"), method="kernel") == pytest.approx(expected, abs=1e-10)

    def test_series_and_kernel_paths_agree_for_polynomials(self):
        spec = builtin("he2he3")
        for x in (-1.0, -0.5, 0.0, 0.5, 0.9, 1.0):
            a = g_eval(x, spec, method="series")
            b = g_eval(x, spec, method="kernel")
            assert a == pytest.approx(b, abs=1e-6)

    def test_elu_kernel_consistency(self):
        # the 1D-reduced kernel must reproduce nu at x=1, mu0^2 at x=0,
        # and mu1^2 as slope at 0 (Gaussian integration by parts)
        spec = builtin("elu")
        assert spec.pair_kernel(1.0) == pytest.approx(spec.nu, abs=1e-9)
        assert spec.pair_kernel(0.0) == pytest.approx(spec.mu0**2, abs=1e-9)
        assert spec.pair_kernel_prime(0.0) == pytest.approx(spec.mu1**2, abs=1e-9)

    def test_elu_kernel_vs_2d_quadrature(self):
        # The 2d cross-check integrates over a rotated plane where the kink
        # line z2 = -x z1 / sqrt(1-x^2) never lands on panel edges, so the
        # brute rule itself carries a few 1e-7 of error.  The reduced kernel
        # uses exact inner integrals and is the more accurate of the two.
        spec = builtin("elu")
        for x in (-0.7, 0.3, 0.95):
            brute = pair_correlation(spec.evaluate, x, spec.kinks)
            assert spec.pair_kernel(x) == pytest.approx(brute, abs=5e-7)

    def test_g_monotone_on_unit_interval(self):
        for name in ("relu", "elu"):
            spec = builtin(name)
            xs = np.linspace(0.0, 1.0, 21)
            vals = [g_eval(x, spec, method="kernel") for x in xs]
            assert np.all(np.diff(vals) >= -1e-12)

    def test_domain_error(self):
        spec = builtin("relu")
        with pytest.raises(ValueError):
            g_eval(1.5, spec)
        with pytest.raises(ValueError):
            g_prime(-1.2, spec)

    def test_g1_nonnegative(self):
        for name in ("relu", "elu", "he2he3", "he3", "identity"):
            assert g_eval(1.0, builtin(name)) >= 0.0


class TestCentering:
    def test_centered_removes_mean(self):
        spec = builtin("elu").centered()
        assert spec.mu[0] == 0.0
        z, = np.array([0.37]),
        assert spec.evaluate(z)[0] == pytest.approx(builtin("elu").evaluate(z)[0] - ELU_MU_EXACT[0], abs=1e-12)

    def test_centered_second_moment(self):
        raw = builtin("elu")
        cen = raw.centered()
        assert cen.nu == pytest.approx(raw.nu - raw.mu0**2, abs=1e-12)

    def test_centering_leaves_tail_alone(self):
        raw = builtin("elu")
        cen = raw.centered()
        for x in (0.2, 0.8):
            assert g_eval(x, cen, method="kernel") == pytest.approx(
                g_eval(x, raw, method="kernel"), abs=1e-9
            )

    def test_already_centered_is_identity(self):
        spec = builtin("he2")
        assert spec.centered() is spec


class TestTruncationInsensitivity:
    def test_relu_leading_coefficients_stable_in_L(self):
        rows = [builtin("relu", L=L).mu[:5] for L in (30, 50, 80)]
        np.testing.assert_allclose(rows[0], rows[1], atol=1e-10)
        np.testing.assert_allclose(rows[1], rows[2], atol=1e-10)


@st.composite
def small_he_polys(draw):
    coeffs = draw(
        st.lists(st.floats(-1.5, 1.5).filter(lambda a: abs(a) > 1e-3), min_size=2, max_size=5)
    )
    return tuple(coeffs)


class TestPolynomialProperties:
    @given(small_he_polys())
    @settings(max_examples=25, deadline=None)
    def test_quadrature_recovers_algebraic_coefficients(self, he):
        spec = builtin("custom-poly", he_coeffs=he)
        mu_quad = hermite_coefficients(spec.evaluate, 10)
        np.testing.assert_allclose(mu_quad[: len(he)], spec.mu[: len(he)], atol=1e-7)

    @given(small_he_polys())
    @settings(max_examples=25, deadline=None)
    def test_second_moment_identity(self, he):
        spec = builtin("custom-poly", he_coeffs=he)
        # nu = sum_l mu_l^2 / l! exactly for polynomials
        assert second_moment(spec.evaluate) == pytest.approx(float(np.sum(spec.c2)), rel=1e-9)

    @given(small_he_polys(), st.floats(0.01, 0.99))
    @settings(max_examples=25, deadline=None)
    def test_series_kernel_agreement_and_monotonicity(self, he, x):
        spec = builtin("custom-poly", he_coeffs=he)
        assert g_eval(x, spec, "series") == pytest.approx(g_eval(x, spec, "kernel"), abs=1e-8)
        assert g_eval(x, spec) <= g_eval(1.0, spec) + 1e-12


class TestNuSeriesInvariant:
    def test_second_moment_matches_series_within_tail(self):
        for name in ("relu", "elu"):
            spec = builtin(name)
            series_nu = float(np.sum(spec.c2))
            assert series_nu <= spec.nu + 1e-12
            assert spec.nu - series_nu == pytest.approx(spec.tail_bound, abs=1e-10)
            assert spec.tail_bound < 5e-4  # documented slow-tail residual at L=50

    def test_smooth_specs_hit_tail_tolerance(self):
        for name in ("he2", "he3", "he2he3", "identity"):
            spec = builtin(name)
            assert spec.nu - float(np.sum(spec.c2)) == pytest.approx(0.0, abs=1e-8)
