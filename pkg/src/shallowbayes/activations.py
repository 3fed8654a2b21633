"""Hermite representation of activations and the kernel tail g.

An activation sigma acting on a standard-normal preactivation is expanded in
probabilists' Hermite polynomials, sigma(z) = sum_l (mu_l / l!) He_l(z) with
mu_l = E[He_l(z) sigma(z)].  The linear and quadratic coefficients mu_1, mu_2
drive the components of the network kernel a student can learn sample-
efficiently; everything above order 2 enters only through the tail

    g(x) = sum_{l >= 3} (mu_l^2 / l!) x^l,        |x| <= 1,

which equivalently is g(x) = K(x) - mu_0^2 - mu_1^2 x - (mu_2^2 / 2) x^2 in
terms of the pair correlation K(x) = E[sigma(y) sigma(z)] over centred unit
Gaussians with E[y z] = x.

Two evaluation paths for g are kept alive on purpose:

* the truncated Hermite series (exact for polynomial activations, and with
  an observable tail bound otherwise), and
* the pair-correlation path (closed form for ReLU, a 1D reduction with exact
  inner Gaussian integrals for ELU, 2D quadrature for anything else),

so each can serve as an oracle for the other.  For activations with a kink
the series converges slowly (ReLU squared coefficients decay like l^{-5/2}),
so the kernel path is authoritative whenever the reported tail bound is not
negligible.
"""

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import log_ndtr, ndtr

SQRT_2PI = math.sqrt(2.0 * math.pi)

_GL_HALF_WIDTH = 14.0  # Gaussian mass outside +-14 is ~1e-43: invisible at double precision
_GL_POINTS_PER_PANEL = 16


class QuadratureWarning(UserWarning):
    """Raised as a warning when an adaptive quadrature fails to settle."""


# ---------------------------------------------------------------------------
# quadrature helpers
# ---------------------------------------------------------------------------

def _gauss_legendre_rule(n_panels: int, kinks: Sequence[float] = ()) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes/weights on [-14, 14] with the standard
    normal weight folded in.  Panel edges include any activation kinks so the
    integrand is smooth inside every panel."""
    edges = np.linspace(-_GL_HALF_WIDTH, _GL_HALF_WIDTH, n_panels + 1)
    keep = [k for k in kinks if abs(k) < _GL_HALF_WIDTH]
    edges = np.unique(np.concatenate([edges, np.asarray(keep, dtype=float)]))
    xg, wg = np.polynomial.legendre.leggauss(_GL_POINTS_PER_PANEL)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    z = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
    w = (half[:, None] * wg[None, :]).ravel()
    w = w * np.exp(-0.5 * z * z) / SQRT_2PI
    return z, w


def _orthonormal_hermite(z: np.ndarray, L: int) -> np.ndarray:
    """Values of He_l(z)/sqrt(l!) for l = 0..L, shape (L+1,) + z.shape.

    The normalised three-term recurrence hat_He_{l+1} = (z hat_He_l -
    sqrt(l) hat_He_{l-1}) / sqrt(l+1) stays O(exp(z^2/4)) and does not
    overflow for |z| <= 14 and L up to a few hundred.
    """
    z = np.asarray(z, dtype=float)
    vals = np.empty((L + 1,) + z.shape)
    vals[0] = 1.0
    if L >= 1:
        vals[1] = z
    for l in range(1, L):
        vals[l + 1] = (z * vals[l] - math.sqrt(l) * vals[l - 1]) / math.sqrt(l + 1)
    return vals


def hermite_coefficients(sigma: Callable, L: int, kinks: Sequence[float] = (),
                         tol: float = 1e-8) -> np.ndarray:
    """Quadrature Hermite coefficients mu_0..mu_L of ``sigma``.

    Uses the composite Gauss-Legendre rule above with panel doubling
    (8 -> 16 -> 32 -> ...) until two successive refinements agree to ``tol``
    on every coefficient.  A plain Gauss-Hermite rule stalls near 1e-3 for
    kinked activations, which is why the panel rule is the base scheme.

    Emits QuadratureWarning (and returns the finest-level values) if the
    doubling never settles.
    """
    if L < 4:
        raise ValueError("truncation order must be at least 4")
    prev = None
    mu = None
    sqrt_fact = np.cumprod(np.concatenate([[1.0], np.sqrt(np.arange(1, L + 1))]))
    for n_panels in (8, 16, 32, 64, 128):
        z, w = _gauss_legendre_rule(n_panels, kinks)
        hv = _orthonormal_hermite(z, L)
        c = hv @ (w * np.asarray(sigma(z), dtype=float))
        mu = c * sqrt_fact
        # agreement is judged on the orthonormal coefficients c_l = mu_l/sqrt(l!),
        # which are O(sqrt(nu)); raw mu_l grow like sqrt(l!) and would swamp tol
        if prev is not None and np.max(np.abs(c - prev)) <= tol:
            return mu
        prev = c
    warnings.warn(
        f"Hermite coefficient quadrature did not settle to {tol:g} after panel doubling",
        QuadratureWarning,
    )
    return mu


def second_moment(sigma: Callable, kinks: Sequence[float] = ()) -> float:
    """nu = E[sigma(z)^2] under the standard normal, by the same panel rule."""
    z, w = _gauss_legendre_rule(64, kinks)
    s = np.asarray(sigma(z), dtype=float)
    return float(np.dot(w, s * s))


# ---------------------------------------------------------------------------
# activation spec
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ActivationSpec:
    """An activation plus its Hermite data.

    mu[l] is the l-th Hermite coefficient, L the truncation order, nu the
    second moment E[sigma^2].  ``kinks`` lists points where sigma is not
    smooth (quadrature breakpoints).  ``he_coeffs`` is set for exact
    polynomial activations (sigma = sum_l he_coeffs[l] He_l), in which case
    series formulas are exact.  ``pair_kernel``/``pair_kernel_prime`` hold
    closed-form or reduced-quadrature K(x), K'(x) when available.
    """

    name: str
    evaluate: Callable
    mu: np.ndarray
    L: int
    nu: float
    kinks: tuple = ()
    he_coeffs: Optional[tuple] = None
    pair_kernel: Optional[Callable] = None
    pair_kernel_prime: Optional[Callable] = None
    tail_bound: float = 0.0

    @property
    def c2(self) -> np.ndarray:
        """Normalised squared coefficients mu_l^2 / l!."""
        log_fact = np.concatenate([[0.0], np.cumsum(np.log(np.arange(1, self.L + 1)))])
        return self.mu**2 / np.exp(log_fact)

    @property
    def mu0(self) -> float:
        return float(self.mu[0])

    @property
    def mu1(self) -> float:
        return float(self.mu[1])

    @property
    def mu2(self) -> float:
        return float(self.mu[2])

    def centered(self) -> "ActivationSpec":
        """Spec with the Gaussian mean removed (mu_0 forced to 0).

        All theory formulas consume the centred spec; the raw mu_0 only
        matters for the experiment-side mean-removal steps.
        """
        if self.mu[0] == 0.0:
            return self
        m0 = float(self.mu[0])
        raw = self.evaluate
        mu = self.mu.copy()
        mu[0] = 0.0
        ker = self.pair_kernel
        return replace(
            self,
            name=self.name + "-centered",
            evaluate=lambda z, _f=raw, _m=m0: _f(z) - _m,
            mu=mu,
            nu=self.nu - m0**2,
            he_coeffs=None if self.he_coeffs is None
            else (0.0,) + tuple(self.he_coeffs[1:]),
            pair_kernel=None if ker is None
            else (lambda x, _k=ker, _m=m0: _k(x) - _m**2),
        )


# ---------------------------------------------------------------------------
# pair-correlation kernels
# ---------------------------------------------------------------------------

def _relu_kernel(x):
    x = np.clip(np.asarray(x, dtype=float), -1.0, 1.0)
    return (np.sqrt(1.0 - x * x) + x * (np.pi / 2.0 + np.arcsin(x))) / (2.0 * np.pi)


def _relu_kernel_prime(x):
    x = np.clip(np.asarray(x, dtype=float), -1.0, 1.0)
    return 0.25 + np.arcsin(x) / (2.0 * np.pi)


def _elu(z):
    z = np.asarray(z, dtype=float)
    return np.where(z > 0.0, z, np.expm1(np.minimum(z, 0.0)))


def _elu_conditional_mean(a, b):
    """E_u[elu(a + b u)] for standard normal u, elementwise; requires b >= 0."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.empty(np.broadcast(a, b).shape)
    small = b < 1e-12
    r = np.where(small, 1.0, a / np.where(small, 1.0, b))
    phi = np.exp(-0.5 * r * r) / SQRT_2PI
    # E[(a+bu) 1{a+bu>0}] + E[(e^{a+bu}-1) 1{a+bu<=0}], each in closed form;
    # the exp term is assembled in log space to survive large |a/b|.
    expterm = np.exp(a + 0.5 * b * b + log_ndtr(-r - b))
    val = a * ndtr(r) + b * phi + expterm - ndtr(-r)
    out[...] = np.where(small, _elu(a), val)
    return out


def _elu_conditional_mean_prime(a, b):
    """E_u[elu'(a + b u)] with elu'(t) = 1 for t > 0, e^t otherwise."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    small = b < 1e-12
    r = np.where(small, 1.0, a / np.where(small, 1.0, b))
    val = ndtr(r) + np.exp(a + 0.5 * b * b + log_ndtr(-r - b))
    direct = np.where(a > 0.0, 1.0, np.exp(np.minimum(a, 0.0)))
    return np.where(small, direct, val)


def _elu_kernel(x):
    xs = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
    z, w = _gauss_legendre_rule(48, kinks=(0.0,))
    out = np.empty(xs.shape)
    for i, xi in enumerate(xs):
        b = math.sqrt(max(0.0, 1.0 - xi * xi))
        inner = _elu_conditional_mean(xi * z, b)
        out[i] = np.dot(w, _elu(z) * inner)
    return out.reshape(np.shape(x)) if np.ndim(x) else float(out[0])


def _elu_kernel_prime(x):
    # K'(x) = E[sigma'(y) sigma'(z)] for jointly Gaussian (y, z), a classical
    # Gaussian integration-by-parts identity.
    xs = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
    z, w = _gauss_legendre_rule(48, kinks=(0.0,))
    dz = np.where(z > 0.0, 1.0, np.exp(np.minimum(z, 0.0)))
    out = np.empty(xs.shape)
    for i, xi in enumerate(xs):
        b = math.sqrt(max(0.0, 1.0 - xi * xi))
        inner = _elu_conditional_mean_prime(xi * z, b)
        out[i] = np.dot(w, dz * inner)
    return out.reshape(np.shape(x)) if np.ndim(x) else float(out[0])


def pair_correlation(sigma: Callable, x: float, kinks: Sequence[float] = ()) -> float:
    """K(x) = E[sigma(y) sigma(z)] with corr(y, z) = x, by 2D panel quadrature."""
    if abs(x) > 1.0:
        raise ValueError("correlation outside [-1, 1]")
    z, w = _gauss_legendre_rule(32, kinks)
    if 1.0 - abs(x) < 1e-12:
        s = np.asarray(sigma(z), dtype=float)
        other = np.asarray(sigma(math.copysign(1.0, x) * z), dtype=float)
        return float(np.dot(w, s * other))
    b = math.sqrt(1.0 - x * x)
    s = np.asarray(sigma(z), dtype=float)
    inner = np.asarray(sigma(x * z[:, None] + b * z[None, :]), dtype=float)
    return float((w * s) @ inner @ w)


# ---------------------------------------------------------------------------
# the tail g and its derivative
# ---------------------------------------------------------------------------

def _series_tail(spec: ActivationSpec, x: float, derivative: bool = False) -> float:
    c2 = spec.c2
    ells = np.arange(3, spec.L + 1, dtype=float)
    coef = c2[3:]
    if derivative:
        return float(np.sum(coef * ells * np.asarray(x)**(ells - 1)))
    return float(np.sum(coef * np.asarray(x)**ells))


def _kernel_tail(spec: ActivationSpec, x: float, derivative: bool = False) -> float:
    mu0, mu1, mu2 = spec.mu0, spec.mu1, spec.mu2
    if derivative:
        if spec.pair_kernel_prime is not None:
            kp = float(spec.pair_kernel_prime(x))
        else:
            # central difference on the kernel path, step tuned for 1e-8 K error
            h = 1e-4 * max(1.0, abs(x))
            lo, hi = max(-1.0, x - h), min(1.0, x + h)
            kp = (_kernel_value(spec, hi) - _kernel_value(spec, lo)) / (hi - lo)
        return kp - mu1**2 - mu2**2 * x
    return _kernel_value(spec, x) - mu0**2 - mu1**2 * x - 0.5 * mu2**2 * x * x


def _kernel_value(spec: ActivationSpec, x: float) -> float:
    if spec.pair_kernel is not None:
        return float(spec.pair_kernel(x))
    return pair_correlation(spec.evaluate, x, spec.kinks)


def g_eval(x: float, spec: ActivationSpec, method: str = "auto") -> float:
    """Kernel tail g(x) for |x| <= 1.

    method:
      "series"  truncated Hermite series (exact for polynomial specs),
      "kernel"  pair-correlation path,
      "auto"    series when the spec's tail bound is negligible, else kernel.
    """
    x = float(x)
    if abs(x) > 1.0 + 1e-12:
        raise ValueError(f"g is defined on [-1, 1], got x={x}")
    x = min(1.0, max(-1.0, x))
    if method == "auto":
        method = "series" if spec.tail_bound <= 1e-9 else "kernel"
    if method == "series":
        return _series_tail(spec, x)
    if method == "kernel":
        return _kernel_tail(spec, x)
    raise ValueError(f"unknown g method {method!r}")


def g_prime(x: float, spec: ActivationSpec, method: str = "auto") -> float:
    """Derivative of the kernel tail; same path selection as g_eval."""
    x = float(x)
    if abs(x) > 1.0 + 1e-12:
        raise ValueError(f"g' is defined on [-1, 1], got x={x}")
    x = min(1.0, max(-1.0, x))
    if method == "auto":
        method = "series" if spec.tail_bound <= 1e-9 else "kernel"
    if method == "series":
        return _series_tail(spec, x, derivative=True)
    if method == "kernel":
        return _kernel_tail(spec, x, derivative=True)
    raise ValueError(f"unknown g method {method!r}")


def derivative(spec: ActivationSpec) -> Callable:
    """Pointwise derivative sigma'(z) as a vectorised callable.

    Exact for every builtin: polynomial specs differentiate term by term
    (He_l' = l He_{l-1}), relu takes the a.e. derivative 1{z > 0}, and elu
    is C^1 with elu'(z) = e^z below zero.  Needed by gradient-based
    samplers; raises for specs with no known derivative rule.
    """
    if spec.he_coeffs is not None:
        he = spec.he_coeffs
        deg = len(he) - 1

        def d_evaluate(z, _he=he, _deg=deg):
            z = np.asarray(z, dtype=float)
            order = max(_deg - 1, 1)
            vals = _orthonormal_hermite(z, order)
            sqrt_fact = np.cumprod(np.concatenate([[1.0], np.sqrt(np.arange(1, order + 1))]))
            out = np.zeros_like(z)
            for l, a in enumerate(_he):
                if l >= 1 and a != 0.0:
                    out += a * l * vals[l - 1] * sqrt_fact[l - 1]
            return out

        return d_evaluate
    if spec.name.startswith("relu"):
        return lambda z: (np.asarray(z, dtype=float) > 0.0).astype(float)
    if spec.name.startswith("elu"):
        return lambda z: np.where(np.asarray(z, dtype=float) > 0.0, 1.0,
                                  np.exp(np.minimum(np.asarray(z, dtype=float), 0.0)))
    raise ValueError(f"no derivative rule for activation {spec.name!r}")


# ---------------------------------------------------------------------------
# builtins
# ---------------------------------------------------------------------------

def _poly_from_he(name: str, he_coeffs: Sequence[float], L: int) -> ActivationSpec:
    he = tuple(float(a) for a in he_coeffs)
    deg = len(he) - 1

    def evaluate(z, _he=he, _deg=deg):
        z = np.asarray(z, dtype=float)
        vals = _orthonormal_hermite(z, max(_deg, 1))
        sqrt_fact = np.cumprod(np.concatenate([[1.0], np.sqrt(np.arange(1, max(_deg, 1) + 1))]))
        out = np.zeros_like(z)
        for l, a in enumerate(_he):
            if a != 0.0:
                out += a * vals[l] * sqrt_fact[l]
        return out

    mu = np.zeros(L + 1)
    for l, a in enumerate(he):
        mu[l] = a * math.factorial(l)
    nu = sum(a * a * math.factorial(l) for l, a in enumerate(he))

    c2 = [mu[l] ** 2 / math.factorial(l) for l in range(deg + 1)]

    def kernel(x, _c2=tuple(c2)):
        x = np.asarray(x, dtype=float)
        return sum(c * x**l for l, c in enumerate(_c2))

    def kernel_prime(x, _c2=tuple(c2)):
        x = np.asarray(x, dtype=float)
        return sum(c * l * x ** (l - 1) for l, c in enumerate(_c2) if l >= 1)

    return ActivationSpec(
        name=name, evaluate=evaluate, mu=mu, L=L, nu=float(nu),
        he_coeffs=he, pair_kernel=kernel, pair_kernel_prime=kernel_prime,
        tail_bound=0.0,
    )


def builtin(name: str, L: int = 50, he_coeffs: Optional[Sequence[float]] = None) -> ActivationSpec:
    """Construct a named activation spec.

    Known names: relu, elu, he2, he3, he2he3, identity, custom-poly.
    ``custom-poly`` requires ``he_coeffs``, the expansion of sigma in plain
    He_l (sigma = sum_l he_coeffs[l] He_l(x)).
    """
    if name == "identity":
        return _poly_from_he("identity", (0.0, 1.0), L)
    if name == "he2":
        return _poly_from_he("he2", (0.0, 0.0, 1.0 / math.sqrt(2.0)), L)
    if name == "he3":
        return _poly_from_he("he3", (0.0, 0.0, 0.0, 1.0 / math.sqrt(6.0)), L)
    if name == "he2he3":
        return _poly_from_he("he2he3", (0.0, 0.0, 1.0 / math.sqrt(2.0), 1.0 / 6.0), L)
    if name == "custom-poly":
        if he_coeffs is None:
            raise ValueError("custom-poly needs he_coeffs")
        return _poly_from_he("custom-poly", he_coeffs, L)
    if name == "relu":
        evaluate = lambda z: np.maximum(np.asarray(z, dtype=float), 0.0)
        kinks = (0.0,)
        mu = hermite_coefficients(evaluate, L, kinks)
        nu = second_moment(evaluate, kinks)
        spec = ActivationSpec(
            name="relu", evaluate=evaluate, mu=mu, L=L, nu=nu, kinks=kinks,
            pair_kernel=_relu_kernel, pair_kernel_prime=_relu_kernel_prime,
        )
        return replace(spec, tail_bound=max(0.0, nu - float(np.sum(spec.c2))))
    if name == "elu":
        kinks = (0.0,)
        mu = hermite_coefficients(_elu, L, kinks)
        nu = second_moment(_elu, kinks)
        spec = ActivationSpec(
            name="elu", evaluate=_elu, mu=mu, L=L, nu=nu, kinks=kinks,
            pair_kernel=_elu_kernel, pair_kernel_prime=_elu_kernel_prime,
        )
        return replace(spec, tail_bound=max(0.0, nu - float(np.sum(spec.c2))))
    raise ValueError(f"unknown activation {name!r}")
