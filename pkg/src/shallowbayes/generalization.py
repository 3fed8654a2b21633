"""Test-error formulas, from solved overlaps and from weight samples.

The theory side turns a solved branch into the Bayes-optimal mean-square
error and its single-sample (Gibbs) counterpart.  The empirical side
estimates the same quantity from posterior weight samples through tensor
overlaps with the teacher: orders one and two are computed exactly, the
order >= 3 tail is summed through the kernel tail g evaluated at the
plain weight overlap, which is how those orders behave inside quadratic
forms at large width.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from shallowbayes.activations import ActivationSpec, g_eval
from shallowbayes.model import TeacherInstance
from shallowbayes.saddle import (
    ChannelModel,
    PhaseSolution,
    SaddleWarning,
    TheoryParams,
    _gauss_hermite,
)

__all__ = [
    "EstimationWarning",
    "ErrorReport",
    "eps_opt_gaussian",
    "eps_opt_generic",
    "error_report",
    "eps_from_samples",
    "tensor_overlaps",
    "gibbs_error_relation",
    "gibbs_from_bayes",
]

ESTIMATOR_MODES = ("nishimori", "no_nishimori")


class EstimationWarning(UserWarning):
    """A sample-based error estimate landed below the noise floor."""


@dataclass(frozen=True)
class ErrorReport:
    """Mean-square test error split into its overlap components.

    ``delta`` is the irreducible error (the label-noise variance for the
    Gaussian channel, the quadrature value of E[Var(y | lam)] otherwise).
    The three ``*_term`` fields decompose eps_opt - delta by tensor
    order: linear, quadratic, and the order >= 3 tail.  ``stderr`` is
    zero for theory reports and the spread over sample pairs for
    empirical ones.
    """

    eps_opt: float
    eps_gibbs: float
    delta: float
    phase: str
    linear_term: float
    quadratic_term: float
    tail_term: float
    stderr: float = 0.0
    mode: str = "theory"
    n_terms: int = 0
    flags: tuple = field(default=())

    def __post_init__(self):
        for name in ("eps_opt", "eps_gibbs", "delta", "linear_term",
                     "quadratic_term", "tail_term", "stderr"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @property
    def eps_minus_delta(self) -> float:
        return self.eps_opt - self.delta

    def to_json_dict(self) -> dict:
        out = {
            "eps_opt": self.eps_opt,
            "eps_gibbs": self.eps_gibbs,
            "eps_minus_delta": self.eps_minus_delta,
            "delta": self.delta,
            "phase": self.phase,
            "linear_term": self.linear_term,
            "quadratic_term": self.quadratic_term,
            "tail_term": self.tail_term,
            "stderr": self.stderr,
            "mode": self.mode,
            "n_terms": self.n_terms,
            "flags": list(self.flags),
        }
        return out


def eps_opt_gaussian(q2: float, qW: float, params: TheoryParams) -> float:
    """Bayes-optimal error from centred overlaps, Gaussian channel.

    ``q2`` is the centred order-2 overlap (self value 1) as reported by
    the branch solvers; the readout-mean shift cancels in the difference,
    so the same expression covers every readout prior.
    """
    chan = params.effective_channel
    if chan.kind != "gaussian":
        raise ValueError("eps_opt_gaussian needs a Gaussian channel; "
                         "use eps_opt_generic")
    spec = params.activation.centered()
    return (chan.delta + 0.5 * spec.mu2 ** 2 * (1.0 - q2)
            + g_eval(1.0, spec) - g_eval(qW, spec))


def eps_opt_generic(qK: float, rK: float, channel: ChannelModel,
                    gh_points: int | None = None,
                    mass_tol: float = 1e-6) -> float:
    """Bayes-optimal error for an arbitrary output channel.

    Evaluates E[m2(lam0)] - E[m1(lam0) m1(lam1)] over the bivariate
    Gaussian pair with variance rK and covariance qK, where m1 and m2
    are the first two conditional label moments.  Gaussian channels take
    the closed form delta + rK - qK.  The conditional moments come from
    a trapezoid y-grid; a grid that truncates the label law is flagged
    the same way as in the channel potential.
    """
    if not 0.0 <= qK <= rK + 1e-12:
        raise ValueError(f"need 0 <= qK <= rK, got qK={qK}, rK={rK}")
    if channel.kind == "gaussian":
        return channel.delta + rK - qK
    n = channel.gh_points if gh_points is None else int(gh_points)
    scale = math.sqrt(rK + channel.noise_scale ** 2)
    y = channel.y_center + np.linspace(-1.0, 1.0, channel.y_points) \
        * channel.y_halfwidth * scale

    def moments(lam, weights):
        dens = np.asarray(channel.density(y[:, None], lam[None, :]), dtype=float)
        mass = float(weights @ np.trapezoid(dens, y, axis=0))
        if abs(mass - 1.0) > mass_tol:
            warnings.warn(
                f"label grid captures probability mass {mass:.8f}; widen "
                "y_halfwidth or adjust y_center", SaddleWarning, stacklevel=3)
        m1 = np.trapezoid(y[:, None] * dens, y, axis=0)
        m2 = np.trapezoid(y[:, None] ** 2 * dens, y, axis=0)
        return m1, m2

    if rK <= 0.0:
        m1, m2 = moments(np.zeros(1), np.ones(1))
        return float(m2[0] - m1[0] ** 2)

    xi, w = _gauss_hermite(n)
    lam0 = math.sqrt(rK) * xi
    m1_0, m2_0 = moments(lam0, w)
    term1 = float(w @ m2_0)
    # conditional mean of lam1 given lam0 plus the orthogonal remainder
    cond = (qK / math.sqrt(rK)) * xi
    resid = math.sqrt(max(rK - qK ** 2 / rK, 0.0))
    lam1 = (cond[:, None] + resid * xi[None, :]).ravel()
    m1_1 = moments(lam1, np.outer(w, w).ravel())[0].reshape(xi.size, xi.size)
    term2 = float(w @ (m1_0 * (m1_1 @ w)))
    return term1 - term2


def error_report(solution: PhaseSolution, params: TheoryParams) -> ErrorReport:
    """Theory-side report for a solved branch."""
    chan = params.effective_channel
    spec = params.activation.centered()
    quad = 0.5 * spec.mu2 ** 2 * (1.0 - solution.state.q2)
    tail = g_eval(1.0, spec) - g_eval(solution.state.qW, spec)
    if chan.kind == "gaussian":
        noise = chan.delta
        eps = noise + quad + tail
    else:
        noise = eps_opt_generic(solution.r_K, solution.r_K, chan)
        eps = eps_opt_generic(solution.q_K, solution.r_K, chan)
    return ErrorReport(
        eps_opt=eps, eps_gibbs=noise + 2.0 * (eps - noise), delta=noise,
        phase=solution.phase, linear_term=0.0, quadratic_term=quad,
        tail_term=tail, mode="theory", flags=solution.flags)


def tensor_overlaps(Wa: np.ndarray, va: np.ndarray, Wb: np.ndarray,
                    vb: np.ndarray, ell_max: int = 2):
    """Exact tensor overlaps between two weight configurations.

    Returns (qW, [Q_1, ..., Q_ell_max]) where qW is the plain weight
    overlap tr(Wa Wb^T) / (k d) and Q_ell contracts the elementwise
    ell-th power of the row-overlap matrix with the readouts.  Cost grows
    linearly in ell_max through Hadamard powers; orders beyond 5 are of
    no diagnostic use here and are refused.
    """
    if not 1 <= ell_max <= 5:
        raise ValueError("ell_max must be between 1 and 5")
    Wa = np.asarray(Wa, dtype=float)
    Wb = np.asarray(Wb, dtype=float)
    k, d = Wa.shape
    if Wb.shape != (k, d):
        raise ValueError("weight shapes differ")
    omega = (Wa @ Wb.T) / d
    qW = float(np.trace(omega)) / k
    power = np.ones_like(omega)
    qs = []
    for _ in range(ell_max):
        power = power * omega
        qs.append(float(np.asarray(va) @ power @ np.asarray(vb)) / k)
    return qW, qs


def _pair_components(Wa, va, Wb, vb, spec: ActivationSpec):
    """Kernel K(a, b) split by tensor order, tail summed through g."""
    qW, (q1, q2) = tensor_overlaps(Wa, va, Wb, vb, 2)
    k = Wa.shape[0]
    rv = float(np.asarray(va) @ np.asarray(vb)) / k
    # finite-size qW can stray past 1 where g is undefined; the limit
    # object lives on [-1, 1]
    tail = rv * g_eval(min(1.0, max(-1.0, qW)), spec)
    return spec.mu1 ** 2 * q1, 0.5 * spec.mu2 ** 2 * q2, tail


def eps_from_samples(teacher: TeacherInstance, samples, spec: ActivationSpec,
                     mode: str = "nishimori", *, delta: float = 0.0,
                     v_samples=None, phase: str = "sample") -> ErrorReport:
    """Estimate the optimal error from posterior weight samples.

    ``mode`` picks the overlap combination: "nishimori" uses
    K(0,0) - K(0,a) per sample, valid when the samples come from the
    matched posterior; "no_nishimori" uses the full
    K(0,0) - K(0,a) - K(0,b) + K(a,b) over sample pairs and stays valid
    for any sampler.  Readouts default to the teacher's (the fixed-v
    sampling protocol); pass ``v_samples`` when they were sampled too.
    """
    if mode not in ESTIMATOR_MODES:
        raise ValueError(f"mode must be one of {ESTIMATOR_MODES}")
    samples = [np.asarray(W, dtype=float) for W in samples]
    m = len(samples)
    if mode == "nishimori" and m < 1:
        raise ValueError("nishimori mode needs at least one sample")
    if mode == "no_nishimori" and m < 2:
        raise ValueError("no_nishimori mode needs at least two samples")
    if v_samples is None:
        v_samples = [teacher.v0] * m
    elif len(v_samples) != m:
        raise ValueError("one readout vector per weight sample")
    cspec = spec.centered()

    k00 = _pair_components(teacher.W0, teacher.v0, teacher.W0, teacher.v0,
                           cspec)
    k0a = [_pair_components(teacher.W0, teacher.v0, samples[a], v_samples[a],
                            cspec) for a in range(m)]
    terms = []
    if mode == "nishimori":
        for a in range(m):
            terms.append(tuple(t0 - ta for t0, ta in zip(k00, k0a[a])))
    else:
        for a in range(m):
            for b in range(a + 1, m):
                kab = _pair_components(samples[a], v_samples[a], samples[b],
                                       v_samples[b], cspec)
                terms.append(tuple(
                    t0 - ta - tb + tcross for t0, ta, tb, tcross
                    in zip(k00, k0a[a], k0a[b], kab)))
    arr = np.asarray(terms, dtype=float)
    lin, quad, tail = arr.mean(axis=0)
    totals = arr.sum(axis=1)
    est = float(totals.mean())
    stderr = float(totals.std(ddof=1) / math.sqrt(len(totals))) \
        if len(totals) > 1 else 0.0
    flags = ()
    if est < 0.0:
        flags = ("estimate below noise floor",)
        warnings.warn("error estimate fell below the noise floor "
                      f"({est:.3e} < 0); treat as estimation noise",
                      EstimationWarning, stacklevel=2)
    return ErrorReport(
        eps_opt=delta + est, eps_gibbs=delta + 2.0 * est, delta=delta,
        phase=phase, linear_term=float(lin), quadratic_term=float(quad),
        tail_term=float(tail), stderr=stderr, mode=mode,
        n_terms=len(totals), flags=flags)


def gibbs_error_relation(eps_gibbs: float, delta: float) -> float:
    """Optimal error implied by a single-sample (Gibbs) error."""
    if eps_gibbs < delta:
        warnings.warn(
            f"Gibbs error {eps_gibbs:.6g} below the noise floor {delta:.6g}; "
            "estimation noise", EstimationWarning, stacklevel=2)
    return delta + 0.5 * (eps_gibbs - delta)


def gibbs_from_bayes(eps_opt: float, delta: float) -> float:
    """Inverse map: Gibbs error implied by the optimal error."""
    return delta + 2.0 * (eps_opt - delta)
