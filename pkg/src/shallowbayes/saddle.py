"""Fixed points of the two learning phases and the transition between them.

The quadratic-regime posterior has two coexisting descriptions.  On the
"universal" branch the student only captures the linear and quadratic
parts of the teacher; everything of higher order acts as extra label
noise, and the remaining inference problem is extensive-rank matrix
sensing, whose entropic terms come from a
:class:`~shallowbayes.spectral.SpectralTable`.  On the "specialisation"
branch the student's rows align with individual teacher neurons (row
overlap qW > 0), which unlocks the kernel tail g and drops the error
below the universal floor.  Each branch is a small damped fixed-point
system; the equilibrium branch is whichever has the larger free entropy,
and the sample ratio where specialisation takes over is located by
bisection on the free-entropy gap.

Conventions.  The quadratic overlap q2 handled by the solvers is always
the centred one: the deterministic rank-one contribution of a nonzero
read-out mean is removed, so the self-overlap equals 1 for every
supported read-out prior and q2 lives in [0, 1].  The absolute second
moment r2 = 1 + gamma (E v)^2 and the kernel-level overlaps (q_K, r_K)
are reported on :class:`PhaseSolution` in uncentred units.  Free entropy
is per datum; mutual information is per inner-weight parameter.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from shallowbayes.activations import ActivationSpec, g_eval, g_prime
from shallowbayes.model import (
    V_PRIORS,
    W_PRIORS,
    ModelParams,
    r2_absolute,
    v_prior_mean,
)
from shallowbayes.spectral import SpectralTable


class SaddleWarning(UserWarning):
    """Non-fatal quadrature or iteration diagnostics."""


class SolverDomainError(RuntimeError):
    """An iterate left the domain where the potentials are defined."""


class ConvergenceError(RuntimeError):
    """A damped iteration exhausted its budget without meeting tol."""


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelModel:
    """Conditional law of a label given the noiseless network output.

    kind "gaussian" means additive centred Gaussian noise of variance
    ``delta`` and unlocks every closed form in this module.  For kind
    "generic" supply ``density(y, lam)``, a vectorised normalised
    conditional density (must broadcast its two array arguments); the
    free-entropy integrals then run through nested Gauss-Hermite
    quadrature plus a trapezoid y-grid of ``y_points`` points spanning
    ``y_halfwidth`` times the typical label spread around ``y_center``.
    ``noise_scale`` is the channel's own spread, used only to size that
    grid.
    """

    kind: str = "gaussian"
    delta: float = 0.0
    density: Optional[Callable] = None
    noise_scale: float = 1.0
    y_center: float = 0.0
    y_halfwidth: float = 10.0
    y_points: int = 801
    gh_points: int = 61

    def __post_init__(self):
        if self.kind not in ("gaussian", "generic"):
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if self.kind == "gaussian" and self.delta <= 0.0:
            raise ValueError("gaussian channel needs delta > 0")
        if self.kind == "generic":
            if self.density is None:
                raise ValueError("generic channel needs a density callable")
            if self.noise_scale <= 0.0 or self.y_points < 51 or self.gh_points < 11:
                raise ValueError("generic-channel quadrature settings out of range")

    @classmethod
    def gaussian(cls, delta: float) -> "ChannelModel":
        return cls(kind="gaussian", delta=float(delta))

    @classmethod
    def generic(cls, density: Callable, **kwargs) -> "ChannelModel":
        return cls(kind="generic", density=density, **kwargs)


@dataclass(frozen=True)
class TheoryParams:
    """One theory point in the quadratic data regime.

    ``channel=None`` selects the Gaussian channel with variance ``delta``.
    ``activation`` may be raw; formulas consume its centred version.
    """

    gamma: float
    alpha: float
    delta: float
    w_prior: str
    v_prior: str
    activation: ActivationSpec
    channel: Optional[ChannelModel] = None

    def __post_init__(self):
        if self.gamma <= 0.0:
            raise ValueError("gamma must be positive")
        if self.alpha <= 0.0:
            raise ValueError("alpha must be positive")
        if self.w_prior not in W_PRIORS:
            raise ValueError(f"w_prior must be one of {W_PRIORS}")
        if self.v_prior not in V_PRIORS:
            raise ValueError(f"v_prior must be one of {V_PRIORS}")
        if self.channel is None and self.delta <= 0.0:
            raise ValueError("gaussian-channel theory needs delta > 0")

    @classmethod
    def from_model(cls, params: ModelParams,
                   channel: Optional[ChannelModel] = None) -> "TheoryParams":
        return cls(gamma=params.gamma, alpha=params.alpha, delta=params.delta,
                   w_prior=params.w_prior, v_prior=params.v_prior,
                   activation=params.activation, channel=channel)

    @property
    def effective_channel(self) -> ChannelModel:
        if self.channel is not None:
            return self.channel
        return ChannelModel.gaussian(self.delta)


@dataclass(frozen=True)
class OverlapState:
    """Centred quadratic overlap, row overlap, and their conjugates."""

    q2: float
    q_hat2: float
    qW: float = 0.0
    q_hatW: float = 0.0

    def __post_init__(self):
        for v in (self.q2, self.q_hat2, self.qW, self.q_hatW):
            if not math.isfinite(v):
                raise ValueError("overlaps must be finite")
        if not -1e-9 <= self.q2 <= 1.0 + 1e-9:
            raise ValueError(f"centred q2 must lie in [0, 1], got {self.q2}")
        if not -1e-9 <= self.qW <= 1.0 + 1e-9:
            raise ValueError(f"qW must lie in [0, 1], got {self.qW}")
        if self.q_hat2 < 0.0 or self.q_hatW < 0.0:
            raise ValueError("conjugate overlaps must be nonnegative")


@dataclass(frozen=True)
class PhaseSolution:
    """A converged branch together with its thermodynamic potentials.

    ``f`` is the free entropy per datum, ``mi`` the mutual information per
    inner-weight parameter.  ``eps_opt`` is the Bayes-optimal test MSE on
    labels for the Gaussian channel; for a generic channel it is the MSE
    on the noiseless network output (no noise floor to add back).
    ``q_K``/``r_K``/``r2`` are reported in absolute (uncentred) units.
    ``flags`` carries labels such as "specialisation branch absent" or
    "degenerate".
    """

    phase: str
    state: OverlapState
    f: float
    mi: float
    eps_opt: float
    q_K: float
    r_K: float
    r2: float
    converged: bool
    iterations: int
    residual: float
    flags: tuple = ()


@dataclass(frozen=True)
class SolverConfig:
    """Damped-iteration settings shared by both branch solvers.

    Damping theta means x <- (1 - theta) x + theta * target; theta is
    halved (not below ``damping_floor``) whenever successive steps flip
    sign, which happens close to the transition.  ``strict=False``
    downgrades non-convergence from :class:`ConvergenceError` to a
    :class:`SaddleWarning` plus ``converged=False`` on the result.
    """

    tol: float = 1e-12
    max_iter: int = 50_000
    damping: float = 0.5
    damping_floor: float = 0.05
    quad_nodes: int = 101
    fd_step: float = 1e-4
    collapse_qW: float = 1e-3
    strict: bool = True


@lru_cache(maxsize=16)
def _gauss_hermite(n: int) -> tuple:
    nodes, weights = np.polynomial.hermite_e.hermegauss(n)
    return nodes, weights / math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# kernel-level overlaps and channel potentials
# ---------------------------------------------------------------------------

def q_K(q2: float, qW: float, qv: float, spec: ActivationSpec) -> float:
    """Kernel overlap between a posterior sample and the teacher.

    Takes absolute (uncentred) q2.  The linear part is always learned
    (mu1^2 term), the quadratic part contributes (mu2^2 / 2) q2, and rows
    aligned at overlap qW unlock the tail qv * g(qW).
    """
    spec = spec.centered()
    return spec.mu1 ** 2 + 0.5 * spec.mu2 ** 2 * q2 + qv * g_eval(qW, spec)


def r_K(spec: ActivationSpec, gamma: float, v_prior: str) -> float:
    """Kernel self-overlap, q_K evaluated at the self values (r2, 1, 1)."""
    return q_K(r2_absolute(gamma, v_prior), 1.0, 1.0, spec)


def psi_out_gaussian(qK: float, rK: float, delta: float) -> float:
    """Gaussian-channel potential, -(1/2) ln(2 pi V) - 1/2 with the
    unexplained variance V = delta + rK - qK."""
    var = delta + rK - qK
    if var <= 0.0:
        raise SolverDomainError(f"effective channel variance {var:.3e} <= 0")
    return -0.5 * math.log(2.0 * math.pi * var) - 0.5


def psi_out_generic(qK: float, rK: float, channel: ChannelModel,
                    mass_tol: float = 1e-6) -> float:
    """Channel potential for an arbitrary output density.

    Evaluates int dy E_xi[m(y, xi) ln m(y, xi)] where
    m(y, xi) = E_u density(y | xi sqrt(qK) + u sqrt(rK - qK)),
    by Gauss-Hermite quadrature in xi and u and a trapezoid y-grid.  The
    reconstructed label marginal must integrate to 1 within ``mass_tol``,
    otherwise a :class:`SaddleWarning` flags the grid as truncating.
    """
    if channel.kind != "generic":
        raise ValueError("psi_out_generic needs a generic ChannelModel")
    if not 0.0 <= qK <= rK + 1e-12:
        raise ValueError(f"need 0 <= qK <= rK, got qK={qK}, rK={rK}")
    xi, wxi = _gauss_hermite(channel.gh_points)
    u, wu = _gauss_hermite(channel.gh_points)
    lam = math.sqrt(max(qK, 0.0)) * xi[:, None] + math.sqrt(max(rK - qK, 0.0)) * u[None, :]
    scale = math.sqrt(rK + channel.noise_scale ** 2)
    y = channel.y_center + np.linspace(-1.0, 1.0, channel.y_points) * channel.y_halfwidth * scale
    dens = np.asarray(channel.density(y[:, None], lam.reshape(1, -1)), dtype=float)
    dens = dens.reshape(y.size, xi.size, u.size)
    m = dens @ wu                                   # (ny, n_xi)
    mass = float(np.trapezoid(m @ wxi, y))
    if abs(mass - 1.0) > mass_tol:
        warnings.warn(
            f"label grid captures probability mass {mass:.8f}; widen "
            "y_halfwidth or adjust y_center", SaddleWarning, stacklevel=2)
    mlogm = np.where(m > 0.0, m * np.log(np.where(m > 0.0, m, 1.0)), 0.0)
    return float(np.trapezoid(mlogm @ wxi, y))


def _psi_out(qK: float, rK: float, channel: ChannelModel) -> float:
    if channel.kind == "gaussian":
        return psi_out_gaussian(qK, rK, channel.delta)
    return psi_out_generic(qK, rK, channel)


def _dpsi_dqK(qK: float, rK: float, channel: ChannelModel, fd_step: float) -> float:
    """d psi_out / d qK; exact for the Gaussian channel, central finite
    difference (clamped inside [0, rK]) otherwise."""
    if channel.kind == "gaussian":
        var = channel.delta + rK - qK
        if var <= 0.0:
            raise SolverDomainError(f"effective channel variance {var:.3e} <= 0")
        return 0.5 / var
    h = fd_step * max(1.0, abs(qK))
    hi = min(qK + h, rK)
    lo = max(qK - h, 0.0)
    if hi <= lo:
        raise SolverDomainError("no room for a finite-difference step in qK")
    return (psi_out_generic(hi, rK, channel) - psi_out_generic(lo, rK, channel)) / (hi - lo)


def _channel_negentropy(channel: ChannelModel, rK: float) -> float:
    """E over the prior network output of int dy P(y|out) ln P(y|out)."""
    if channel.kind == "gaussian":
        return -0.5 * math.log(2.0 * math.pi * channel.delta) - 0.5
    xi, wxi = _gauss_hermite(channel.gh_points)
    lam = math.sqrt(max(rK, 0.0)) * xi
    scale = math.sqrt(rK + channel.noise_scale ** 2)
    y = channel.y_center + np.linspace(-1.0, 1.0, channel.y_points) * channel.y_halfwidth * scale
    dens = np.asarray(channel.density(y[:, None], lam[None, :]), dtype=float)
    plogp = np.where(dens > 0.0, dens * np.log(np.where(dens > 0.0, dens, 1.0)), 0.0)
    return float(np.trapezoid(plogp @ wxi, y))


# ---------------------------------------------------------------------------
# prior potentials for one inner weight
# ---------------------------------------------------------------------------

def _ln_cosh(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - math.log(2.0)


def psi_w(q_hatW: float, w_prior: str, n_nodes: int = 101) -> float:
    """Prior potential of a single inner weight at conjugate overlap q_hatW."""
    if q_hatW < 0.0:
        raise ValueError("q_hatW must be nonnegative")
    if w_prior == "gaussian":
        return 0.5 * q_hatW - 0.5 * math.log1p(q_hatW)
    if w_prior == "rademacher":
        xi, w = _gauss_hermite(n_nodes)
        return -0.5 * q_hatW + float(w @ _ln_cosh(math.sqrt(q_hatW) * xi + q_hatW))
    raise ValueError(f"w_prior must be one of {W_PRIORS}")


def m_w(q_hatW: float, w_prior: str, n_nodes: int = 101) -> float:
    """Row-overlap update E[w0 <w>] induced by the prior at q_hatW."""
    if q_hatW < 0.0:
        raise ValueError("q_hatW must be nonnegative")
    if w_prior == "gaussian":
        return q_hatW / (1.0 + q_hatW)
    if w_prior == "rademacher":
        xi, w = _gauss_hermite(n_nodes)
        val = float(w @ np.tanh(math.sqrt(q_hatW) * xi + q_hatW))
        # quadrature noise can stray a hair outside the overlap range
        return min(max(val, 0.0), 1.0)
    raise ValueError(f"w_prior must be one of {W_PRIORS}")


# ---------------------------------------------------------------------------
# free-entropy functionals (exposed for stationarity checks)
# ---------------------------------------------------------------------------

def free_entropy_universal(q2: float, q_hat2: float, params: TheoryParams,
                           table: SpectralTable) -> float:
    """Universal-branch functional at arbitrary centred (q2, q_hat2)."""
    spec = params.activation.centered()
    chan = params.effective_channel
    mv2 = v_prior_mean(params.v_prior) ** 2
    qK_val = q_K(q2 + params.gamma * mv2, 0.0, 1.0, spec)
    rK_val = r_K(spec, params.gamma, params.v_prior)
    psi = _psi_out(qK_val, rK_val, chan)
    return (psi + q_hat2 * (1.0 - q2) / (4.0 * params.alpha)
            - float(table.iota(q_hat2)) / params.alpha)


def free_entropy_specialisation(q2: float, q_hat2: float, qW: float,
                                q_hatW: float, params: TheoryParams,
                                n_nodes: int = 101) -> float:
    """Specialisation-branch functional at arbitrary overlaps (centred q2)."""
    spec = params.activation.centered()
    chan = params.effective_channel
    a = params.alpha
    mv2 = v_prior_mean(params.v_prior) ** 2
    qK_val = q_K(q2 + params.gamma * mv2, qW, 1.0, spec)
    rK_val = r_K(spec, params.gamma, params.v_prior)
    psi = _psi_out(qK_val, rK_val, chan)
    return ((params.gamma / a) * psi_w(q_hatW, params.w_prior, n_nodes)
            + psi
            + q_hat2 * (1.0 - q2) / (4.0 * a)
            - (params.gamma / (2.0 * a)) * qW * q_hatW
            - math.log1p(q_hat2 * (1.0 - qW * qW)) / (4.0 * a))


def _mutual_information_from_f(f: float, params: TheoryParams, rK_val: float) -> float:
    chan = params.effective_channel
    ratio = params.alpha / params.gamma
    return -ratio * f + ratio * _channel_negentropy(chan, rK_val)


# ---------------------------------------------------------------------------
# branch solvers
# ---------------------------------------------------------------------------

def _check_table(table: Optional[SpectralTable], params: TheoryParams) -> None:
    if table is None:
        raise ValueError("the universal branch needs a spectral table")
    if abs(table.gamma - params.gamma) > 1e-9 or table.v_prior != params.v_prior:
        raise ValueError(
            f"table built for (gamma={table.gamma}, v_prior={table.v_prior!r}) "
            f"does not match params (gamma={params.gamma}, v_prior={params.v_prior!r})")


def _clip01(x: float) -> float:
    return min(1.0, max(0.0, x))


def _nonconverged(name: str, res: float, cfg: SolverConfig) -> None:
    msg = f"{name} fixed point stalled at residual {res:.3e} after {cfg.max_iter} iterations"
    if cfg.strict:
        raise ConvergenceError(msg)
    warnings.warn(msg, SaddleWarning, stacklevel=3)


def solve_universal(params: TheoryParams, table: SpectralTable,
                    solver_cfg: Optional[SolverConfig] = None,
                    init: Optional[tuple] = None) -> PhaseSolution:
    """Damped fixed point of the universal branch.

    ``init`` optionally seeds centred (q2, q_hat2), for warm-started
    sweeps.  Raises :class:`ConvergenceError` in strict mode when the
    damping schedule is exhausted and :class:`SolverDomainError` if the
    effective channel variance closes.
    """
    cfg = solver_cfg or SolverConfig()
    _check_table(table, params)
    spec = params.activation.centered()
    chan = params.effective_channel
    alpha = params.alpha
    mu2sq = spec.mu2 ** 2
    mv2 = v_prior_mean(params.v_prior) ** 2
    rK_val = r_K(spec, params.gamma, params.v_prior)

    def qhat_of(q2: float) -> float:
        qK_val = q_K(q2 + params.gamma * mv2, 0.0, 1.0, spec)
        return 2.0 * alpha * mu2sq * _dpsi_dqK(qK_val, rK_val, chan, cfg.fd_step)

    def q2_of(qh: float) -> float:
        return 1.0 - _clip01(float(table.mmse(qh)))

    if mu2sq == 0.0:
        # the quadratic part is invisible to the data, so its conjugate
        # field stays at zero for every alpha and nothing beyond the
        # linear component is learned on this branch
        state = OverlapState(q2=q2_of(0.0), q_hat2=0.0)
        return _finish_universal(state, params, table, spec, chan, rK_val,
                                 converged=True, iterations=0, residual=0.0,
                                 flags=("quadratic part invisible (mu2 = 0)",))

    q2, qh = (0.5, 1.0) if init is None else (float(init[0]), float(init[1]))
    damping = cfg.damping
    prev_step = 0.0
    res = math.inf
    iterations = cfg.max_iter
    converged = False
    for it in range(1, cfg.max_iter + 1):
        qh_target = qhat_of(q2)
        res = max(abs(qh_target - qh) / max(1.0, abs(qh)), abs(q2_of(qh) - q2))
        if res < cfg.tol:
            iterations, converged = it - 1, True
            break
        qh = (1.0 - damping) * qh + damping * qh_target
        step = q2_of(qh) - q2
        if step * prev_step < 0.0:
            damping = max(cfg.damping_floor, 0.5 * damping)
        prev_step = step
        q2 = _clip01(q2 + damping * step)
    if not converged:
        _nonconverged("universal", res, cfg)
    state = OverlapState(q2=_clip01(q2), q_hat2=max(0.0, qh))
    return _finish_universal(state, params, table, spec, chan, rK_val,
                             converged=converged, iterations=iterations, residual=res)


def _finish_universal(state: OverlapState, params: TheoryParams,
                      table: SpectralTable, spec: ActivationSpec,
                      chan: ChannelModel, rK_val: float, converged: bool,
                      iterations: int, residual: float,
                      flags: tuple = ()) -> PhaseSolution:
    mv2 = v_prior_mean(params.v_prior) ** 2
    qK_val = q_K(state.q2 + params.gamma * mv2, 0.0, 1.0, spec)
    f = free_entropy_universal(state.q2, state.q_hat2, params, table)
    mi = _mutual_information_from_f(f, params, rK_val)
    eps = 0.5 * spec.mu2 ** 2 * (1.0 - state.q2) + g_eval(1.0, spec)
    if chan.kind == "gaussian":
        eps += chan.delta
    return PhaseSolution(
        phase="universal", state=state, f=f, mi=mi, eps_opt=eps,
        q_K=qK_val, r_K=rK_val, r2=r2_absolute(params.gamma, params.v_prior),
        converged=converged, iterations=iterations, residual=residual,
        flags=tuple(flags))


def solve_specialisation(params: TheoryParams,
                         solver_cfg: Optional[SolverConfig] = None,
                         init: Optional[tuple] = None) -> PhaseSolution:
    """Damped fixed point of the specialisation branch (table-free).

    Starts informatively at (q2, qW) = (0.99, 0.99) because qW = 0 is
    always a fixed point and an uninformative start would land there.
    ``init`` optionally overrides the seed with centred (q2, qW).  When
    the iteration nevertheless collapses to qW ~ 0, the result carries
    the flag "specialisation branch absent".
    """
    cfg = solver_cfg or SolverConfig()
    spec = params.activation.centered()
    chan = params.effective_channel
    a, gam = params.alpha, params.gamma
    mu2sq = spec.mu2 ** 2
    mv2 = v_prior_mean(params.v_prior) ** 2
    rK_val = r_K(spec, params.gamma, params.v_prior)

    def hats_of(q2: float, qW: float) -> tuple:
        qK_val = q_K(q2 + gam * mv2, qW, 1.0, spec)
        dpsi = _dpsi_dqK(qK_val, rK_val, chan, cfg.fd_step)
        qh2 = 2.0 * a * mu2sq * dpsi
        qhW = (qh2 * qW / (gam * (1.0 + qh2 * (1.0 - qW * qW)))
               + 2.0 * (a / gam) * dpsi * g_prime(qW, spec))
        return qh2, max(0.0, qhW)

    q2, qW = (0.99, 0.99) if init is None else (float(init[0]), float(init[1]))
    damping = cfg.damping
    prev_step = (0.0, 0.0)
    res = math.inf
    qh2 = qhW = 0.0
    iterations = cfg.max_iter
    converged = False
    for it in range(1, cfg.max_iter + 1):
        qh2, qhW = hats_of(q2, qW)
        qW_target = m_w(qhW, params.w_prior, cfg.quad_nodes)
        spread = 1.0 - qW * qW
        q2_target = 1.0 - spread / (1.0 + qh2 * spread)
        res = max(abs(qW_target - qW), abs(q2_target - q2))
        if res < cfg.tol:
            iterations, converged = it - 1, True
            break
        qW_new = _clip01(qW + damping * (qW_target - qW))
        spread_new = 1.0 - qW_new * qW_new
        q2_map = 1.0 - spread_new / (1.0 + qh2 * spread_new)
        step = (qW_new - qW, q2_map - q2)
        if step[0] * prev_step[0] < 0.0 or step[1] * prev_step[1] < 0.0:
            damping = max(cfg.damping_floor, 0.5 * damping)
        prev_step = step
        qW = qW_new
        q2 = _clip01(q2 + damping * (q2_map - q2))
    if not converged:
        _nonconverged("specialisation", res, cfg)

    flags = []
    if qW < cfg.collapse_qW:
        flags.append("specialisation branch absent")
    state = OverlapState(q2=_clip01(q2), q_hat2=max(0.0, qh2),
                         qW=_clip01(qW), q_hatW=qhW)
    f = free_entropy_specialisation(state.q2, state.q_hat2, state.qW,
                                    state.q_hatW, params, cfg.quad_nodes)
    mi = _mutual_information_from_f(f, params, rK_val)
    eps = (0.5 * mu2sq * (1.0 - state.q2)
           + g_eval(1.0, spec) - g_eval(state.qW, spec))
    if chan.kind == "gaussian":
        eps += chan.delta
    qK_val = q_K(state.q2 + gam * mv2, state.qW, 1.0, spec)
    return PhaseSolution(
        phase="specialisation", state=state, f=f, mi=mi, eps_opt=eps,
        q_K=qK_val, r_K=rK_val, r2=r2_absolute(gam, params.v_prior),
        converged=converged, iterations=iterations, residual=res,
        flags=tuple(flags))


def solve_equilibrium(params: TheoryParams, table: SpectralTable,
                      solver_cfg: Optional[SolverConfig] = None) -> PhaseSolution:
    """Solve both branches and return the one with larger free entropy.

    Near-ties (|f_sp - f_uni| < 1e-8) report the universal branch with the
    flag "degenerate"; an absent specialisation branch reports universal.
    """
    uni = solve_universal(params, table, solver_cfg)
    sp = solve_specialisation(params, solver_cfg)
    if "specialisation branch absent" in sp.flags:
        return uni
    if abs(sp.f - uni.f) < 1e-8:
        return replace(uni, flags=uni.flags + ("degenerate",))
    return sp if sp.f > uni.f else uni


# ---------------------------------------------------------------------------
# derived quantities and the transition finder
# ---------------------------------------------------------------------------

def free_entropy(solution: PhaseSolution, params: TheoryParams,
                 table: Optional[SpectralTable] = None) -> float:
    """Re-evaluate the branch functional at a solution's overlaps."""
    s = solution.state
    if solution.phase == "universal":
        _check_table(table, params)
        return free_entropy_universal(s.q2, s.q_hat2, params, table)
    return free_entropy_specialisation(s.q2, s.q_hat2, s.qW, s.q_hatW, params)


def mutual_information(solution: PhaseSolution, params: TheoryParams,
                       table: Optional[SpectralTable] = None) -> float:
    """Mutual information per inner-weight parameter at a solution."""
    f = free_entropy(solution, params, table)
    return _mutual_information_from_f(f, params, solution.r_K)


def find_alpha_sp(params: TheoryParams, table: SpectralTable,
                  bracket: tuple, tol: float = 1e-3,
                  solver_cfg: Optional[SolverConfig] = None) -> Optional[float]:
    """Smallest sample ratio where the specialisation free entropy reaches
    the universal one, located by bisection on the gap.

    Returns None when no specialisation transition exists: either the
    activation has no kernel tail at all (g identically zero, in which
    case the row overlap is pure gauge because flipping row signs leaves
    the quadratic observable unchanged), or the branch has not appeared
    at the top of the bracket.  Raises ValueError when the branch exists
    but the gap does not change sign across the bracket.  Solves are
    warm-started from the nearest already solved point.  ``params.alpha``
    is ignored.
    """
    cfg = solver_cfg or SolverConfig()
    if g_eval(1.0, params.activation.centered()) <= 1e-12:
        return None
    lo, hi = float(bracket[0]), float(bracket[1])
    if not 0.0 < lo < hi:
        raise ValueError("bracket must satisfy 0 < lo < hi")
    uni_starts: dict = {}
    sp_starts: dict = {}

    def nearest(cache: dict, a: float):
        if not cache:
            return None
        return cache[min(cache, key=lambda x: abs(x - a))]

    def gap(a: float) -> float:
        p = replace(params, alpha=a)
        uni = solve_universal(p, table, cfg, init=nearest(uni_starts, a))
        uni_starts[a] = (uni.state.q2, uni.state.q_hat2)
        sp = solve_specialisation(p, cfg, init=nearest(sp_starts, a))
        if "specialisation branch absent" in sp.flags:
            return -math.inf
        sp_starts[a] = (sp.state.q2, sp.state.qW)
        return sp.f - uni.f

    gap_hi = gap(hi)
    if gap_hi == -math.inf:
        return None
    if gap_hi < 0.0:
        raise ValueError("no sign change: f_sp < f_uni at the top of the bracket")
    if gap(lo) >= 0.0:
        raise ValueError("no sign change: f_sp >= f_uni already at the bottom of the bracket")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if gap(mid) >= 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def solve_linear_regime(alpha1: float, spec: ActivationSpec, delta: float,
                        tol: float = 1e-12, max_iter: int = 10_000) -> float:
    """Overlap of the linear component when data are only linearly many.

    With n/d -> alpha1, only the rank-one projection of the weights onto
    the read-outs is learnable; everything else acts as extra noise of
    relative variance delta1 = (delta + nu - mu0^2 - mu1^2) / mu1^2.
    Returns the converged overlap q1 in [0, 1].
    """
    if alpha1 < 0.0:
        raise ValueError("alpha1 must be nonnegative")
    if delta < 0.0:
        raise ValueError("delta must be nonnegative")
    if abs(spec.mu1) < 1e-12:
        raise ValueError("q1 is undefined for activations with no linear part (mu1 = 0)")
    delta1 = (delta + spec.nu - spec.mu0 ** 2 - spec.mu1 ** 2) / spec.mu1 ** 2
    q1 = 0.0
    for _ in range(max_iter):
        denom = 1.0 + delta1 - q1
        qh1 = alpha1 / denom if denom > 0.0 else math.inf
        q1_new = qh1 / (1.0 + qh1) if math.isfinite(qh1) else 1.0
        if abs(q1_new - q1) < tol:
            return q1_new
        q1 = 0.5 * (q1 + q1_new)
    raise ConvergenceError("linear-regime overlap did not converge")
