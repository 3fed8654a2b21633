"""Polynomial-time learner: matrix-sensing AMP with eigenvalue shrinkage.

The pipeline strips the label mean, fits the linear label component by
least squares, and rescales what is left into a matrix-sensing problem
whose probes (x x^T - I)/sqrt(d) behave like GOE matrices.  An AMP loop
with the rotation-invariant eigenvalue shrinker as denoiser then
estimates the order-2 weight tensor.  The loop never sees the teacher's
readouts or inner weights; priors enter only through scalar moments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from shallowbayes import rng
from shallowbayes.activations import ActivationSpec, g_eval
from shallowbayes.model import Dataset, v_prior_mean
from shallowbayes.spectral import rie_shrink

__all__ = [
    "GampConfig",
    "GampState",
    "GampDivergence",
    "estimate_mean",
    "estimate_s1",
    "gamp_rie_fit",
    "goe_sensing_fit",
    "predict",
]


class GampDivergence(RuntimeError):
    """The AMP residual grew for too many consecutive iterations."""

    def __init__(self, message, state):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class GampConfig:
    """Loop controls.  ``damping`` is the weight kept on the previous
    iterate; ``var_floor`` keeps the tracked variance positive;
    ``divergence_patience`` counts consecutive residual increases before
    aborting; ``stall_patience`` stops a loop whose best variance has
    not improved for that many iterations (the returned iterate is the
    best one, not the last); ``goe_batch`` sizes the probe blocks
    regenerated per pass in the synthetic-sensing mode."""

    damping: float = 0.3
    max_iter: int = 200
    tol: float = 1e-4
    var_floor: float = 1e-10
    divergence_patience: int = 10
    stall_patience: int = 20
    rie_eta: float | None = None
    goe_batch: int = 2048

    def __post_init__(self):
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must sit in [0, 1)")
        if self.max_iter < 1 or self.divergence_patience < 2:
            raise ValueError("max_iter >= 1 and divergence_patience >= 2")
        if self.stall_patience < 2:
            raise ValueError("stall_patience >= 2")
        if self.tol <= 0.0 or self.var_floor <= 0.0:
            raise ValueError("tol and var_floor must be positive")


@dataclass(frozen=True)
class GampState:
    """Fitted estimator plus its iteration trace.

    ``s2_hat`` approximates the order-2 tensor in the sensing
    normalisation (entry scale 1/sqrt(d)); ``mse`` is the tracked
    per-entry error of that tensor in units where its self-overlap is
    ``r2``, so ``q2_implied = 1 - mse`` lives on the centred overlap
    scale of the branch solvers.
    """

    y0_hat: float
    s1_hat: np.ndarray
    s2_hat: np.ndarray
    delta_eff: float
    alpha: float
    r2: float
    mse: float
    converged: bool
    iterations: int
    best_iteration: int = 0
    residuals: tuple = field(default=())
    v_trace: tuple = field(default=())
    sigma_trace: tuple = field(default=())
    flags: tuple = field(default=())

    @property
    def q2_implied(self) -> float:
        """Centred order-2 overlap implied by the tracked error."""
        return 1.0 - self.mse

    @property
    def q_hat2_implied(self) -> float:
        """Channel curvature at the returned iterate, 4 alpha / (noise + V)."""
        if not self.v_trace:
            return 4.0 * self.alpha / (self.delta_eff + 2.0)
        idx = self.best_iteration - 1 if self.best_iteration else -1
        return 4.0 * self.alpha / (self.delta_eff + self.v_trace[idx])


def estimate_mean(dataset: Dataset) -> float:
    """Sample mean of the labels (the order-0 label component)."""
    y = np.asarray(dataset.y, dtype=float)
    if y.size < 1:
        raise ValueError("need at least one label")
    return float(y.mean())


def estimate_s1(dataset: Dataset, y0_hat: float, spec: ActivationSpec):
    """Least-squares fit of the linear label component.

    Returns (s1_hat, skipped).  The labels regress on x/sqrt(d), and the
    coefficient divides out the first Hermite weight; orthogonality of
    the higher orders makes this consistent, and n >> d makes the noise
    negligible.  Activations with no linear part skip the step and
    return the zero vector.
    """
    X = np.asarray(dataset.X, dtype=float)
    y = np.asarray(dataset.y, dtype=float)
    n, d = X.shape
    if spec.mu1 == 0.0:
        return np.zeros(d), True
    if n < d:
        raise ValueError(f"linear fit needs n >= d, got n={n}, d={d}")
    # an intercept column absorbs the sampling error of y0_hat, which
    # would otherwise leak into the coefficients
    design = np.empty((n, d + 1))
    design[:, :d] = X / math.sqrt(d)
    design[:, d] = 1.0
    coef, *_ = np.linalg.lstsq(design, y - y0_hat, rcond=None)
    return coef[:d] / spec.mu1, False


class _RankOneProbes:
    """Probes (x x^T - I)/sqrt(d) realised through the data matrix."""

    def __init__(self, X: np.ndarray):
        self.X = X
        self.n, self.d = X.shape
        self._sqd = math.sqrt(self.d)

    def forward(self, S: np.ndarray) -> np.ndarray:
        quad = np.einsum("ni,ni->n", self.X @ S, self.X)
        return (quad - np.trace(S)) / self._sqd

    def adjoint(self, g: np.ndarray) -> np.ndarray:
        A = self.X.T @ (g[:, None] * self.X)
        A -= float(g.sum()) * np.eye(self.d)
        A /= self._sqd
        return 0.5 * (A + A.T)

    def sweep(self, S: np.ndarray, g_of_z):
        z = self.forward(S)
        g = g_of_z(z, slice(0, self.n))
        return z, g, self.adjoint(g)


class _GoeProbes:
    """Genuine GOE probes, regenerated blockwise from a fixed stream."""

    def __init__(self, n: int, d: int, master_seed: int, batch: int):
        self.n, self.d = n, d
        self.master_seed = master_seed
        self.batch = batch

    def _blocks(self):
        start = 0
        index = 0
        while start < self.n:
            size = min(self.batch, self.n - start)
            g = rng.stream(self.master_seed, f"goe-probes|d={self.d}", index)
            raw = g.standard_normal((size, self.d, self.d))
            M = (raw + np.transpose(raw, (0, 2, 1))) / math.sqrt(2.0 * self.d)
            yield start, M
            start += size
            index += 1

    def forward(self, S: np.ndarray) -> np.ndarray:
        z = np.empty(self.n)
        for start, M in self._blocks():
            z[start:start + M.shape[0]] = np.tensordot(M, S, axes=([1, 2],
                                                                   [0, 1]))
        return z

    def adjoint(self, g: np.ndarray) -> np.ndarray:
        A = np.zeros((self.d, self.d))
        for start, M in self._blocks():
            A += np.tensordot(g[start:start + M.shape[0]], M, axes=(0, 0))
        return A

    def sweep(self, S: np.ndarray, g_of_z):
        # the channel gain is elementwise in z, so one regeneration pass
        # serves both the forward product and the adjoint accumulation
        z = np.empty(self.n)
        g = np.empty(self.n)
        A = np.zeros((self.d, self.d))
        for start, M in self._blocks():
            sl = slice(start, start + M.shape[0])
            zb = np.tensordot(M, S, axes=([1, 2], [0, 1]))
            z[sl] = zb
            gb = g_of_z(zb, sl)
            g[sl] = gb
            A += np.tensordot(gb, M, axes=(0, 0))
        return z, g, A


def _amp_loop(probes, y_t: np.ndarray, delta_eff: float, r2: float,
              s_init: np.ndarray, cfg: GampConfig):
    """Shared AMP iteration; returns the pieces of a GampState.

    The onsager-corrected channel runs with a per-iteration variance V
    taken as the larger of two one-step-behind estimates: the shrinker's
    eigenvalue mass (2 * (r2 - |xi|^2 / d), exact on the Bayes line but
    overconfident when the smoothed shrinker overshoots) and the raw
    residual moment (mean((y - z)^2) - noise, free of any feedback loop
    but biased low by whatever noise the fit absorbed).  Either estimate
    alone is unstable somewhere: trusting the shrinker turns the gain
    into an amplifier at small effective noise, and measuring on the
    corrected residual recycles the correction term's own variance.

    Once the effective noise falls below the shrinker's spectral
    resolution the map stops contracting and the iterate wanders, so the
    loop keeps the iterate with the smallest V and returns that one.
    """
    n, d = probes.n, probes.d
    alpha = n / d ** 2
    S = s_init.copy()
    V = 2.0 * max(r2 - float(np.sum(S * S)) / d, cfg.var_floor)
    g_prev = np.zeros(n)
    residuals, v_trace, sigma_trace = [], [], []
    worse = 0
    converged = False
    it = 0
    best_v = math.inf
    best_s = S.copy()
    best_it = 0
    for it in range(1, cfg.max_iter + 1):
        def g_of_z(zb, sl):
            omega_b = zb - V * g_prev[sl]
            return (y_t[sl] - omega_b) / (delta_eff + V)

        z, g, A = probes.sweep(S, g_of_z)
        sigma_r = (delta_eff + V) / (4.0 * alpha)
        B = S + (2.0 * sigma_r / d) * A
        lam, Q = np.linalg.eigh(B)
        xi = rie_shrink(lam, sigma_r, cfg.rie_eta)
        S_new = (Q * xi) @ Q.T

        v_nish = 2.0 * (r2 - float(np.sum(xi * xi)) / d)
        v_raw = float(np.mean((y_t - z) ** 2)) - delta_eff
        V = max(v_nish, v_raw, cfg.var_floor)

        norm_old = max(float(np.linalg.norm(S)), 1e-12)
        res = float(np.linalg.norm(S_new - S)) / norm_old
        residuals.append(res)
        sigma_trace.append(sigma_r)
        v_trace.append(V)
        S = (1.0 - cfg.damping) * S_new + cfg.damping * S
        g_prev = (1.0 - cfg.damping) * g + cfg.damping * g_prev
        if V < best_v:
            best_v, best_s, best_it = V, S.copy(), it
        if res < cfg.tol:
            converged = True
            break
        worse = worse + 1 if len(residuals) > 1 and res > residuals[-2] else 0
        if worse >= cfg.divergence_patience:
            raise GampDivergence(
                f"residual grew for {worse} consecutive iterations",
                dict(residuals=tuple(residuals), v_trace=tuple(v_trace),
                     sigma_trace=tuple(sigma_trace), iterations=it))
        blown_up = float(np.sum(S * S)) / d > 10.0 * r2
        if blown_up and best_v >= v_trace[0]:
            # no iterate ever beat the starting variance, so there is
            # nothing worth salvaging
            raise GampDivergence(
                "iterate norm exploded",
                dict(residuals=tuple(residuals), v_trace=tuple(v_trace),
                     sigma_trace=tuple(sigma_trace), iterations=it))
        if blown_up or it - best_it >= cfg.stall_patience:
            break
    stalled = not converged
    if converged:
        best_s, best_it = S, it
    mse = min(max(r2 - float(np.sum(best_s * best_s)) / d, 0.0), r2)
    return (best_s, mse, converged, it, best_it, stalled, tuple(residuals),
            tuple(v_trace), tuple(sigma_trace))


def gamp_rie_fit(dataset: Dataset, spec: ActivationSpec, delta: float,
                 cfg: GampConfig | None = None, *,
                 gamma: float | None = None,
                 v_prior: str | None = None) -> GampState:
    """Fit the order-2 tensor of a teacher network from (X, y) alone.

    The tensor's norm and trace scale are read off the transformed
    labels themselves: their variance is 2 |S|^2 / d + noise, and their
    covariance with (|x|^2 - d)/sqrt(d) is twice the normalised trace.
    Passing ``gamma`` together with ``v_prior`` replaces both estimates
    by the matched-setting values 1 + gamma (E v)^2 and sqrt(gamma) E v.
    Raises GampDivergence when the residual grows persistently,
    ValueError when the activation carries no quadratic component.
    """
    cfg = cfg or GampConfig()
    cspec = spec.centered()
    if cspec.mu2 == 0.0:
        raise ValueError("no quadratic label component (mu2 = 0); "
                         "this learner has nothing to sense")
    if (gamma is None) != (v_prior is None):
        raise ValueError("pass gamma and v_prior together or not at all")
    X = np.asarray(dataset.X, dtype=float)
    y = np.asarray(dataset.y, dtype=float)
    n, d = X.shape
    y0 = estimate_mean(dataset)
    s1, skipped = estimate_s1(dataset, y0, cspec)
    flags = ("linear component skipped (mu1 = 0)",) if skipped else ()

    half_mu2 = 0.5 * cspec.mu2
    y_t = (y - y0 - cspec.mu1 * (X @ s1) / math.sqrt(d)) / half_mu2
    delta_eff = (delta + g_eval(1.0, cspec)) / half_mu2 ** 2
    if gamma is None:
        r2 = max((float(np.var(y_t)) - delta_eff) / 2.0, 1e-6)
        probe_tr = (np.einsum("ni,ni->n", X, X) - d) / math.sqrt(d)
        trace_scale = 0.5 * float(np.mean(y_t * probe_tr))
    else:
        mv = v_prior_mean(v_prior)
        r2 = 1.0 + gamma * mv ** 2
        trace_scale = math.sqrt(gamma) * mv
    s_init = trace_scale * np.eye(d)

    probes = _RankOneProbes(X)
    try:
        S, mse, converged, it, best_it, stalled, res, vt, st = _amp_loop(
            probes, y_t, delta_eff, r2, s_init, cfg)
    except GampDivergence as err:
        trace = err.state
        raise GampDivergence(str(err), GampState(
            y0_hat=y0, s1_hat=s1, s2_hat=s_init, delta_eff=delta_eff,
            alpha=n / d ** 2, r2=r2, mse=r2, converged=False,
            iterations=trace["iterations"], residuals=trace["residuals"],
            v_trace=trace["v_trace"], sigma_trace=trace["sigma_trace"],
            flags=flags + ("diverged",))) from None
    if stalled:
        flags = flags + ("stalled; kept the lowest-variance iterate",)
    return GampState(
        y0_hat=y0, s1_hat=s1, s2_hat=S, delta_eff=delta_eff,
        alpha=n / d ** 2, r2=r2, mse=mse, converged=converged, iterations=it,
        best_iteration=best_it, residuals=res, v_trace=vt, sigma_trace=st,
        flags=flags)


def goe_sensing_fit(s2_true: np.ndarray, alpha: float, delta_eff: float,
                    master_seed: int, cfg: GampConfig | None = None,
                    s_init: np.ndarray | None = None) -> GampState:
    """Same AMP loop on synthetic GOE probes instead of data probes.

    Builds n = alpha d^2 genuine GOE measurements of ``s2_true``, adds
    Gaussian noise of variance ``delta_eff``, and fits.  Exists to test
    that the data probes really behave like GOE sensing.
    """
    cfg = cfg or GampConfig()
    S0 = np.asarray(s2_true, dtype=float)
    d = S0.shape[0]
    n = int(round(alpha * d ** 2))
    r2 = float(np.sum(S0 * S0)) / d
    probes = _GoeProbes(n, d, master_seed, cfg.goe_batch)
    noise = rng.stream(master_seed, "goe-labels", 0)
    y_t = probes.forward(S0) + math.sqrt(delta_eff) * noise.standard_normal(n)
    if s_init is None:
        s_init = (float(np.trace(S0)) / d) * np.eye(d)
    S, mse, converged, it, best_it, stalled, res, vt, st = _amp_loop(
        probes, y_t, delta_eff, r2, s_init, cfg)
    flags = ("synthetic GOE sensing",)
    if stalled:
        flags = flags + ("stalled; kept the lowest-variance iterate",)
    return GampState(
        y0_hat=0.0, s1_hat=np.zeros(d), s2_hat=S, delta_eff=delta_eff,
        alpha=n / d ** 2, r2=r2, mse=mse, converged=converged, iterations=it,
        best_iteration=best_it, residuals=res, v_trace=vt, sigma_trace=st,
        flags=flags)


def predict(state: GampState, x, spec: ActivationSpec):
    """Label prediction from the fitted tensors.

    Accepts a single input vector or a batch of rows; returns a scalar
    or a vector accordingly.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    d = state.s2_hat.shape[0]
    if X.shape[1] != d:
        raise ValueError(f"input dimension {X.shape[1]} does not match "
                         f"the fitted tensors ({d})")
    sqd = math.sqrt(d)
    out = np.full(X.shape[0], state.y0_hat)
    if spec.mu1 != 0.0:
        out += spec.mu1 * (X @ state.s1_hat) / sqd
    quad = np.einsum("ni,ni->n", X @ state.s2_hat, X) - np.trace(state.s2_hat)
    out += 0.5 * spec.mu2 * quad / sqd
    return float(out[0]) if single else out
