"""Posterior samplers at desk scale, plus equilibration diagnostics.

Two samplers target the same Gaussian-channel posterior

    P(W | X, y)  propto  P_W(W) exp(-sum_mu (y_mu - lambda_mu(W))^2 / (2 delta)),
    lambda_mu = v^T sigma(W x_mu / sqrt(d)) / sqrt(k),

with the read-outs v held fixed by default.  ``metropolis_binary`` does
single-entry sign flips for Rademacher inner weights, keeping the
pre-activations W X^T / sqrt(d) cached so each proposal costs O(n);
``hmc_gaussian`` runs leapfrog Hamiltonian Monte Carlo with the analytic
gradient for Gaussian inner weights.  Both record an OverlapTrace of the
teacher overlaps (q_W, q_1..q_ell) every measurement step, which feeds the
equilibration gate and the two-replica identity check below.

Dataset size is always taken from the dataset itself, not from the params
object, so zero-data (prior sampling) chains are run by passing a dataset
with no rows.
"""

import csv
import json
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from shallowbayes import kernels, rng
from shallowbayes.activations import ActivationSpec, derivative, g_eval
from shallowbayes.generalization import tensor_overlaps
from shallowbayes.model import (
    Dataset,
    ModelParams,
    TeacherInstance,
    sample_inner_weights,
    sample_readouts,
)

INIT_MODES = ("informative", "uninformative")

# dual-averaging constants (shrinkage to mu, iteration offset, averaging decay)
_DA_GAMMA = 0.05
_DA_T0 = 10.0
_DA_KAPPA = 0.75


@dataclass(frozen=True)
class ChainConfig:
    """One chain's run parameters.

    ``sweeps`` counts Metropolis sweeps (k*d proposed flips each) or HMC
    iterations (one trajectory each).  ``init`` picks the starting point:
    "informative" starts at the teacher weights, "uninformative" at a fresh
    prior draw.  ``readouts_fixed`` keeps v = v0 throughout; turning it off
    enables the per-entry flip sampler for binary read-outs (Metropolis
    only).  ``resync_every`` is the cadence, in proposed flips, at which the
    Metropolis residuals are recomputed from scratch and compared against
    the incrementally updated ones.
    """

    init: str = "uninformative"
    sweeps: int = 200
    leapfrog_steps: int = 10
    step_size: float = 0.01
    adapt: bool = True
    target_accept: float = 0.8
    readouts_fixed: bool = True
    seed: int = 0
    measure_every: int = 1
    ell_max: int = 5
    resync_every: int = 1000

    def __post_init__(self):
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}")
        if self.sweeps < 1:
            raise ValueError("sweeps must be at least 1")
        if self.leapfrog_steps < 1:
            raise ValueError("leapfrog_steps must be at least 1")
        if self.step_size <= 0.0:
            raise ValueError("step_size must be positive")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must sit strictly inside (0, 1)")
        if self.measure_every < 1:
            raise ValueError("measure_every must be at least 1")
        if not 1 <= self.ell_max <= 5:
            raise ValueError("ell_max must be between 1 and 5")
        if self.resync_every < 1:
            raise ValueError("resync_every must be at least 1")


_TRACE_COLUMNS = ("step", "qW", "q1", "q2", "q3", "q4", "q5", "energy", "acc_rate")


@dataclass(frozen=True)
class OverlapTrace:
    """Per-measurement chain diagnostics.

    ``q_ell`` has one column per tensor order measured (up to 5); ``energy``
    is the posterior potential up to an additive constant; ``acc_rate`` the
    acceptance fraction since the previous measurement.  ``eps_num`` bounds
    how far finite-size fluctuations may push |q_W| past 1 before the trace
    is considered corrupt; the default covers the Gaussian self-overlap
    spread sqrt(2/(k d)) down to k d of a few hundred.
    """

    steps: np.ndarray
    q_w: np.ndarray
    q_ell: np.ndarray
    energy: np.ndarray
    acc_rate: np.ndarray
    eps_num: float = 0.2

    def __post_init__(self):
        m = len(self.steps)
        if not (len(self.q_w) == len(self.energy) == len(self.acc_rate) == m
                and self.q_ell.shape[0] == m):
            raise ValueError("trace columns disagree in length")
        if m and float(np.max(np.abs(self.q_w))) > 1.0 + self.eps_num:
            raise ValueError("|q_W| strayed past 1 by more than eps_num")
        if m and not np.all(np.isfinite(self.q_ell)):
            raise ValueError("tensor overlaps must stay finite")

    def __len__(self) -> int:
        return len(self.steps)

    def decimate(self, max_points: int = 10_000) -> "OverlapTrace":
        """Stride-thin the trace so it keeps at most max_points rows."""
        m = len(self)
        if m <= max_points:
            return self
        stride = -(-m // max_points)
        return OverlapTrace(
            steps=self.steps[::stride], q_w=self.q_w[::stride],
            q_ell=self.q_ell[::stride], energy=self.energy[::stride],
            acc_rate=self.acc_rate[::stride], eps_num=self.eps_num)

    def save_csv(self, path) -> None:
        """Write the fixed [step, qW, q1..q5, energy, acc_rate] schema.

        Orders not measured are written as nan; traces longer than 10^4
        rows are decimated first.
        """
        trace = self.decimate()
        q = np.full((len(trace), 5), np.nan)
        q[:, : trace.q_ell.shape[1]] = trace.q_ell
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(_TRACE_COLUMNS)
            for i in range(len(trace)):
                writer.writerow([int(trace.steps[i]), repr(float(trace.q_w[i])),
                                 *(repr(float(x)) for x in q[i]),
                                 repr(float(trace.energy[i])),
                                 repr(float(trace.acc_rate[i]))])


@dataclass(frozen=True)
class ChainResult:
    """A finished chain: thinned weight samples plus the overlap trace.

    ``step_size`` is the final leapfrog step (nan for Metropolis) and
    ``max_drift`` the worst scratch-vs-incremental residual gap seen at the
    resync checks (nan for HMC).  ``energy_errors`` holds one relative
    Hamiltonian error |dH| / max(1, |H_start|) per HMC trajectory (inf for
    exploded ones).  ``rng_state`` is the proposal generator's state at the
    end, which together with ``final_w`` / ``final_v`` and ``steps_done``
    lets ``save_snapshot`` make the chain restartable.
    """

    samples: tuple
    trace: OverlapTrace
    final_w: np.ndarray
    final_v: np.ndarray
    steps_done: int
    accept_rate: float
    step_size: float = math.nan
    max_drift: float = math.nan
    v_samples: tuple = ()
    energy_errors: tuple = ()
    rng_state: Optional[dict] = None
    flags: tuple = ()

    @property
    def v(self) -> np.ndarray:
        """Read-outs paired with ``samples`` (fixed-v protocol)."""
        return self.final_v


def save_snapshot(path, result: ChainResult) -> None:
    """Persist the restart point of a chain (weights, read-outs, RNG state)."""
    state = result.rng_state if result.rng_state is not None else {}
    np.savez(path, W=result.final_w, v=result.final_v,
             steps_done=result.steps_done,
             rng_state=json.dumps(state, default=lambda a: np.asarray(a).tolist()))


def load_snapshot(path) -> dict:
    """Inverse of save_snapshot; feed the dict to a sampler's ``resume``."""
    with np.load(path, allow_pickle=False) as data:
        return {"W": data["W"], "v": data["v"],
                "steps_done": int(data["steps_done"]),
                "rng_state": json.loads(str(data["rng_state"]))}


def overlap_trace(W_sample, v, teacher: TeacherInstance, ell_max: int = 5):
    """Exact overlaps of one weight sample with the teacher.

    Returns (q_W, [q_1, ..., q_ell_max]): the plain weight overlap
    tr(W W0^T)/(k d) and the read-out-contracted Hadamard powers of the
    row-overlap matrix.
    """
    return tensor_overlaps(W_sample, v, teacher.W0, teacher.v0, ell_max)


def _centered_second_order(W, v) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    v = np.asarray(v, dtype=float)
    k, d = W.shape
    S = (W.T * v) @ W / math.sqrt(k * d)
    S[np.diag_indices(d)] -= np.trace(S) / d
    return S


def centered_q2(Wa, va, Wb, vb) -> float:
    """Normalised correlation of the trace-removed second-order tensors.

    The raw q2 column of an OverlapTrace carries a deterministic trace
    component of size gamma (E v)^2 whenever the read-outs have nonzero
    mean, while the theory branch values live on the centred scale where
    that part is removed and the self-overlap is 1.  This estimator drops
    the realized trace direction on each side and divides by the realized
    norms, so the leading finite-size norm fluctuations cancel.
    """
    A = _centered_second_order(Wa, va)
    B = _centered_second_order(Wb, vb)
    denom = math.sqrt(float(np.sum(A * A)) * float(np.sum(B * B)))
    if denom == 0.0:
        return 0.0
    return float(np.sum(A * B)) / denom


def centered_q2_series(result: ChainResult, teacher: TeacherInstance) -> np.ndarray:
    """centered_q2 of every stored sample against the teacher."""
    if result.v_samples:
        pairs = zip(result.samples, result.v_samples)
    else:
        pairs = ((w, result.final_v) for w in result.samples)
    return np.array([centered_q2(w, v, teacher.W0, teacher.v0) for w, v in pairs])


def _restore_generator(gen: np.random.Generator, state: dict) -> None:
    # json round-trips the counter words as lists; numpy wants arrays
    fixed = dict(state)
    inner = {key: np.asarray(val, dtype=np.uint64)
             for key, val in state["state"].items()}
    fixed["state"] = inner
    gen.bit_generator.state = fixed


def _init_weights(cfg: ChainConfig, teacher: TeacherInstance, w_prior: str,
                  resume: Optional[dict]) -> np.ndarray:
    if resume is not None:
        return np.array(resume["W"], dtype=float)
    if cfg.init == "informative":
        return np.array(teacher.W0, dtype=float)
    k, d = teacher.W0.shape
    return sample_inner_weights(w_prior, k, d, rng.stream(cfg.seed, "chain-init", 0))


def _init_readouts(cfg: ChainConfig, teacher: TeacherInstance, v_prior: str,
                   resume: Optional[dict]) -> np.ndarray:
    if resume is not None:
        return np.array(resume["v"], dtype=float)
    if cfg.readouts_fixed or cfg.init == "informative":
        return np.array(teacher.v0, dtype=float)
    k = teacher.v0.shape[0]
    return sample_readouts(v_prior, k, rng.stream(cfg.seed, "chain-init-v", 0))


def _generic_sweep(W, H, resid, XT, v, delta, act: Callable, order, uniforms) -> int:
    """Python twin of kernels.metropolis_sweep for arbitrary activations."""
    k, d = W.shape
    inv_sqrt_d = 1.0 / math.sqrt(d)
    inv_sqrt_k = 1.0 / math.sqrt(k)
    accepts = 0
    for t, idx in enumerate(order):
        i, a = divmod(int(idx), d)
        dw = -2.0 * W[i, a]
        dh = (dw * inv_sqrt_d) * XT[a]
        row = H[i]
        dlam = (v[i] * inv_sqrt_k) * (np.asarray(act(row + dh)) - np.asarray(act(row)))
        dE = float(np.dot(dlam, dlam - 2.0 * resid)) / (2.0 * delta)
        if dE <= 0.0 or uniforms[t] < math.exp(-dE):
            W[i, a] = -W[i, a]
            row += dh
            resid -= dlam
            accepts += 1
    return accepts


def _readout_flip_pass(v, H, resid, sigma_H, delta, gen) -> int:
    """One pass of single-entry sign flips over binary read-outs."""
    k = v.shape[0]
    inv_sqrt_k = 1.0 / math.sqrt(k)
    uniforms = gen.random(k)
    accepts = 0
    for i in range(k):
        dlam = (-2.0 * v[i] * inv_sqrt_k) * sigma_H[i]
        dE = float(np.dot(dlam, dlam - 2.0 * resid)) / (2.0 * delta)
        if dE <= 0.0 or uniforms[i] < math.exp(-dE):
            v[i] = -v[i]
            resid -= dlam
            accepts += 1
    return accepts


def metropolis_binary(dataset: Dataset, teacher: TeacherInstance,
                      params: ModelParams, cfg: Optional[ChainConfig] = None,
                      resume: Optional[dict] = None) -> ChainResult:
    """Sign-flip Metropolis over Rademacher inner weights.

    Each sweep proposes k*d uniformly chosen single-entry flips, accepted by
    the Gaussian-channel posterior ratio evaluated through a rank-1 update
    of the cached pre-activations (O(n) per flip).  Overlaps, energy and
    acceptance are recorded every ``measure_every`` sweeps.  With
    ``readouts_fixed=False`` a per-entry flip pass over binary read-outs
    follows each weight sweep.
    """
    cfg = cfg if cfg is not None else ChainConfig()
    if params.delta <= 0.0:
        raise ValueError("metropolis_binary requires delta > 0: the zero-noise "
                         "posterior is a hard constraint that single flips "
                         "cannot track")
    if params.w_prior != "rademacher":
        raise ValueError("metropolis_binary samples sign weights; set w_prior "
                         "to rademacher")
    if not cfg.readouts_fixed and params.v_prior != "rademacher":
        raise ValueError("the read-out flip sampler needs a rademacher "
                         "read-out prior")
    spec = params.activation
    X = np.asarray(dataset.X, dtype=float)
    y = np.asarray(dataset.y, dtype=float)
    n, d = X.shape
    k = teacher.W0.shape[0]

    gen = rng.stream(cfg.seed, "metropolis", 0)
    if resume is not None and resume.get("rng_state"):
        _restore_generator(gen, resume["rng_state"])
    W = _init_weights(cfg, teacher, "rademacher", resume)
    v = _init_readouts(cfg, teacher, params.v_prior, resume)
    step0 = resume["steps_done"] if resume is not None else 0

    XT = np.ascontiguousarray(X.T)
    sqrt_k = math.sqrt(k)

    def scratch():
        H = np.ascontiguousarray(W @ XT / math.sqrt(d))
        sigma_H = np.asarray(spec.evaluate(H))
        resid = np.ascontiguousarray(y - (v @ sigma_H) / sqrt_k)
        return H, sigma_H, resid

    H, sigma_H, resid = scratch()
    code = kernels.sweep_activation_code(spec)
    flips = k * d
    since_resync = 0
    max_drift = 0.0
    accepted = proposed = 0
    acc_window = prop_window = 0
    samples, v_samples = [], []
    rows = {"steps": [], "q_w": [], "q_ell": [], "energy": [], "acc": []}

    for sweep in range(1, cfg.sweeps + 1):
        order = gen.integers(0, flips, size=flips, dtype=np.int64)
        uniforms = gen.random(flips)
        if code is not None:
            kind, coef = code
            acc = kernels.metropolis_sweep(W, H, resid, XT, v, params.delta,
                                           kind, np.ascontiguousarray(coef),
                                           order, uniforms)
        else:
            acc = _generic_sweep(W, H, resid, XT, v, params.delta,
                                 spec.evaluate, order, uniforms)
        prop = flips
        if not cfg.readouts_fixed:
            sigma_H = np.asarray(spec.evaluate(H))
            acc += _readout_flip_pass(v, H, resid, sigma_H, params.delta, gen)
            prop += k
        accepted += acc
        proposed += prop
        acc_window += acc
        prop_window += prop
        since_resync += prop

        if since_resync >= cfg.resync_every:
            H_exact, sigma_H, resid_exact = scratch()
            max_drift = max(max_drift, float(np.max(np.abs(resid - resid_exact),
                                                    initial=0.0)))
            H, resid = H_exact, resid_exact
            since_resync = 0

        if sweep % cfg.measure_every == 0:
            q_w, qs = overlap_trace(W, v, teacher, cfg.ell_max)
            rows["steps"].append(step0 + sweep)
            rows["q_w"].append(q_w)
            rows["q_ell"].append(qs)
            rows["energy"].append(float(resid @ resid) / (2.0 * params.delta))
            rows["acc"].append(acc_window / prop_window)
            acc_window = prop_window = 0
            samples.append(W.copy())
            if not cfg.readouts_fixed:
                v_samples.append(v.copy())

    trace = OverlapTrace(steps=np.array(rows["steps"], dtype=int),
                         q_w=np.array(rows["q_w"]),
                         q_ell=np.array(rows["q_ell"], dtype=float).reshape(len(samples), cfg.ell_max),
                         energy=np.array(rows["energy"]),
                         acc_rate=np.array(rows["acc"]))
    return ChainResult(samples=tuple(samples), trace=trace, final_w=W.copy(),
                       final_v=v.copy(), steps_done=step0 + cfg.sweeps,
                       accept_rate=accepted / proposed if proposed else 1.0,
                       max_drift=max_drift, v_samples=tuple(v_samples),
                       rng_state=gen.bit_generator.state)


def hmc_gaussian(dataset: Dataset, teacher: TeacherInstance,
                 params: ModelParams, cfg: Optional[ChainConfig] = None,
                 resume: Optional[dict] = None) -> ChainResult:
    """Leapfrog Hamiltonian Monte Carlo over Gaussian inner weights.

    One iteration draws a fresh momentum, integrates ``leapfrog_steps``
    steps of size ``step_size`` through the analytic posterior gradient,
    and accepts by the total-energy change.  With ``adapt`` the step size
    follows dual averaging towards ``target_accept``.  A trajectory whose
    energy error passes 10^3 (or goes non-finite) is rejected outright and
    the step size halved.
    """
    cfg = cfg if cfg is not None else ChainConfig()
    if params.w_prior != "gaussian":
        raise ValueError("hmc_gaussian integrates a density over real weights; "
                         "set w_prior to gaussian")
    if not cfg.readouts_fixed:
        raise ValueError("hmc_gaussian keeps read-outs fixed; the flip sampler "
                         "only exists for the binary chain")
    spec = params.activation
    X = np.asarray(dataset.X, dtype=float)
    y = np.asarray(dataset.y, dtype=float)
    n, d = X.shape
    k = teacher.W0.shape[0]
    if n > 0 and params.delta <= 0.0:
        raise ValueError("hmc_gaussian requires delta > 0 when data is present")
    d_sigma = derivative(spec)
    sqrt_k = math.sqrt(k)
    Xs = X / math.sqrt(d)

    def potential(W):
        """(U, grad U) for the log-posterior up to a constant.

        Overflow is deliberate territory: an exploding leapfrog path sends
        non-finite U back to the caller, which rejects and halves the step.
        """
        with np.errstate(over="ignore", invalid="ignore"):
            U_prior = 0.5 * float(np.sum(W * W))
            if n == 0:
                return U_prior, W.copy()
            H = W @ Xs.T
            r = y - (np.asarray(spec.evaluate(H)).T @ v_over_k).ravel()
            U = U_prior + 0.5 * float(r @ r) / params.delta
            A = (v_over_k / params.delta) * np.asarray(d_sigma(H)) * r[None, :]
            return U, W - A @ Xs

    gen = rng.stream(cfg.seed, "hmc", 0)
    if resume is not None and resume.get("rng_state"):
        _restore_generator(gen, resume["rng_state"])
    W = _init_weights(cfg, teacher, "gaussian", resume)
    v = _init_readouts(cfg, teacher, params.v_prior, resume)
    v_over_k = (v / sqrt_k)[:, None]
    step0 = resume["steps_done"] if resume is not None else 0

    eps = cfg.step_size
    mu = math.log(10.0 * eps)
    log_eps_bar = math.log(eps)
    h_bar = 0.0
    U_cur, G_cur = potential(W)
    accepted = 0
    alpha_window = []
    energy_errors = []
    samples = []
    rows = {"steps": [], "q_w": [], "q_ell": [], "energy": [], "acc": []}
    flags = set()

    for it in range(1, cfg.sweeps + 1):
        p = gen.standard_normal((k, d))
        H_start = U_cur + 0.5 * float(np.sum(p * p))
        W_new, G_new = W, G_cur
        U_new = U_cur
        p_new = p - 0.5 * eps * G_cur
        ok = True
        for s in range(cfg.leapfrog_steps):
            W_new = W_new + eps * p_new
            U_new, G_new = potential(W_new)
            if not np.isfinite(U_new):
                ok = False
                break
            if s < cfg.leapfrog_steps - 1:
                p_new = p_new - eps * G_new
        if ok:
            with np.errstate(over="ignore", invalid="ignore"):
                p_new = p_new - 0.5 * eps * G_new
                dH = U_new + 0.5 * float(np.sum(p_new * p_new)) - H_start
            ok = np.isfinite(dH) and abs(dH) <= 1.0e3
        if not ok:
            alpha = 0.0
            eps = 0.5 * eps
            mu = math.log(10.0 * eps)
            flags.add("divergent trajectory; step size halved")
            energy_errors.append(math.inf)
        else:
            energy_errors.append(abs(dH) / max(1.0, abs(H_start)))
            alpha = min(1.0, math.exp(-dH))
            if gen.random() < alpha:
                W, U_cur, G_cur = W_new, U_new, G_new
                accepted += 1
        if cfg.adapt:
            frac = 1.0 / (it + _DA_T0)
            h_bar = (1.0 - frac) * h_bar + frac * (cfg.target_accept - alpha)
            log_eps = mu - math.sqrt(it) / _DA_GAMMA * h_bar
            eta = it ** (-_DA_KAPPA)
            log_eps_bar = eta * log_eps + (1.0 - eta) * log_eps_bar
            eps = math.exp(log_eps)
        alpha_window.append(alpha)

        if it % cfg.measure_every == 0:
            q_w, qs = overlap_trace(W, v, teacher, cfg.ell_max)
            rows["steps"].append(step0 + it)
            rows["q_w"].append(q_w)
            rows["q_ell"].append(qs)
            rows["energy"].append(U_cur)
            rows["acc"].append(float(np.mean(alpha_window)))
            alpha_window = []
            samples.append(W.copy())

    trace = OverlapTrace(steps=np.array(rows["steps"], dtype=int),
                         q_w=np.array(rows["q_w"]),
                         q_ell=np.array(rows["q_ell"], dtype=float).reshape(len(samples), cfg.ell_max),
                         energy=np.array(rows["energy"]),
                         acc_rate=np.array(rows["acc"]))
    return ChainResult(samples=tuple(samples), trace=trace, final_w=W.copy(),
                       final_v=v.copy(), steps_done=step0 + cfg.sweeps,
                       accept_rate=accepted / cfg.sweeps, step_size=eps,
                       energy_errors=tuple(energy_errors),
                       rng_state=gen.bit_generator.state,
                       flags=tuple(sorted(flags)))


# ---------------------------------------------------------------------------
# equilibration diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EquilibrationReport:
    equilibrated: bool
    gap: float           # |window mean difference| in combined-stderr units
    mean_late: float     # q2 mean over the second half
    stderr: float
    flags: tuple = ()


def _batch_stderr(series: np.ndarray, n_batches: int = 8) -> float:
    """Stderr of the mean from batch means, robust to autocorrelation."""
    m = len(series)
    if m < 2 * n_batches:
        n_batches = max(2, m // 2)
    cut = (m // n_batches) * n_batches
    means = series[:cut].reshape(n_batches, -1).mean(axis=1)
    return float(np.std(means, ddof=1)) / math.sqrt(n_batches)


def equilibration_gate(trace: OverlapTrace, nishimori_z: Optional[dict] = None,
                       z_limit: float = 3.0) -> EquilibrationReport:
    """Stationarity gate on the q2 series.

    Compares the means of two overlapping half-length windows (the middle
    half against the last half); the chain passes when they agree within
    one combined batch-means stderr, and, when a two-replica report is
    supplied, all its |z| stay under ``z_limit``.
    """
    if trace.q_ell.shape[1] < 2:
        raise ValueError("the gate watches q2; measure at least ell_max = 2")
    q2 = trace.q_ell[:, 1]
    m = len(q2)
    flags = []
    if m < 8:
        return EquilibrationReport(False, math.inf, float(np.mean(q2)) if m else math.nan,
                                   math.nan, ("trace too short to judge",))
    window_a = q2[m // 4: (3 * m) // 4]
    window_b = q2[m // 2:]
    stderr = math.hypot(_batch_stderr(window_a), _batch_stderr(window_b))
    gap = abs(float(np.mean(window_a)) - float(np.mean(window_b)))
    ok = gap <= stderr if stderr > 0 else gap == 0.0
    if not ok:
        flags.append("window means disagree beyond one stderr")
    if nishimori_z is not None:
        bad = {name: z for name, z in nishimori_z.items() if abs(z) >= z_limit}
        if bad:
            ok = False
            flags.append("two-replica identity violated: " +
                         ", ".join(f"{name} z={z:.2f}" for name, z in sorted(bad.items())))
    return EquilibrationReport(bool(ok), gap / stderr if stderr > 0 else math.inf,
                               float(np.mean(window_b)), stderr, tuple(flags))


@dataclass(frozen=True)
class NishimoriReport:
    """Two-replica identity check across datasets.

    For a sampler in equilibrium with the true posterior, the overlap of a
    posterior sample with the teacher and the overlap of two independent
    posterior samples have the same disorder average.  ``z_scores`` holds
    the per-functional z of the difference over datasets for q1, q2 and
    g(q_W).
    """

    z_scores: dict
    teacher_means: dict
    pair_means: dict
    n_datasets: int
    n_pairs: int
    flags: tuple = ()


def _chain_overlap_stats(chains, teacher: TeacherInstance, spec: ActivationSpec,
                         burn_frac: float):
    """Per-dataset teacher-side and pair-side overlap means."""
    g_spec = spec.centered()

    def functionals(Wa, va, Wb, vb):
        q_w, (q1, q2) = tensor_overlaps(Wa, va, Wb, vb, 2)
        return q1, q2, g_eval(min(1.0, max(-1.0, q_w)), g_spec)

    kept = []
    for chain in chains:
        burn = int(burn_frac * len(chain.samples))
        kept.append([np.asarray(w, dtype=float) for w in chain.samples[burn:]])
        if not kept[-1]:
            raise ValueError("a chain has no post-burn-in samples")

    teacher_vals = []
    for chain, ws in zip(chains, kept):
        for w in ws:
            teacher_vals.append(functionals(w, chain.v, teacher.W0, teacher.v0))
    pair_vals = []
    n_pairs = 0
    for a in range(len(chains)):
        for b in range(a + 1, len(chains)):
            n_pairs += 1
            for wa, wb in zip(kept[a], kept[b]):
                pair_vals.append(functionals(wa, chains[a].v, wb, chains[b].v))
    return (np.mean(np.asarray(teacher_vals), axis=0),
            np.mean(np.asarray(pair_vals), axis=0), n_pairs)


def nishimori_check(groups: Sequence, spec: ActivationSpec,
                    burn_frac: float = 0.5) -> NishimoriReport:
    """z-scores of the sample-teacher vs sample-sample overlap identity.

    ``groups`` holds one (teacher, chains) pair per dataset, each chain an
    object with ``samples`` (weight snapshots) and ``v`` (its read-outs);
    at least two chains per dataset are required so posterior replicas can
    be paired, and at least two datasets so the disorder spread of the
    difference is estimable.  Fewer than eight datasets is allowed but
    flagged.
    """
    names = ("q1", "q2", "g_qw")
    if len(groups) < 2:
        raise ValueError("needs at least two datasets to estimate the spread")
    diffs, t_means, p_means = [], [], []
    total_pairs = 0
    for teacher, chains in groups:
        if len(chains) < 2:
            raise ValueError("insufficient chains: every dataset needs at "
                             "least two independent chains")
        t_mean, p_mean, n_pairs = _chain_overlap_stats(chains, teacher, spec,
                                                       burn_frac)
        diffs.append(t_mean - p_mean)
        t_means.append(t_mean)
        p_means.append(p_mean)
        total_pairs += n_pairs
    diffs = np.asarray(diffs)
    centre = diffs.mean(axis=0)
    spread = diffs.std(axis=0, ddof=1) / math.sqrt(len(groups))
    z = np.where(spread > 0, centre / np.where(spread > 0, spread, 1.0),
                 np.where(centre == 0.0, 0.0, np.inf))
    flags = () if len(groups) >= 8 else (
        "fewer than eight datasets; the z-scores are noisy",)
    return NishimoriReport(
        z_scores=dict(zip(names, z.tolist())),
        teacher_means=dict(zip(names, np.mean(t_means, axis=0).tolist())),
        pair_means=dict(zip(names, np.mean(p_means, axis=0).tolist())),
        n_datasets=len(groups), n_pairs=total_pairs, flags=flags)
