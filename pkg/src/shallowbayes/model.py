"""Teacher sampling, dataset generation, exact post-activation evaluation.

The data model: inputs x ~ N(0, I_d), teacher weights W0 (k x d, i.i.d. from
the inner prior) and read-outs v0 (k-vector from the read-out prior), labels

    y = lambda0 + sqrt(delta) * noise,
    lambda0 = v0^T sigma(W0 x / sqrt(d)) / sqrt(k),

in the proportional regime k = gamma d, n = alpha d^2.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from shallowbayes import rng
from shallowbayes.activations import ActivationSpec

W_PRIORS = ("rademacher", "gaussian")
V_PRIORS = ("constant_one", "rademacher", "gaussian", "uniform_sym")

_SQRT3 = np.sqrt(3.0)


@dataclass(frozen=True)
class ModelParams:
    """One theory/experiment point (gamma, alpha, delta, priors, activation)."""

    d: int
    gamma: float
    alpha: float
    delta: float
    w_prior: str
    v_prior: str
    activation: ActivationSpec

    def __post_init__(self):
        if self.w_prior not in W_PRIORS:
            raise ValueError(f"w_prior must be one of {W_PRIORS}")
        if self.v_prior not in V_PRIORS:
            raise ValueError(f"v_prior must be one of {V_PRIORS}")
        if self.delta < 0.0:
            raise ValueError("label-noise variance must be nonnegative")
        if self.k < 1 or self.n < 1:
            raise ValueError("k = round(gamma d) and n = round(alpha d^2) must be >= 1")

    @property
    def k(self) -> int:
        return int(round(self.gamma * self.d))

    @property
    def n(self) -> int:
        return int(round(self.alpha * self.d * self.d))


def v_prior_mean(v_prior: str) -> float:
    """E[v] under the read-out prior. All supported priors have E[v^2] = 1."""
    return 1.0 if v_prior == "constant_one" else 0.0


def r2_absolute(gamma: float, v_prior: str) -> float:
    """Self-overlap of the second-layer tensor, r2 = 1 + gamma (E v)^2.

    The gamma (E v)^2 part is the deterministic mean component, which is
    always learned exactly; solvers work with the centred value r2 - that
    shift, which equals 1 for every supported read-out prior.
    """
    return 1.0 + gamma * v_prior_mean(v_prior) ** 2


def sample_readouts(v_prior: str, k: int, gen: np.random.Generator) -> np.ndarray:
    if v_prior == "constant_one":
        return np.ones(k)
    if v_prior == "rademacher":
        return gen.integers(0, 2, size=k) * 2.0 - 1.0
    if v_prior == "gaussian":
        return gen.standard_normal(k)
    if v_prior == "uniform_sym":
        return gen.uniform(-_SQRT3, _SQRT3, size=k)
    raise ValueError(f"unknown read-out prior {v_prior!r}")


def sample_inner_weights(w_prior: str, k: int, d: int, gen: np.random.Generator) -> np.ndarray:
    if w_prior == "rademacher":
        return gen.integers(0, 2, size=(k, d)) * 2.0 - 1.0
    if w_prior == "gaussian":
        return gen.standard_normal((k, d))
    raise ValueError(f"unknown inner prior {w_prior!r}")


@dataclass(frozen=True)
class TeacherInstance:
    W0: np.ndarray  # k x d
    v0: np.ndarray  # k


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray  # n x d
    y: np.ndarray  # n


def sample_teacher(params: ModelParams, master_seed: int, index: int = 0) -> TeacherInstance:
    W0 = sample_inner_weights(params.w_prior, params.k, params.d,
                              rng.stream(master_seed, "teacher-w", index))
    v0 = sample_readouts(params.v_prior, params.k,
                         rng.stream(master_seed, "teacher-v", index))
    return TeacherInstance(W0=W0, v0=v0)


def preactivations(W: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Hidden-layer preactivations W x / sqrt(d) for a batch, shape (k, n)."""
    d = X.shape[1]
    return (W @ X.T) / np.sqrt(d)


def network_output(v: np.ndarray, W: np.ndarray, X: np.ndarray, spec: ActivationSpec) -> np.ndarray:
    """lambda = v^T sigma(W x / sqrt(d)) / sqrt(k) for each row x of X."""
    k = v.shape[0]
    H = preactivations(W, X)
    return (v @ np.asarray(spec.evaluate(H))) / np.sqrt(k)


def post_activation(v: np.ndarray, W: np.ndarray, x: np.ndarray, spec: ActivationSpec) -> float:
    """Single-input network output; shape-checked scalar version."""
    v = np.asarray(v, dtype=float)
    W = np.asarray(W, dtype=float)
    x = np.asarray(x, dtype=float)
    if W.ndim != 2 or v.ndim != 1 or x.ndim != 1:
        raise ValueError("expected W (k x d), v (k,), x (d,)")
    k, d = W.shape
    if v.shape[0] != k or x.shape[0] != d:
        raise ValueError(f"inconsistent shapes: W {W.shape}, v {v.shape}, x {x.shape}")
    return float(network_output(v, W, x[None, :], spec)[0])


def generate_dataset(teacher: TeacherInstance, params: ModelParams, master_seed: int,
                     n: Optional[int] = None, purpose: str = "data", index: int = 0) -> Dataset:
    """Draw (X, y) for the given teacher; bit-exact in (teacher, seed, purpose).

    ``purpose`` separates streams so train and test sets drawn from the same
    master seed never overlap.
    """
    n = params.n if n is None else int(n)
    gen_x = rng.stream(master_seed, purpose + "-inputs", index)
    X = gen_x.standard_normal((n, params.d))
    y = network_output(teacher.v0, teacher.W0, X, params.activation)
    if params.delta > 0.0:
        gen_z = rng.stream(master_seed, purpose + "-noise", index)
        y = y + np.sqrt(params.delta) * gen_z.standard_normal(n)
    return Dataset(X=X, y=y)
