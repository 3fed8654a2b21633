"""Times the compiled kernels against the numpy fallbacks.

Run as a script: ``python3 benchmarks/bench_kernels.py``.  With the
extension missing both columns time the same fallback code, and the
header says so.
"""

import math
import time

import numpy as np

from shallowbayes import _kernels_py as py_impl
from shallowbayes import kernels, rng
from shallowbayes.activations import builtin
from shallowbayes.model import ModelParams, generate_dataset, sample_teacher

try:
    from shallowbayes import _kernels as c_impl
except ImportError:
    c_impl = None


def _time(fn, *args, repeats=5):
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _sweep_args(d=60, seed=4):
    spec = builtin("he2he3")
    params = ModelParams(d=d, gamma=0.5, alpha=1.0, delta=1.25,
                         w_prior="rademacher", v_prior="constant_one",
                         activation=spec)
    teacher = sample_teacher(params, seed)
    data = generate_dataset(teacher, params, seed)
    kind, coef = kernels.sweep_activation_code(spec)
    k, n = params.k, params.n
    XT = np.ascontiguousarray(data.X.T)
    H = np.ascontiguousarray(teacher.W0 @ XT / math.sqrt(d))
    resid = np.ascontiguousarray(
        data.y - (teacher.v0 @ np.asarray(spec.evaluate(H))) / math.sqrt(k))
    gen = rng.stream(seed, "bench", 0)
    order = gen.integers(0, k * d, size=k * d, dtype=np.int64)
    uniforms = gen.random(k * d)
    return (teacher.W0.copy(), H, resid, XT, teacher.v0, params.delta,
            kind, np.ascontiguousarray(coef), order, uniforms)


def _fresh_sweep_call(impl):
    args = _sweep_args()
    return lambda: impl.metropolis_sweep(*args)


def main():
    gen = np.random.default_rng(11)
    lam = np.sort(gen.standard_normal(2000))

    rows = []
    cases = [
        ("metropolis_sweep (d=60, one sweep)",
         lambda impl: _time(_fresh_sweep_call(impl))),
        ("pairwise_log_abs_sum (d=2000)",
         lambda impl: _time(impl.pairwise_log_abs_sum, lam, 1e-14)),
        ("hilbert_sums (d=2000)",
         lambda impl: _time(impl.hilbert_sums, lam, 0.05)),
    ]
    for name, timer in cases:
        t_py = timer(py_impl)
        t_c = timer(c_impl) if c_impl is not None else float("nan")
        rows.append((name, t_c, t_py))

    if c_impl is None:
        print("compiled extension not built; only the fallback is timed")
    print(f"{'kernel':<38} {'compiled':>10} {'fallback':>10} {'speedup':>8}")
    for name, t_c, t_py in rows:
        speed = t_py / t_c if t_c == t_c else float("nan")
        print(f"{name:<38} {t_c * 1e3:>9.2f}ms {t_py * 1e3:>9.2f}ms "
              f"{speed:>7.1f}x")


if __name__ == "__main__":
    main()
