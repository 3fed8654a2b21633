"""Pure-numpy twins of the compiled kernels.

Semantics match shallowbayes._kernels exactly (same proposal order, same
accept rule, same activation kinds), so the benchmark in benchmarks/ compares
apples to apples and tests pass on either backend.
"""

import numpy as np


def _act(kind: int, coef, h):
    if kind == 0:
        return coef[0] + h * (coef[1] + h * (coef[2] + h * coef[3]))
    if kind == 1:
        return np.maximum(h, 0.0)
    return np.where(h > 0.0, h, np.expm1(np.minimum(h, 0.0)))


def metropolis_sweep(W, H, resid, XT, v, delta, act_kind, act_coef, order, uniforms):
    k, d = W.shape
    inv_sqrt_d = 1.0 / np.sqrt(d)
    inv_sqrt_k = 1.0 / np.sqrt(k)
    accepts = 0
    for t, idx in enumerate(order):
        i, a = divmod(int(idx), d)
        dw = -2.0 * W[i, a]
        dh = (dw * inv_sqrt_d) * XT[a]
        row = H[i]
        dlam = (v[i] * inv_sqrt_k) * (_act(act_kind, act_coef, row + dh) - _act(act_kind, act_coef, row))
        dE = np.dot(dlam, dlam - 2.0 * resid) / (2.0 * delta)
        if dE <= 0.0 or uniforms[t] < np.exp(-dE):
            W[i, a] = -W[i, a]
            row += dh
            resid -= dlam
            accepts += 1
    return accepts


def pairwise_log_abs_sum(lam, cutoff):
    lam = np.asarray(lam, dtype=float)
    d = lam.size
    iu = np.triu_indices(d, 1)
    diffs = np.abs(lam[iu[0]] - lam[iu[1]])
    keep = diffs >= cutoff
    excluded = int(diffs.size - keep.sum())
    return float(np.log(diffs[keep]).sum()), excluded


def hilbert_sums(lam, eta):
    lam = np.asarray(lam, dtype=float)
    d = lam.size
    diff = lam[:, None] - lam[None, :]
    if eta == 0.0:
        np.fill_diagonal(diff, np.inf)
        return (1.0 / diff).sum(axis=1) / d
    np.fill_diagonal(diff, 0.0)  # 0 / (0 + eta^2) = 0 drops the self term
    return (diff / (diff * diff + eta * eta)).sum(axis=1) / d
