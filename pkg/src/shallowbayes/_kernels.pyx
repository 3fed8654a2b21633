# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: Metropolis sweep, pairwise log-distances, Hilbert sums.

The Metropolis sweep is a genuinely sequential loop (every flip conditions on
the previous one through the cached preactivations), so it cannot be
vectorised away; this module exists for that loop plus the two O(d^2)
eigenvalue reductions.  shallowbayes.kernels selects these implementations
when the extension built, and the pure-numpy twins otherwise.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, expm1, log

cnp.import_array()

# activation kinds understood by the sweep: 0 = cubic polynomial in monomial
# coefficients, 1 = relu, 2 = elu.
cdef inline double _act(int kind, const double* c, double h) noexcept nogil:
    if kind == 0:
        return c[0] + h * (c[1] + h * (c[2] + h * c[3]))
    elif kind == 1:
        return h if h > 0.0 else 0.0
    else:
        return h if h > 0.0 else expm1(h)


def metropolis_sweep(double[:, ::1] W, double[:, ::1] H, double[::1] resid,
                     double[:, ::1] XT, double[::1] v, double delta,
                     int act_kind, double[::1] act_coef,
                     long[::1] order, double[::1] uniforms):
    """One sweep of single-entry sign flips over the entries listed in order.

    W: k x d current signs, H: k x n cached preactivations W X^T / sqrt(d),
    resid: y - lambda, XT: d x n transposed inputs.  Everything is updated in
    place; returns the number of accepted flips.  delta is the Gaussian
    channel variance (must be positive), uniforms one U(0,1) draw per
    proposed flip.
    """
    cdef Py_ssize_t k = W.shape[0]
    cdef Py_ssize_t d = W.shape[1]
    cdef Py_ssize_t n = resid.shape[0]
    cdef Py_ssize_t t, mu, i, a
    cdef double inv_sqrt_d = 1.0 / np.sqrt(d)
    cdef double inv_sqrt_k = 1.0 / np.sqrt(k)
    cdef double dw, vi, dh, s_old, s_new, dl, dE, r_mu
    cdef double two_delta = 2.0 * delta
    cdef long idx
    cdef long accepts = 0
    cdef const double* coef = &act_coef[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dlam_arr = np.empty(n)
    cdef double[::1] dlam = dlam_arr

    for t in range(order.shape[0]):
        idx = order[t]
        i = idx // d
        a = idx - i * d
        dw = -2.0 * W[i, a]
        vi = v[i] * inv_sqrt_k
        dE = 0.0
        for mu in range(n):
            dh = dw * XT[a, mu] * inv_sqrt_d
            s_old = _act(act_kind, coef, H[i, mu])
            s_new = _act(act_kind, coef, H[i, mu] + dh)
            dl = vi * (s_new - s_old)
            dlam[mu] = dl
            r_mu = resid[mu]
            dE += dl * (dl - 2.0 * r_mu)
        dE /= two_delta
        if dE <= 0.0 or uniforms[t] < exp(-dE):
            W[i, a] = -W[i, a]
            for mu in range(n):
                H[i, mu] += dw * XT[a, mu] * inv_sqrt_d
                resid[mu] -= dlam[mu]
            accepts += 1
    return accepts


def pairwise_log_abs_sum(double[::1] lam, double cutoff):
    """(sum over i<j of log|lam_i - lam_j|, number of pairs below cutoff)."""
    cdef Py_ssize_t d = lam.shape[0]
    cdef Py_ssize_t i, j
    cdef double total = 0.0
    cdef double diff
    cdef long excluded = 0
    for i in range(d):
        for j in range(i + 1, d):
            diff = lam[i] - lam[j]
            if diff < 0.0:
                diff = -diff
            if diff < cutoff:
                excluded += 1
            else:
                total += log(diff)
    return total, excluded


def hilbert_sums(double[::1] lam, double eta):
    """h_i = (1/d) sum_{j != i} (lam_i-lam_j) / ((lam_i-lam_j)^2 + eta^2).

    eta = 0 gives the bare principal-value sum (self term skipped).
    """
    cdef Py_ssize_t d = lam.shape[0]
    cdef Py_ssize_t i, j
    cdef double diff, acc, eta2
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(d)
    eta2 = eta * eta
    for i in range(d):
        acc = 0.0
        for j in range(d):
            if j == i:
                continue
            diff = lam[i] - lam[j]
            if eta2 == 0.0:
                acc += 1.0 / diff
            else:
                acc += diff / (diff * diff + eta2)
        out[i] = acc / d
    return out
