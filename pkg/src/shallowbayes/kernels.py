"""Backend selection for the hot kernels.

Importing this module picks the compiled Cython implementations when the
extension was built, and the pure-numpy fallbacks otherwise.  HAVE_COMPILED
says which one is live; benchmarks/bench_kernels.py times one against the
other.
"""

import numpy as np

try:
    from shallowbayes import _kernels as _impl
    HAVE_COMPILED = True
except ImportError:  # extension not built: numpy fallback
    from shallowbayes import _kernels_py as _impl
    HAVE_COMPILED = False

from shallowbayes import _kernels_py as _py_impl

metropolis_sweep = _impl.metropolis_sweep
pairwise_log_abs_sum = _impl.pairwise_log_abs_sum
hilbert_sums = _impl.hilbert_sums

ACT_POLY3, ACT_RELU, ACT_ELU = 0, 1, 2


def sweep_activation_code(spec):
    """(kind, monomial coefficients) for the sweep kernels, or None.

    Polynomial specs up to degree 3 are converted from the He basis to
    monomials (He2 = x^2 - 1, He3 = x^3 - 3x); relu and elu are built in.
    Anything else is not supported by the compiled sweep and callers must
    use a generic python path.
    """
    if spec.name.startswith("relu"):
        return ACT_RELU, np.zeros(4)
    if spec.name.startswith("elu"):
        return ACT_ELU, np.zeros(4)
    he = spec.he_coeffs
    if he is not None and len(he) <= 4:
        a = list(he) + [0.0] * (4 - len(he))
        mono = np.array([a[0] - a[2], a[1] - 3.0 * a[3], a[2], a[3]])
        return ACT_POLY3, mono
    return None
