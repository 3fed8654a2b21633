"""Bayes-optimal learning of extensive-width shallow networks.

Numerical toolkit for the teacher-student setting where a width-k one-hidden-
layer network with k/d -> gamma labels n = alpha d^2 Gaussian inputs.  The
package solves the universal and specialisation replica fixed points, locates
the learning transition alpha_sp, evaluates generalisation error and mutual
information, runs the GAMP-RIE polynomial-time learner, and cross-checks
everything with Metropolis / Hamiltonian Monte Carlo posterior sampling at
desk scale.
"""

from shallowbayes.activations import ActivationSpec, builtin, g_eval, g_prime, hermite_coefficients
from shallowbayes.gamp import GampConfig, GampState, estimate_mean, estimate_s1, gamp_rie_fit
from shallowbayes.generalization import (
    ErrorReport,
    eps_from_samples,
    eps_opt_gaussian,
    eps_opt_generic,
    error_report,
    gibbs_error_relation,
    tensor_overlaps,
)
from shallowbayes.mcmc import (
    ChainConfig,
    ChainResult,
    EquilibrationReport,
    NishimoriReport,
    OverlapTrace,
    centered_q2,
    centered_q2_series,
    equilibration_gate,
    hmc_gaussian,
    load_snapshot,
    metropolis_binary,
    nishimori_check,
    overlap_trace,
    save_snapshot,
)
from shallowbayes.model import Dataset, ModelParams, TeacherInstance, generate_dataset, sample_teacher
from shallowbayes.saddle import (
    ChannelModel,
    OverlapState,
    PhaseSolution,
    SolverConfig,
    TheoryParams,
    find_alpha_sp,
    free_entropy,
    mutual_information,
    solve_equilibrium,
    solve_linear_regime,
    solve_specialisation,
    solve_universal,
)
from shallowbayes.spectral import (
    SpectralConfig,
    SpectralTable,
    SpectrumEnsemble,
    build_spectral_table,
    packaged_table,
    rie_shrink,
    sample_spectrum,
)

__all__ = [
    "ActivationSpec",
    "builtin",
    "g_eval",
    "g_prime",
    "hermite_coefficients",
    "ModelParams",
    "TeacherInstance",
    "Dataset",
    "sample_teacher",
    "generate_dataset",
    "ChannelModel",
    "TheoryParams",
    "OverlapState",
    "PhaseSolution",
    "SolverConfig",
    "solve_universal",
    "solve_specialisation",
    "solve_equilibrium",
    "solve_linear_regime",
    "find_alpha_sp",
    "free_entropy",
    "mutual_information",
    "SpectralConfig",
    "SpectralTable",
    "SpectrumEnsemble",
    "build_spectral_table",
    "packaged_table",
    "rie_shrink",
    "sample_spectrum",
    "ErrorReport",
    "eps_opt_gaussian",
    "eps_opt_generic",
    "error_report",
    "eps_from_samples",
    "tensor_overlaps",
    "gibbs_error_relation",
    "GampConfig",
    "GampState",
    "estimate_mean",
    "estimate_s1",
    "gamp_rie_fit",
    "ChainConfig",
    "ChainResult",
    "OverlapTrace",
    "EquilibrationReport",
    "NishimoriReport",
    "metropolis_binary",
    "hmc_gaussian",
    "overlap_trace",
    "centered_q2",
    "centered_q2_series",
    "equilibration_gate",
    "nishimori_check",
    "save_snapshot",
    "load_snapshot",
]

__version__ = "0.1.0"
