"""regnoise: a numerical laboratory for regularisation by noise.

Averaging operators along rough Gaussian paths, nonlinear Young integration,
Young differential equations and their flows, and the associated transport /
continuity equations.  The ``lab`` submodule and the ``regnoise-lab`` CLI
orchestrate the named experiments and persist reproducible run directories.
"""

__version__ = "0.1.0"

from .grids import (
    GridError,
    RegularityEstimate,
    ScalarField,
    SpaceGrid,
    SpaceTimeField,
    SUPER_SMOOTH,
    TimeGrid,
    besov_norm,
    estimate_holder_exponent,
    estimate_spatial_regularity,
    heat_estimate_check,
    heat_semigroup,
    holder_seminorm,
    littlewood_paley_blocks,
    mollifier_kernel,
    mollify,
)
from .gaussian import (
    FbmDecomposition,
    GaussianError,
    HurstParams,
    SamplePath,
    conditional_decomposition,
    fbm_covariance,
    fbm_from_driver,
    marginal_variance_factor,
    sample_fbm_exact,
    sample_fbm_volterra,
    sample_two_sided_bm,
)
from .fracalc import (
    FracCalcError,
    GirsanovReport,
    TimeSeries,
    apply_KH,
    apply_KH_inverse,
    frac_derivative,
    frac_integral,
    girsanov_report,
    kh_inv_l2_bound_check,
)
from .young import (
    Germ,
    YoungError,
    YoungIntegral,
    linear_young_integral,
    nonlinear_young_integral,
    sew,
)
from .averaging import (
    AveragedField,
    AveragingError,
    CommutationReport,
    GainReport,
    GainRow,
    SpectralDrift,
    ThresholdReport,
    average_affine_drift,
    average_grid,
    average_spectral,
    check_commutation,
    ito_tanaka_rhs,
    regularity_gain_experiment,
    synthesize_drift,
    threshold_beta,
    threshold_flow,
)
from .yde import (
    AprioriReport,
    ComparisonReport,
    FlowAtlas,
    PeanoReport,
    SecondVariationReport,
    YdeError,
    YdeProblem,
    YdeSolveReport,
    apriori_report,
    compare_solutions,
    compute_flow,
    flow_property_check,
    jacobian_identity_check,
    peano_experiment,
    save_flow_atlas,
    second_variation,
    solve_yde,
    solve_yde_report,
    variational_derivative,
)
from .pde import (
    CommutatorSweep,
    ContinuityFlow,
    ParticleMeasure,
    PdeError,
    TransportSolution,
    WeakResidualReport,
    characteristic_constancy,
    commutator,
    commutator_vanishing_check,
    kernel_density_deviation,
    solve_continuity,
    solve_transport,
    tensor_bump_probes,
    transport_classical_residual,
    transport_weak_residual,
)
from .lab import ExperimentConfig, LabError, RunManifest

__all__ = [
    "AprioriReport",
    "AveragedField",
    "AveragingError",
    "CommutationReport",
    "CommutatorSweep",
    "ComparisonReport",
    "ContinuityFlow",
    "ExperimentConfig",
    "FbmDecomposition",
    "FlowAtlas",
    "FracCalcError",
    "GainReport",
    "GainRow",
    "GaussianError",
    "Germ",
    "GirsanovReport",
    "GridError",
    "HurstParams",
    "LabError",
    "ParticleMeasure",
    "PdeError",
    "PeanoReport",
    "RegularityEstimate",
    "RunManifest",
    "SamplePath",
    "ScalarField",
    "SecondVariationReport",
    "SpaceGrid",
    "SpaceTimeField",
    "SpectralDrift",
    "SUPER_SMOOTH",
    "ThresholdReport",
    "TimeGrid",
    "TimeSeries",
    "TransportSolution",
    "WeakResidualReport",
    "YdeError",
    "YdeProblem",
    "YdeSolveReport",
    "YoungError",
    "YoungIntegral",
    "apply_KH",
    "apply_KH_inverse",
    "apriori_report",
    "average_affine_drift",
    "average_grid",
    "average_spectral",
    "besov_norm",
    "characteristic_constancy",
    "check_commutation",
    "commutator",
    "commutator_vanishing_check",
    "compare_solutions",
    "compute_flow",
    "conditional_decomposition",
    "estimate_holder_exponent",
    "estimate_spatial_regularity",
    "fbm_covariance",
    "fbm_from_driver",
    "flow_property_check",
    "frac_derivative",
    "frac_integral",
    "girsanov_report",
    "heat_estimate_check",
    "heat_semigroup",
    "holder_seminorm",
    "ito_tanaka_rhs",
    "jacobian_identity_check",
    "kernel_density_deviation",
    "kh_inv_l2_bound_check",
    "linear_young_integral",
    "littlewood_paley_blocks",
    "marginal_variance_factor",
    "mollifier_kernel",
    "mollify",
    "nonlinear_young_integral",
    "peano_experiment",
    "regularity_gain_experiment",
    "sample_fbm_exact",
    "sample_fbm_volterra",
    "sample_two_sided_bm",
    "save_flow_atlas",
    "second_variation",
    "sew",
    "solve_continuity",
    "solve_transport",
    "solve_yde",
    "solve_yde_report",
    "synthesize_drift",
    "tensor_bump_probes",
    "threshold_beta",
    "threshold_flow",
    "transport_classical_residual",
    "transport_weak_residual",
    "variational_derivative",
]
