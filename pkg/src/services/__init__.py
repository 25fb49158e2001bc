"""Service modules for the stability probe."""

from .problem_model import (
    Box,
    ClosedFormModel,
    CompositeBody,
    ConvexPiece,
    EuclideanNorm,
    OrthantNonpos,
    ParametricProblem,
    Polynomial,
    SmoothMap,
    SquaredNorm,
    ZeroIndicator,
    eval_phi,
    grad_f0_and_jac_F,
)
from .problem_registry import list_registry, load_problem_file, problem_from_dict, registry_build
from .subdifferential_service import (
    CQReport,
    PolyhedralSet,
    check_basic_cq,
    multiplier_set,
    multiplier_set_convexity_test,
    subdiff_g,
)
from .localized_solver import (
    ArgminResult,
    Localization,
    SolveConfig,
    ValueSurface,
    solve_tilted,
    truncated_stationary_map,
    value_surface,
)
from .graph_sampler import GraphSample, graph_sampler_for
from .stability_probes import (
    ModulusEstimate,
    ProbeConfig,
    StabilityVerdict,
    Verdict,
    classify,
    envelope_check_u,
    envelope_check_v,
    estimate_lipschitz,
    graphical_derivative_inner_norm,
    hypoconvexity_modulus,
    prox_regularity_level,
    truncation_identity_check,
)
from .second_order import (
    SecondOrderSample,
    SOSCReport,
    critical_subspace,
    lagrangian_hessian,
    strict_second_subdiff_estimate,
    strong_sosc_over_multipliers,
    tilt_crosscheck,
)
from .report_service import Report, RunConfig, run_probes

__all__ = [
    # Problem model
    'ParametricProblem',
    'Polynomial',
    'SmoothMap',
    'ConvexPiece',
    'OrthantNonpos',
    'ZeroIndicator',
    'Box',
    'EuclideanNorm',
    'SquaredNorm',
    'CompositeBody',
    'ClosedFormModel',
    'eval_phi',
    'grad_f0_and_jac_F',
    'registry_build',
    'list_registry',
    'load_problem_file',
    'problem_from_dict',

    # Subdifferential oracle
    'PolyhedralSet',
    'CQReport',
    'subdiff_g',
    'multiplier_set',
    'check_basic_cq',
    'multiplier_set_convexity_test',

    # Localized solver
    'Localization',
    'SolveConfig',
    'ArgminResult',
    'ValueSurface',
    'solve_tilted',
    'truncated_stationary_map',
    'value_surface',

    # Probes
    'GraphSample',
    'graph_sampler_for',
    'Verdict',
    'ProbeConfig',
    'ModulusEstimate',
    'StabilityVerdict',
    'estimate_lipschitz',
    'envelope_check_v',
    'envelope_check_u',
    'hypoconvexity_modulus',
    'prox_regularity_level',
    'graphical_derivative_inner_norm',
    'truncation_identity_check',
    'classify',

    # Second order
    'SOSCReport',
    'SecondOrderSample',
    'lagrangian_hessian',
    'critical_subspace',
    'strong_sosc_over_multipliers',
    'strict_second_subdiff_estimate',
    'tilt_crosscheck',

    # Reporting
    'RunConfig',
    'Report',
    'run_probes',
]
