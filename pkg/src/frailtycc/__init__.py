"""Semiparametric shared frailty models for matched case-control family data.

The package estimates regression coefficients, a frailty dependence
parameter, and a nonparametric cumulative baseline hazard from matched
case-control family survival data, with weighted-bootstrap inference and a
Monte Carlo replication harness.
"""

from .bootstrap import BootstrapConfig, BootstrapResult, bootstrap_fit, draw_weights
from .data import (
    Dataset,
    FamilyRecord,
    MatchedSet,
    Subject,
    Violation,
    load_csv,
    load_json,
    save_csv,
    save_json,
    validate,
)
from .errors import (
    BootstrapError,
    DataFormatError,
    DomainError,
    FrailtyCCError,
    HazardEstimationError,
    NonConvergenceError,
    QuadratureError,
    SimulationError,
    SingularJacobianError,
)
from .hazard import (
    GammaParams,
    HazardContext,
    StepCumHazard,
    evaluate,
    first_stage,
    left_restricted_three_stage,
    risk_weight,
    second_stage,
)
from .kernels import (
    FrailtyLaw,
    KernelClipConfig,
    LawKind,
    clipped_posterior_mean,
    custom_frailty,
    family_posterior_mean,
    gamma_frailty,
    moment_ratio,
    moment_ratio_dbeta,
    moment_ratio_dtheta,
    posterior_mean,
    tilted_moment,
    tilted_moment_dtheta,
    validate_law,
)
from .likelihood import (
    EvalPoint,
    ScoreVector,
    proband_loglik,
    proband_score,
    relatives_loglik,
    relatives_score,
    score_jacobian,
    total_score,
)
from .simulation import (
    ReplicationSummary,
    SimDesign,
    generate_dataset,
    generate_family,
    run_replications,
)
from .solver import FitOptions, FitResult, fit, profile_hazard

__version__ = "0.1.0"

__all__ = [
    "BootstrapConfig",
    "BootstrapError",
    "BootstrapResult",
    "DataFormatError",
    "Dataset",
    "DomainError",
    "EvalPoint",
    "FamilyRecord",
    "FitOptions",
    "FitResult",
    "FrailtyCCError",
    "FrailtyLaw",
    "GammaParams",
    "HazardContext",
    "HazardEstimationError",
    "KernelClipConfig",
    "LawKind",
    "MatchedSet",
    "NonConvergenceError",
    "QuadratureError",
    "ReplicationSummary",
    "ScoreVector",
    "SimDesign",
    "SimulationError",
    "SingularJacobianError",
    "StepCumHazard",
    "Subject",
    "Violation",
    "bootstrap_fit",
    "clipped_posterior_mean",
    "custom_frailty",
    "draw_weights",
    "evaluate",
    "family_posterior_mean",
    "first_stage",
    "fit",
    "gamma_frailty",
    "generate_dataset",
    "generate_family",
    "left_restricted_three_stage",
    "load_csv",
    "load_json",
    "moment_ratio",
    "moment_ratio_dbeta",
    "moment_ratio_dtheta",
    "posterior_mean",
    "proband_loglik",
    "proband_score",
    "profile_hazard",
    "relatives_loglik",
    "relatives_score",
    "risk_weight",
    "run_replications",
    "save_csv",
    "save_json",
    "score_jacobian",
    "second_stage",
    "tilted_moment",
    "tilted_moment_dtheta",
    "total_score",
    "validate",
    "validate_law",
]
