"""Numerical toolkit for decoupled forward-backward doubly stochastic SDEs.

Simulates the coupled pair (X, (Y, Z)) driven by two independent Brownian
motions W and B, approximates the backward component with an implicit
discrete-time scheme whose conditional expectations condition on the whole
B-path, and measures discretization error, L2-regularity and forward strong
error against closed-form or fine-grid oracles.
"""

__version__ = "0.1.0"

from .backward import (
    ExactBackend,
    LsmcBackend,
    PicardConfig,
    SchemeSolution,
    backward_solve,
    make_backend,
    picard_solve,
    tilde_z,
)
from .condexp import (
    BasisSpec,
    FittedConditional,
    condexp_weighted,
    gaussian_central_moments,
    gaussian_moment_propagate,
    lsmc_fit,
)
from .errors import (
    BdsdeError,
    CapabilityError,
    CatalogError,
    ConditioningError,
    ConfigError,
    ConvergenceError,
    NumericError,
)
from .forward import ForwardPaths, euler_interpolate, euler_paths, exact_paths
from .metrics import (
    ErrorReport,
    MomentTable,
    RateFit,
    err_pi,
    euler_strong_error,
    fit_rate,
    l2_regularity,
    moment_check,
    p2_closed_form_gap,
    reference_solution,
)
from .paths import (
    Partition,
    PathBundle,
    aggregate_bundle,
    brownian_tail,
    brownian_tails,
    b_values,
    make_partition,
    refine_partition,
    sample_bundle,
    w_values,
)
from .probdef import (
    OracleSolution,
    ProblemSpec,
    StructureFlags,
    affine_problem,
    builtin_problem,
    lipschitz_spot_check,
    verify_structure_flags,
)

__all__ = [
    "__version__",
    "BasisSpec",
    "BdsdeError",
    "CapabilityError",
    "CatalogError",
    "ConditioningError",
    "ConfigError",
    "ConvergenceError",
    "ErrorReport",
    "ExactBackend",
    "FittedConditional",
    "ForwardPaths",
    "LsmcBackend",
    "MomentTable",
    "NumericError",
    "OracleSolution",
    "Partition",
    "PathBundle",
    "PicardConfig",
    "ProblemSpec",
    "RateFit",
    "SchemeSolution",
    "StructureFlags",
    "affine_problem",
    "aggregate_bundle",
    "b_values",
    "backward_solve",
    "brownian_tail",
    "brownian_tails",
    "builtin_problem",
    "condexp_weighted",
    "err_pi",
    "euler_interpolate",
    "euler_paths",
    "euler_strong_error",
    "exact_paths",
    "fit_rate",
    "gaussian_central_moments",
    "gaussian_moment_propagate",
    "l2_regularity",
    "lipschitz_spot_check",
    "lsmc_fit",
    "make_backend",
    "make_partition",
    "moment_check",
    "p2_closed_form_gap",
    "picard_solve",
    "reference_solution",
    "refine_partition",
    "sample_bundle",
    "tilde_z",
    "verify_structure_flags",
    "w_values",
]
