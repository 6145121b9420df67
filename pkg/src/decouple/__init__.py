"""Decoupling fields and their derivative hierarchies for coupled Markovian FBSDEs."""

from .errors import (
    ConfigError,
    DecoupleError,
    NonConvergenceError,
    NonFiniteError,
    OrderExceededError,
    ShapeMismatchError,
    SingularityError,
    UnknownProblemError,
)
from .field_solver import (
    FieldStack,
    FieldTrajectory,
    SingularityDiagnostics,
    backward_step,
    derivative_consistency,
    init_terminal,
    monitor_singularity,
    scaling_transform,
    solve,
    solve_z0,
)
from .generators import (
    GeneratorValue,
    ThetaPoint,
    check_structural_dependence,
    eval_generators,
    eval_h1,
    eval_hk,
    eval_phi1,
    eval_phik,
)
from .grid import GridSpec
from .model import (
    DerivativeBundle,
    FbsdeProblem,
    MllcReport,
    evaluate_coefficients,
    make_symbols,
    validate_mllc,
)
from .registry import registry_get
from .simulate import decoupling_residual, simulate_forward, z_bound_check

__version__ = "0.1.0"
