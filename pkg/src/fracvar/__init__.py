"""Combined Caputo fractional derivatives and the fractional calculus of variations."""

__version__ = "0.1.0"

from .expr import ExprAst, parse
from .fracops import (
    DiscreteOperator,
    FracParams,
    Grid,
    OperatorKind,
    SampledFunction,
    build_operator_matrix,
    cfd_left,
    cfd_right,
    combined_caputo,
    dual_rl,
    rlfd_left,
    rlfd_right,
    rlfi_left,
    rlfi_right,
)
from .special import gamma
from .variational import (
    Boundary,
    Constraint,
    Problem,
    SolveReport,
    SolverOptions,
    Trajectory,
    VariationProbe,
    evaluate_functional,
    first_variation,
    solve,
)
