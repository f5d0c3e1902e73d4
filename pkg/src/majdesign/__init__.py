"""Algorithmic design of structured matrix majorizers."""

from .dual import (
    DesignProblem,
    DesignResult,
    ascent_step,
    cubic_real_roots,
    design,
    dual_gradient,
    dual_value,
    duality_gap,
    line_search_coefficients,
    verify_majorization,
)
from .majorizers import (
    MajorizerSpec,
    best_circulant_approx,
    circ_majorizer,
    lipschitz_majorizer,
    scale_to_majorize,
    sqs_majorizer,
)
from .operators import (
    CirculantOperator,
    DenseOperator,
    DFTOperator,
    DiagonalOperator,
    HermitianOperator,
    IdentityOperator,
    LinearOperator,
    StackedOperator,
    gram,
    materialize,
    power_iteration,
)
from .solvers import conjugate_gradient, majorized_spectrum, mm_quadratic, solve_M

__version__ = "0.1.0"
