"""Closed-form asymptotic expansions for parabolic Cauchy problems."""

from .algebra import (
    MultiIndex,
    Polynomial,
    TimeMonomial,
    WeylOperator,
    compositions,
    multi_indices,
    multi_indices_upto,
    poly_arith,
    simplex_integrate,
    weyl_compose,
)
from .basis import (
    CoefficientField,
    ExpansionScheme,
    expand_enhanced,
    expand_hermite,
    expand_taylor,
    expand_time_taylor,
)
from .engine import (
    ApproximateSolution,
    ExpansionPlan,
    SolveResult,
    approximate_kernel,
    bootstrap_solve,
    build_G,
    build_Gbar,
    build_L,
    duhamel_u1,
    fundamental_solution,
    solve,
)
from .errors import ConfigError, ModelError, NumericalError
from .gaussian import (
    GaussHermite,
    GaussianKernel,
    Piecewise,
    PolyGaussian,
    Trapezoid,
    apply_weyl_to_kernel,
    density,
    hermite_inner_products,
    hermite_polynomial,
    integrate_against,
    kernel_from_a0,
)

__version__ = "0.1.0"
