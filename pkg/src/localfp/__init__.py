"""Distributed fixed-point methods with local steps or randomized communication."""

from .engine import (
    NonConvergence,
    ReferencePoints,
    Schedule,
    Trajectory,
    compute_references,
    epoch_operator,
    run_local,
    run_randomized,
    solve_fixed_point,
)
from .operators import (
    DimensionError,
    NumericalFailure,
    Operator,
    OperatorProperties,
    Sampler,
    apply,
    average,
    make_affine_operator,
    make_cyclic_gd_operator,
    make_gd_operator,
    power,
    relax,
    residual,
    verify_property,
)

__version__ = "0.1.0"
