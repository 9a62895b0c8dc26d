"""Nested proximal splitting for constrained convex problems, with
Poisson and signal-dependent Gaussian image restoration on wavelet frames."""

from .prox import (
    ClosedInterval,
    PotentialArray,
    ScalarPotential,
    SemiOrthogonalOp,
    brute_force_prox,
    grid_minimize,
    prox_potential,
    prox_scalar,
    prox_scalar_constrained,
    prox_semiorthogonal,
    prox_separable,
)
from .splitting import (
    ConvergenceBound,
    DRSchedule,
    ErrorInjection,
    FBSchedule,
    RunTrace,
    StopRule,
    dr_solve,
    fb_solve,
    prox_constrained_nonsmooth,
    prox_constrained_smooth,
)
from .nested import (
    ConstrainedCompositeProblem,
    OuterConfig,
    RunReport,
    solve_dr_outer,
    solve_fb_outer,
    theoretical_inner_bound,
)

__version__ = "0.1.0"
