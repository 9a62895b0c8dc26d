"""Nested solvers for min f + g over a closed convex set C.

``solve_dr_outer`` runs Douglas-Rachford on f and (iota_C + g), computing the
prox of the second term with an inner forward-backward loop.
``solve_fb_outer`` runs forward-backward on (iota_C + f) and g, computing the
prox of the first term with an inner Douglas-Rachford loop.
Both keep every point where grad g is evaluated inside C.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .splitting import (
    ConvergenceBound,
    FBSchedule,
    NonFiniteIterateError,
    RunTrace,
    StopRule,
    prox_constrained_nonsmooth,
    prox_constrained_smooth,
)

__all__ = [
    "InfeasiblePointError",
    "ConstrainedCompositeProblem",
    "OuterConfig",
    "RunReport",
    "solve_dr_outer",
    "solve_fb_outer",
    "theoretical_inner_bound",
]


class InfeasiblePointError(ValueError):
    pass


@dataclass
class ConstrainedCompositeProblem:
    """f (separable, with prox), g (smooth on C, beta-Lipschitz gradient) and C.

    ``prox_f(y, scale)`` evaluates prox_{scale f}(y). With ``audit`` set, each
    gradient call checks that its argument lies in C and counts violations in
    ``outside_calls``.
    """

    f: Callable
    prox_f: Callable
    g: Callable
    grad_g: Callable
    beta: float
    project_C: Callable
    audit: bool = False
    feas_tol: float = 1e-9
    gradient_calls: int = field(default=0, init=False)
    outside_calls: int = field(default=0, init=False)

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be > 0")

    @classmethod
    def from_potential(cls, potential, g, grad_g, beta, project_C, **kw):
        return cls(potential, potential.prox, g, grad_g, beta, project_C, **kw)

    def residual(self, x) -> float:
        return float(np.linalg.norm(self.project_C(x) - x))

    def is_feasible(self, x) -> bool:
        # relative to the iterate size: projections of large frame vectors
        # carry roundoff of order 1e-16 * ||x||
        return self.residual(x) <= self.feas_tol * max(1.0, float(np.linalg.norm(x)))

    def gradient(self, x):
        self.gradient_calls += 1
        if self.audit and not self.is_feasible(x):
            self.outside_calls += 1
        return self.grad_g(x)

    def objective(self, x) -> float:
        return float(self.f(x)) + float(self.g(x))


@dataclass(frozen=True)
class OuterConfig:
    """Knobs shared by both nested solvers.

    ``gamma_factor`` sets the forward-backward step: 0.995/(kappa*beta) for the
    inner loop of the DR-outer solver, 0.995/beta for the FB-outer solver.
    """

    kappa: float = 60.0
    eta: float = 1e-4
    inner_cap: int = 1000
    outer_cap: int = 500
    outer_eta: float = 1e-6
    gamma_factor: float = 0.995
    tau: float = 1.0
    lam: float = 1.0
    solution_tol: float = 1e-10
    record_objective: bool = True

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be > 0")
        if not (self.eta > 0 and self.outer_eta >= 0 and self.solution_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.inner_cap < 1 or self.outer_cap < 1:
            raise ValueError("iteration caps must be >= 1")
        if not 0 < self.gamma_factor < 2:
            raise ValueError("gamma_factor must lie in (0, 2)")
        if not 0 < self.tau <= 2:
            raise ValueError("tau must lie in (0, 2]")
        if not 0 < self.lam <= 1:
            raise ValueError("lam must lie in (0, 1]")


@dataclass(frozen=True)
class RunReport:
    solution: np.ndarray
    trace: RunTrace
    inner_counts: tuple
    objective_final: float
    algorithm: str
    converged: bool


def _require_feasible(problem, x, name):
    x = np.array(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NonFiniteIterateError(name, 0)
    if not problem.is_feasible(x):
        raise InfeasiblePointError(
            f"{name}: starting point is not in C (projection residual {problem.residual(x):.3e})")
    return x


def _with_trace(err, trace):
    # keep the partial run for diagnostics
    err.trace = trace
    return err


def _objective(problem, config, x):
    return problem.objective(x) if config.record_objective else math.nan


def solve_dr_outer(problem: ConstrainedCompositeProblem, config: OuterConfig, z0,
                   callback: Callable | None = None) -> RunReport:
    """Douglas-Rachford outer loop, forward-backward inner prox.

    Each inner loop starts at the previous half-iterate, which lies in C, so
    all gradient evaluations happen in C. The returned solution is
    prox_{iota_C + kappa g} of the final z, computed to ``solution_tol``.
    """
    z = _require_feasible(problem, z0, "solve_dr_outer")
    kappa, beta = config.kappa, problem.beta
    sched = FBSchedule(config.gamma_factor / (kappa * beta), config.lam)
    inner_stop = StopRule(config.inner_cap, config.eta)
    trace = RunTrace()
    trace.record(0.0, _objective(problem, config, z))
    z_half = z.copy()
    counts = []
    converged = False
    for m in range(config.outer_cap):
        try:
            z_half, n_inner = prox_constrained_smooth(
                z, kappa, problem.gradient, beta, problem.project_C,
                schedule=sched, x_init=z_half, stop=inner_stop, full_output=True)
        except NonFiniteIterateError as err:
            raise _with_trace(err, trace)
        z_new = z + config.tau * (problem.prox_f(2.0 * z_half - z, kappa) - z_half)
        if not np.all(np.isfinite(z_new)):
            raise _with_trace(NonFiniteIterateError("solve_dr_outer", m), trace)
        step = float(np.linalg.norm(z_new - z))
        z = z_new
        counts.append(n_inner)
        trace.record(step, _objective(problem, config, z_half), n_inner)
        if callback is not None:
            callback(m, z_half, z)
        if step <= config.outer_eta:
            converged = True
            break
    solution = prox_constrained_smooth(
        z, kappa, problem.gradient, beta, problem.project_C, schedule=sched,
        x_init=z_half, stop=StopRule(20 * config.inner_cap, config.solution_tol))
    return RunReport(solution, trace, tuple(counts), problem.objective(solution),
                     "dr-outer", converged)


def solve_fb_outer(problem: ConstrainedCompositeProblem, config: OuterConfig, x0,
                   callback: Callable | None = None) -> RunReport:
    """Forward-backward outer loop, Douglas-Rachford inner prox.

    The gradient step x' = x - gamma grad g(x) is taken at x in C; the inner
    loop approximates prox_{iota_C + gamma f}(x') and returns a point of C.
    """
    x = _require_feasible(problem, x0, "solve_fb_outer")
    gamma = config.gamma_factor / problem.beta
    FBSchedule(gamma, config.lam).check(problem.beta)
    inner_stop = StopRule(config.inner_cap, config.eta)
    trace = RunTrace()
    trace.record(0.0, _objective(problem, config, x))
    counts = []
    converged = False

    def prox_gf(y):
        return problem.prox_f(y, gamma)

    for n in range(config.outer_cap):
        x_fwd = x - gamma * problem.gradient(x)
        try:
            z_half, m_inner = prox_constrained_nonsmooth(
                x_fwd, gamma, prox_gf, problem.project_C, tau=config.tau,
                stop=inner_stop, full_output=True)
        except NonFiniteIterateError as err:
            raise _with_trace(err, trace)
        x_new = x + config.lam * (z_half - x)
        if not np.all(np.isfinite(x_new)):
            raise _with_trace(NonFiniteIterateError("solve_fb_outer", n), trace)
        step = float(np.linalg.norm(x_new - x))
        x = x_new
        counts.append(m_inner)
        trace.record(step, _objective(problem, config, x), m_inner)
        if callback is not None:
            callback(n, x)
        if step <= config.outer_eta:
            converged = True
            break
    return RunReport(x, trace, tuple(counts), problem.objective(x), "fb-outer", converged)


def theoretical_inner_bound(m: int, xi: float, rho, *, kappa: float = 1.0,
                            g_gap: float | None = None,
                            step_norm: float | None = None) -> int:
    """Smallest inner iteration count N_m guaranteed by the linear rate rho.

    m = 0:  rho^N sqrt(2 kappa) sqrt(g(z_0) - inf g(C)) <= xi   (needs g_gap)
    m > 0:  rho^(N-1) (1 + rho^(1-m) ||z_m - z_{m-1}|| / xi) <= 1   (needs step_norm)

    Diagnostic only; it is far larger than what the step-norm rule uses.
    """
    if isinstance(rho, ConvergenceBound):
        rho = rho.rho
    rho = float(rho)
    if not 0 < rho < 1:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    if not xi > 0:
        raise ValueError("xi must be > 0")
    if m < 0:
        raise ValueError("m must be >= 0")
    if math.isinf(xi):
        return 1
    log_rho = math.log(rho)

    if m == 0:
        if g_gap is None:
            raise ValueError("m = 0 needs g_gap = g(z_0) - inf g(C)")
        if g_gap < 0:
            raise ValueError("g_gap must be >= 0")
        c = math.sqrt(2.0 * kappa) * math.sqrt(g_gap)

        def holds(n):
            return rho ** n * c <= xi

        est = 1 if c <= xi else math.ceil(math.log(xi / c) / log_rho)
    else:
        if step_norm is None:
            raise ValueError("m > 0 needs step_norm = ||z_m - z_{m-1}||")
        ratio = step_norm / xi

        def holds(n):
            # rho^(n-1) + ratio * rho^(n-m), in logs when the power overflows
            try:
                return rho ** (n - 1) + ratio * rho ** (n - m) <= 1.0
            except OverflowError:
                return False

        if ratio == 0:
            est = 1
        else:
            log_a = math.log(ratio) + (1 - m) * log_rho
            est = 1 + math.ceil(np.logaddexp(0.0, log_a) / -log_rho)
    n = max(1, est - 2)
    while not holds(n):
        n += 1
    while n > 1 and holds(n - 1):
        n -= 1
    return n
