"""Forward-backward and Douglas-Rachford iterations, and the two inner
solvers that compute prox of (indicator of C + smooth) and prox of
(indicator of C + nonsmooth).

Prox maps handed to the generic engines have the signature ``prox(y, scale)``;
gradients are ``grad(x)``; projections are ``project(x)``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from numbers import Real
from typing import Callable

import numpy as np

__all__ = [
    "SolverError",
    "NonFiniteIterateError",
    "StopRule",
    "FBSchedule",
    "DRSchedule",
    "ErrorInjection",
    "ConvergenceBound",
    "RunTrace",
    "fb_solve",
    "dr_solve",
    "prox_constrained_smooth",
    "prox_constrained_nonsmooth",
    "projected_gradient_prox",
]


class SolverError(RuntimeError):
    pass


class NonFiniteIterateError(SolverError):
    def __init__(self, where: str, iteration: int):
        super().__init__(f"non-finite iterate in {where} at iteration {iteration}")
        self.where = where
        self.iteration = iteration


def _check_finite(x, where, n):
    if not np.all(np.isfinite(x.astype(float) if x.dtype == object else x)):
        raise NonFiniteIterateError(where, n)


def _as_iterate(v):
    """Float copy, except object arrays (say of Fractions), which keep exact arithmetic."""
    v = np.asarray(v)
    return v.copy() if v.dtype == object else v.astype(float)


def _as_sequence(v) -> Callable[[int], float]:
    if callable(v):
        return v
    value = float(v)
    return lambda n: value


@dataclass(frozen=True)
class StopRule:
    """Stop when the step norm drops to ``step_tol`` or after ``max_iters``."""

    max_iters: int = 1000
    step_tol: float = 1e-10

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.step_tol >= 0:
            raise ValueError("step_tol must be >= 0")


@dataclass(frozen=True)
class FBSchedule:
    """Step sizes gamma_n and relaxations lambda_n for forward-backward.

    Constants may be given as floats. Varying sequences are callables
    ``n -> value`` and then need explicit bounds.
    """

    gamma: float | Callable[[int], float]
    lam: float | Callable[[int], float] = 1.0
    gamma_lo: float | None = None
    gamma_hi: float | None = None
    lambda_lo: float | None = None

    def __post_init__(self):
        for name, val, lo_name, hi_name in (("gamma", self.gamma, "gamma_lo", "gamma_hi"),
                                            ("lam", self.lam, "lambda_lo", None)):
            if isinstance(val, Real):
                if getattr(self, lo_name) is None:
                    object.__setattr__(self, lo_name, float(val))
                if hi_name and getattr(self, hi_name) is None:
                    object.__setattr__(self, hi_name, float(val))
            elif getattr(self, lo_name) is None or (hi_name and getattr(self, hi_name) is None):
                raise ValueError(f"a varying {name} sequence needs explicit bounds")
        if not 0 < self.gamma_lo <= self.gamma_hi:
            raise ValueError("need 0 < gamma_lo <= gamma_hi")
        if not 0 < self.lambda_lo <= 1:
            raise ValueError("need 0 < lambda_lo <= 1")

    def check(self, lipschitz: float):
        """Reject the schedule unless gamma_hi < 2 / lipschitz."""
        if lipschitz > 0 and not self.gamma_hi < 2.0 / lipschitz:
            raise ValueError(f"step size {self.gamma_hi:g} violates gamma < 2/{lipschitz:g}")
        return self

    def at(self, n: int):
        g = _as_sequence(self.gamma)(n)
        lam = _as_sequence(self.lam)(n)
        if not self.gamma_lo <= g <= self.gamma_hi:
            raise ValueError(f"gamma_{n}={g} outside [{self.gamma_lo}, {self.gamma_hi}]")
        if not self.lambda_lo <= lam <= 1:
            raise ValueError(f"lambda_{n}={lam} outside [{self.lambda_lo}, 1]")
        return g, lam


@dataclass(frozen=True)
class DRSchedule:
    """Relaxations tau_m in (0, 2] and the prox scale kappa.

    Without ``strongly_convex`` the relaxations are kept below ``2 - tau_margin``
    so that sum tau_m (2 - tau_m) diverges.
    """

    tau: float | Callable[[int], float] = 1.0
    kappa: float = 1.0
    tau_lo: float | None = None
    tau_hi: float | None = None
    strongly_convex: bool = False
    tau_margin: float = 1e-3

    def __post_init__(self):
        if isinstance(self.tau, Real):
            if self.tau_lo is None:
                object.__setattr__(self, "tau_lo", float(self.tau))
            if self.tau_hi is None:
                object.__setattr__(self, "tau_hi", float(self.tau))
        elif self.tau_lo is None or self.tau_hi is None:
            raise ValueError("a varying tau sequence needs explicit bounds")
        if not self.kappa > 0:
            raise ValueError("kappa must be > 0")
        if not 0 < self.tau_lo <= self.tau_hi <= 2:
            raise ValueError("need 0 < tau_lo <= tau_hi <= 2")
        if not self.strongly_convex and self.tau_hi > 2 - self.tau_margin:
            raise ValueError("tau_m too close to 2; declare strongly_convex=True "
                             "for the Peaceman-Rachford regime")

    def at(self, m: int) -> float:
        t = _as_sequence(self.tau)(m)
        if not self.tau_lo <= t <= self.tau_hi:
            raise ValueError(f"tau_{m}={t} outside [{self.tau_lo}, {self.tau_hi}]")
        return t


@dataclass(frozen=True)
class ErrorInjection:
    """Perturbations a_n (prox errors) and b_n (gradient / second prox errors)."""

    a: Callable[[int], np.ndarray] | None = None
    b: Callable[[int], np.ndarray] | None = None

    def a_at(self, n):
        return 0.0 if self.a is None else self.a(n)

    def b_at(self, n):
        return 0.0 if self.b is None else self.b(n)

    def partial_sums(self, n_terms: int):
        """(sum ||a_n||, sum ||b_n||) over the first ``n_terms`` terms."""
        sa = sum(float(np.linalg.norm(self.a_at(n))) for n in range(n_terms))
        sb = sum(float(np.linalg.norm(self.b_at(n))) for n in range(n_terms))
        return sa, sb


NO_ERRORS = ErrorInjection()


@dataclass(frozen=True)
class ConvergenceBound:
    rho: float
    source: str

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise ValueError(f"rate must lie in (0, 1), got {self.rho}")

    @classmethod
    def forward_backward(cls, schedule: FBSchedule, vartheta: float):
        """Rate for forward-backward when f1 is strongly convex with modulus vartheta."""
        gl = schedule.gamma_lo
        rho = 1.0 - schedule.lambda_lo * gl * vartheta / (1.0 + gl * vartheta)
        return cls(rho, f"forward-backward, modulus {vartheta:g}")

    @classmethod
    def constrained_prox(cls, schedule: FBSchedule):
        """Rate of the inner solver for prox of (indicator of C + kappa*g)."""
        gl = schedule.gamma_lo
        return cls(1.0 - schedule.lambda_lo * gl / (1.0 + gl), "constrained prox (smooth)")


@dataclass
class RunTrace:
    step_norms: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    inner_iters: list = field(default_factory=list)
    wall_seconds: list = field(default_factory=list)
    _t0: float = field(default_factory=time.perf_counter, repr=False)

    def record(self, step, objective=math.nan, inner=0):
        self.step_norms.append(float(step))
        self.objective.append(float(objective))
        self.inner_iters.append(int(inner))
        self.wall_seconds.append(time.perf_counter() - self._t0)

    def __len__(self):
        return len(self.step_norms)


def fb_solve(prox_f1, grad_f2, beta, schedule: FBSchedule, x0, *,
             errors: ErrorInjection = NO_ERRORS, stop: StopRule = StopRule(),
             objective: Callable | None = None, callback: Callable | None = None):
    """Relaxed forward-backward iteration for min f1 + f2.

    x_{n+1} = x_n + lambda_n (prox_{gamma_n f1}(x_n - gamma_n grad f2(x_n) + b_n) + a_n - x_n)

    Returns ``(x, trace)``.
    """
    schedule.check(beta)
    x = np.array(x0, dtype=float)
    trace = RunTrace()
    for n in range(stop.max_iters):
        gamma, lam = schedule.at(n)
        y = prox_f1(x - gamma * grad_f2(x) + errors.b_at(n), gamma) + errors.a_at(n)
        x_new = x + lam * (y - x)
        _check_finite(x_new, "fb_solve", n)
        step = float(np.linalg.norm(x_new - x))
        x = x_new
        trace.record(step, objective(x) if objective else math.nan)
        if callback is not None:
            callback(n + 1, x)
        if step <= stop.step_tol:
            break
    return x, trace


def dr_solve(prox_g1, prox_g2, schedule: DRSchedule, z0, *,
             errors: ErrorInjection = NO_ERRORS, stop: StopRule = StopRule(),
             objective: Callable | None = None, callback: Callable | None = None):
    """Relaxed Douglas-Rachford iteration for min g1 + g2.

    z_{m+1/2} = prox_{kappa g2} z_m + b_m
    z_{m+1}   = z_m + tau_m (prox_{kappa g1}(2 z_{m+1/2} - z_m) + a_m - z_{m+1/2})

    Returns ``(z, prox_{kappa g2}(z), trace)``.
    """
    kappa = schedule.kappa
    z = np.array(z0, dtype=float)
    trace = RunTrace()
    for m in range(stop.max_iters):
        tau = schedule.at(m)
        z_half = prox_g2(z, kappa) + errors.b_at(m)
        z_new = z + tau * (prox_g1(2 * z_half - z, kappa) + errors.a_at(m) - z_half)
        _check_finite(z_new, "dr_solve", m)
        step = float(np.linalg.norm(z_new - z))
        z = z_new
        trace.record(step, objective(z_half) if objective else math.nan)
        if callback is not None:
            callback(m, z_half, z)
        if step <= stop.step_tol:
            break
    return z, prox_g2(z, kappa), trace


def prox_constrained_smooth(x, kappa, grad_g, beta, project_C, *,
                            schedule: FBSchedule | None = None, x_init=None,
                            stop: StopRule = StopRule(), callback=None,
                            full_output: bool = False):
    """Approximate prox_{iota_C + kappa g}(x) by forward-backward.

    x_{n+1} = x_n + lambda_n (P_C((x_n - gamma_n (kappa grad g(x_n) - x)) / (1 + gamma_n)) - x_n)

    The default step is 0.995/(kappa*beta). ``x_init`` defaults to P_C(x); pass
    a point of C to keep every gradient evaluation inside C. With
    ``full_output`` the iteration count is returned as well. Object arrays of
    Fractions, with Fraction or int parameters, are iterated without rounding.
    """
    if not kappa > 0:
        raise ValueError("kappa must be > 0")
    if schedule is None:
        schedule = FBSchedule(0.995 / (kappa * beta))
    schedule.check(kappa * beta)
    x = _as_iterate(x)
    xn = project_C(x) if x_init is None else _as_iterate(x_init)
    n = 0
    for n in range(1, stop.max_iters + 1):
        gamma, lam = schedule.at(n - 1)
        y = project_C((xn - gamma * (kappa * grad_g(xn) - x)) / (1 + gamma))
        x_new = xn + lam * (y - xn)
        _check_finite(x_new, "prox_constrained_smooth", n)
        step = float(np.linalg.norm((x_new - xn).astype(float)))
        xn = x_new
        if callback is not None:
            callback(n, xn)
        if step <= stop.step_tol:
            break
    return (xn, n) if full_output else xn


def prox_constrained_nonsmooth(x, gamma, prox_gf, project_C, *, tau=1.0,
                               stop: StopRule = StopRule(), callback=None,
                               full_output: bool = False):
    """Approximate prox_{iota_C + gamma f}(x) by Douglas-Rachford.

    Uses kappa = 1 and z_0 = 2 prox_{gamma f}(x) - x, then

    z_{m+1/2} = P_C((z_m + x) / 2)
    z_{m+1}   = z_m + tau_m (prox_{gamma f}(2 z_{m+1/2} - z_m) - z_{m+1/2})

    ``prox_gf(y)`` evaluates prox_{gamma f}. Stops when z_{m+1} == z_m, when
    the step norm reaches ``stop.step_tol``, or after ``stop.max_iters``.
    Returns the last half-iterate, which lies in C.
    """
    if not gamma > 0:
        raise ValueError("gamma must be > 0")
    tau_seq = _as_sequence(tau)
    x = np.asarray(x, dtype=float)
    z = 2.0 * prox_gf(x) - x
    z_half = None
    m = 0
    for m in range(1, stop.max_iters + 1):
        t = tau_seq(m - 1)
        if not 0 < t <= 2:
            raise ValueError(f"tau_{m - 1}={t} outside (0, 2]")
        z_half = project_C(0.5 * (z + x))
        z_new = z + t * (prox_gf(2.0 * z_half - z) - z_half)
        _check_finite(z_new, "prox_constrained_nonsmooth", m)
        if callback is not None:
            callback(m - 1, z_half, z_new)
        if np.array_equal(z_new, z):
            break
        step = float(np.linalg.norm(z_new - z))
        z = z_new
        if step <= stop.step_tol:
            break
    return (z_half, m) if full_output else z_half


def projected_gradient_prox(x, kappa, grad_g, beta, project_C, *,
                            schedule: FBSchedule | None = None, x_init=None,
                            stop: StopRule = StopRule(), callback=None):
    """prox_{iota_C + kappa g}(x) by projected gradient on 1/2||. - x||^2 + kappa g.

    Slower than :func:`prox_constrained_smooth`; kept as a cross-check.
    """
    if not kappa >= 0:
        raise ValueError("kappa must be >= 0")
    lip = kappa * beta + 1.0
    if schedule is None:
        schedule = FBSchedule(1.0 / lip)
    schedule.check(lip)
    x = _as_iterate(x)
    xn = project_C(x) if x_init is None else _as_iterate(x_init)
    for n in range(1, stop.max_iters + 1):
        gamma, lam = schedule.at(n - 1)
        grad = xn - x if kappa == 0 else kappa * grad_g(xn) + xn - x
        x_new = xn + lam * (project_C(xn - gamma * grad) - xn)
        _check_finite(x_new, "projected_gradient_prox", n)
        step = float(np.linalg.norm(x_new - xn))
        xn = x_new
        if callback is not None:
            callback(n, xn)
        if step <= stop.step_tol:
            break
    return xn
