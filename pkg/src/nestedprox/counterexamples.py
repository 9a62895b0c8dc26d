"""Two small instances where projecting the prox onto C is not the prox of f + iota_C.

1. f(y) = y^T L y / 2 with L = [[1, l12], [l12, l22]] and the box C = [-1, 1]^2,
   evaluated at x = 2 (l12, 1 + l22). Here prox_f x = (0, 2), so P_C prox_f x = (0, 1),
   while the constrained prox is (pi, 1) with pi = clip(l12 / 2, -1, 1).
   The two agree only when f is separable (l12 = 0).
2. The same quadratic with l22 = 1 composed with the rotation
   R = [[1, -1], [1, 1]] / sqrt(2), and the rotated box C = R^T [-1, 1]^2.
   Both maps transport through R, so the mismatch carries over even though f
   is separable in the original coordinates.

Every constrained prox is computed three ways: closed form, the two
iterative inner solvers, and a grid-search oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .prox import brute_force_prox
from .splitting import StopRule, prox_constrained_nonsmooth, prox_constrained_smooth

__all__ = [
    "QuadraticFormSpec",
    "CounterexampleResult",
    "analytic_pi",
    "example_separable_box",
    "example_rotated_box",
    "ROTATION",
]

ROTATION = np.array([[1.0, -1.0], [1.0, 1.0]]) / math.sqrt(2.0)
AGREEMENT_TOL = 1e-6
_STOP = StopRule(max_iters=20000, step_tol=1e-13)


@dataclass(frozen=True)
class QuadraticFormSpec:
    Lambda12: float
    Lambda22: float = 1.0

    def __post_init__(self):
        if self.Lambda22 < 0:
            raise ValueError("Lambda22 must be >= 0")
        if self.Lambda12 ** 2 > self.Lambda22 * (1 + 1e-12):
            raise ValueError("need |Lambda12| <= sqrt(Lambda22) for a convex quadratic")

    @property
    def matrix(self):
        return np.array([[1.0, self.Lambda12], [self.Lambda12, self.Lambda22]])


@dataclass(frozen=True)
class CounterexampleResult:
    x: np.ndarray
    pc_prox: np.ndarray
    true_prox: np.ndarray
    fb_prox: np.ndarray
    dr_prox: np.ndarray
    oracle_prox: np.ndarray
    pi: float
    mismatch: bool

    @property
    def gap(self) -> float:
        return float(np.linalg.norm(self.pc_prox - self.true_prox))

    @property
    def max_disagreement(self) -> float:
        return max(float(np.linalg.norm(v - self.true_prox))
                   for v in (self.fb_prox, self.dr_prox, self.oracle_prox))


def analytic_pi(l12: float) -> float:
    return float(min(1.0, max(-1.0, l12 / 2.0)))


def _box_clip(y):
    return np.clip(y, -1.0, 1.0)


def _constrained_prox_three_ways(L, x, project, box_bounds, inside):
    """FB inner solver, DR inner solver and grid oracle for prox of y^T L y/2 + iota_C at x."""
    beta = float(np.linalg.eigvalsh(L).max())
    fb = prox_constrained_smooth(x, 1.0, lambda y: L @ y, max(beta, 1e-12), project, stop=_STOP)
    resolvent = np.linalg.inv(np.eye(2) + L)
    dr = prox_constrained_nonsmooth(x, 1.0, lambda y: resolvent @ y, project, stop=_STOP)

    def objective(Y):
        vals = 0.5 * np.einsum("ij,jk,ik->i", Y, L, Y)
        return np.where(inside(Y), vals, np.inf)

    oracle = brute_force_prox(objective, x, box_bounds)
    return fb, dr, oracle


def _check(result: CounterexampleResult):
    if not result.max_disagreement <= AGREEMENT_TOL:
        raise AssertionError(
            f"constrained prox disagreement {result.max_disagreement:.3e} exceeds {AGREEMENT_TOL}")
    return result


def example_separable_box(spec: QuadraticFormSpec) -> CounterexampleResult:
    L = spec.matrix
    x = 2.0 * np.array([spec.Lambda12, 1.0 + spec.Lambda22])
    prox_f = np.linalg.solve(np.eye(2) + L, x)
    pc = _box_clip(prox_f)
    pi = analytic_pi(spec.Lambda12)
    true = np.array([pi, 1.0])
    fb, dr, oracle = _constrained_prox_three_ways(
        L, x, _box_clip, [(-1.0, 1.0), (-1.0, 1.0)],
        lambda Y: np.all(np.abs(Y) <= 1.0, axis=1))
    return _check(CounterexampleResult(x, pc, true, fb, dr, oracle, pi,
                                       bool(spec.Lambda12 != 0)))


def _rotated_clip(y):
    return ROTATION.T @ _box_clip(ROTATION @ y)


def example_rotated_box(Lambda12: float) -> CounterexampleResult:
    if not 0 < abs(Lambda12) <= 1:
        raise ValueError("need 0 < |Lambda12| <= 1")
    R = ROTATION
    spec = QuadraticFormSpec(Lambda12, 1.0)
    Lt = spec.matrix
    L = R.T @ Lt @ R  # f = f~ o R
    x = math.sqrt(2.0) * np.array([2.0 + Lambda12, 2.0 - Lambda12])
    prox_ft = np.linalg.solve(np.eye(2) + Lt, R @ x)
    pc = R.T @ _box_clip(prox_ft)
    pi = analytic_pi(Lambda12)
    true = R.T @ np.array([pi, 1.0])
    s2 = math.sqrt(2.0)
    fb, dr, oracle = _constrained_prox_three_ways(
        L, x, _rotated_clip, [(-s2, s2), (-s2, s2)],
        lambda Y: np.all(np.abs(Y @ R.T) <= 1.0, axis=1))
    return _check(CounterexampleResult(x, pc, true, fb, dr, oracle, pi, True))
