"""Self-check suite behind ``nestedprox validate``.

Each check returns a short detail string and raises AssertionError on
failure. Everything runs at desk scale (small images, 2-D toy problems).
"""

from __future__ import annotations

import sys
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from .counterexamples import QuadraticFormSpec, example_rotated_box, example_separable_box
from .imaging import (
    SYM6_LOWPASS,
    BlurOp,
    FrameBoxConstraint,
    FrameOp,
    dwt_forward,
    dwt_inverse,
    opnorm_estimate,
    quadrature_mirror,
)
from .nested import ConstrainedCompositeProblem, OuterConfig, solve_dr_outer, solve_fb_outer
from .noise import ExtensionParams, NoiseFamily, Observation, SmoothDataTerm, psi_theta_values, psi_values
from .prox import PotentialArray, ScalarPotential, prox_scalar
from .splitting import ConvergenceBound, FBSchedule, StopRule, prox_constrained_smooth

__all__ = ["CheckResult", "CHECKS", "run_checks", "check_filter_orthonormality"]


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float

    def as_dict(self):
        return {"name": self.name, "ok": self.ok, "detail": self.detail,
                "seconds": round(self.seconds, 4)}


def _expect(cond, msg):
    if not cond:
        raise AssertionError(msg)


def check_filter_orthonormality(lowpass=SYM6_LOWPASS, tol=1e-12):
    """Unit norm, orthogonality to even shifts, and a vanishing high-pass mean."""
    h = np.asarray(lowpass, dtype=float)
    g = quadrature_mirror(h)
    worst = abs(h @ h - 1.0)
    for k in range(2, h.size, 2):
        worst = max(worst, abs(h[:-k] @ h[k:]))
    worst = max(worst, abs(h.sum() - np.sqrt(2.0)), abs(g.sum()))
    _expect(worst <= tol, f"filter orthonormality residual {worst:.2e} > {tol:.0e}")
    return f"max residual {worst:.1e}"


def check_dwt_roundtrip():
    x = np.random.default_rng(1).uniform(0, 255, (32, 32))
    c = dwt_forward(x)
    err = np.abs(dwt_inverse(c) - x).max() / 255
    iso = abs(np.linalg.norm(c) - np.linalg.norm(x)) / np.linalg.norm(x)
    _expect(err <= 1e-10 and iso <= 1e-10, f"roundtrip {err:.1e}, isometry {iso:.1e}")
    return f"roundtrip {err:.1e}"


def check_blur():
    rng = np.random.default_rng(2)
    blur = BlurOp(5)
    x, y = rng.standard_normal((2, 16, 16))
    adj = abs(np.vdot(blur.apply(x), y) - np.vdot(x, blur.adjoint(y)))
    adj /= np.linalg.norm(x) * np.linalg.norm(y)
    box = blur.apply(rng.integers(0, 2, (16, 16)) * 255.0)
    _expect(adj <= 1e-10, f"adjoint mismatch {adj:.1e}")
    _expect(box.min() >= 0 and box.max() <= 255, "blur leaves [0, 255]")
    return f"adjoint {adj:.1e}"


def check_frames():
    rng = np.random.default_rng(3)
    worst = 0.0
    for kind in FrameOp.KINDS:
        F = FrameOp(kind, (16, 16), 2)
        x = rng.standard_normal((16, 16))
        c = rng.standard_normal(F.K)
        worst = max(worst, np.abs(F.synthesis(F.analysis(x)) - F.nu * x).max())
        adj = abs(np.vdot(F.analysis(x), c) - np.vdot(x, F.synthesis(c)))
        worst = max(worst, adj / (np.linalg.norm(x) * np.linalg.norm(c)))
    _expect(worst <= 1e-10, f"frame identity / adjoint residual {worst:.1e}")
    return f"residual {worst:.1e}"


def check_projection():
    rng = np.random.default_rng(4)
    F = FrameOp("two-basis", (16, 16), 2)
    cons = FrameBoxConstraint(F)
    x = rng.normal(0, 400, F.K)
    p = cons.project(x)
    idem = np.linalg.norm(cons.project(p) - p) / np.linalg.norm(p)
    img = F.synthesis(p)
    _expect(idem <= 1e-10, f"projection not idempotent ({idem:.1e})")
    _expect(img.min() >= -1e-9 and img.max() <= 255 + 1e-9, "projected image outside box")
    return f"idempotence {idem:.1e}"


def check_opnorm():
    est = opnorm_estimate(lambda v: 2 * v, lambda v: 2 * v, 10)
    _expect(abs(est - 2) <= 1e-8, f"opnorm of 2 Id estimated as {est}")
    return f"{est:.10f}"


def check_prox_values():
    cases = [(ScalarPotential(1, 0, 2), 3.0, 2.0), (ScalarPotential(0, 0.5, 2), 2.0, 1.0)]
    for phi, t, want in cases:
        got = prox_scalar(phi, 1.0, t)
        _expect(abs(got - want) <= 1e-15, f"prox at {t}: {got} != {want}")
    y = prox_scalar(ScalarPotential(1, 1, 4.0 / 3.0), 1.0, 2.0)
    resid = y - 2 + 1 + (4.0 / 3.0) * y ** (1.0 / 3.0)
    _expect(abs(resid) <= 1e-12, f"optimality residual {resid:.1e} for the 4/3 prox")
    return f"4/3 prox at 2: {y:.6f}"


def check_separable_box_sweep():
    gaps = []
    for l12 in (-3.0, -1.0, -0.1, 0.0, 0.1, 0.5, 1.0, 2.5):
        l22 = max(1.0, l12 * l12 + 1.0)
        r = example_separable_box(QuadraticFormSpec(l12, l22))
        detected = r.gap > 1e-3
        _expect(detected == (l12 != 0), f"Lambda12={l12}: mismatch detection wrong (gap {r.gap:.2e})")
        gaps.append(r.gap)
    return f"gaps {', '.join(f'{g:.2f}' for g in gaps)}"


def check_rotated_box():
    for l12 in (0.1, 0.5, 1.0):
        r = example_rotated_box(l12)
        _expect(r.gap > 1e-3, f"Lambda12={l12}: no mismatch found")
    return "mismatch for 0.1, 0.5, 1"


def check_inner_rate():
    # exact rational iterates: the bound is checked without rounding slack
    L = np.array([[1, 1], [1, 1]], dtype=object)
    x = np.array([Fraction(2), Fraction(4)], dtype=object)
    clip = lambda y: np.clip(y, -1, 1)
    gamma = Fraction(995, 2000)
    sched = FBSchedule(lambda n: gamma, lam=lambda n: 1, gamma_lo=gamma, gamma_hi=gamma, lambda_lo=1)
    rho = 1 - gamma / (1 + gamma)
    _expect(float(rho) == ConvergenceBound.constrained_prox(sched).rho, "rate constant mismatch")
    target = np.array([Fraction(1, 2), Fraction(1)], dtype=object)
    sq = lambda v: sum(d * d for d in v - target)
    iters = []
    prox_constrained_smooth(x, 1, lambda y: L.dot(y), 2, clip, schedule=sched,
                            stop=StopRule(200, 0.0), callback=lambda n, xn: iters.append(xn.copy()))
    e0 = sq(clip(x))
    bad = [n for n, xn in enumerate(iters, 1) if sq(xn) > rho ** (2 * n) * e0]
    _expect(not bad, f"rate bound violated at iterations {bad[:5]}")
    return f"rho {float(rho):.4f}, {len(iters)} exact iterations"


def check_nested_toy():
    f = PotentialArray.l1(np.ones(2))
    p = np.array([2.0, -1.0])
    prob = ConstrainedCompositeProblem.from_potential(
        f, lambda x: 0.5 * float(np.sum((x - p) ** 2)), lambda x: x - p, 1.0,
        lambda x: np.clip(x, 0, 1), audit=True)
    cfg = OuterConfig(kappa=1.0, outer_cap=2000, outer_eta=1e-12)
    a = solve_dr_outer(prob, cfg, np.zeros(2)).solution
    b = solve_fb_outer(prob, cfg, np.zeros(2)).solution
    for s in (a, b):
        _expect(np.abs(s - [1.0, 0.0]).max() <= 1e-6, f"solution {s} != (1, 0)")
    _expect(prob.outside_calls == 0, "gradient evaluated outside C")
    return "both solvers reach (1, 0)"


def _toy_term(kind, theta, rng):
    F = FrameOp("orthonormal", (8, 8), 1)
    blur = BlurOp(3)
    truth = rng.uniform(20, 200, (8, 8))
    u = blur.apply(truth)
    z = rng.poisson(0.5 * u).astype(float) if kind == "poisson" else u + rng.normal(0, 5, u.shape)
    obs = Observation(z, NoiseFamily(kind, 0.5))
    fwd = lambda x: blur.apply(F.synthesis(x))
    adj = lambda im: F.analysis(blur.adjoint(im))
    term = SmoothDataTerm(obs, ExtensionParams.build(obs, theta), fwd, adj, 1.0)
    return term, F, truth


def check_extension():
    rng = np.random.default_rng(5)
    worst = 0.0
    for kind in ("gaussian", "poisson"):
        term, _, _ = _toy_term(kind, 0.05, rng)
        obs = term.observation
        v = rng.uniform(-1e-17, 300, (50, obs.zflat.size))
        e1 = ExtensionParams.build(obs, 0.01)
        e2 = ExtensionParams.build(obs, 0.1)
        for row in v:
            a = psi_theta_values(obs, e1, row)
            b = psi_theta_values(obs, e2, row)
            c = psi_values(obs, row)
            worst = max(worst, np.max(np.where(np.isfinite(b), a - b, 0)),
                        np.max(np.where(np.isfinite(c), b - c, 0)))
    _expect(worst <= 1e-12, f"ordering violated by {worst:.1e}")
    return f"max ordering excess {worst:.1e}"


def check_gradient():
    rng = np.random.default_rng(6)
    worst = 0.0
    for kind in ("gaussian", "poisson"):
        term, F, truth = _toy_term(kind, 0.05, rng)
        x = F.analysis(truth)
        d = rng.standard_normal(x.size)
        h = 1e-3
        fd = (term.value(x + h * d) - term.value(x - h * d)) / (2 * h)
        an = float(term.gradient(x) @ d)
        worst = max(worst, abs(fd - an) / max(abs(an), 1e-12))
    _expect(worst <= 1e-5, f"gradient vs finite differences: {worst:.1e}")
    return f"relative error {worst:.1e}"


CHECKS: list[tuple[str, Callable[[], str]]] = [
    ("filter_orthonormality", check_filter_orthonormality),
    ("dwt_roundtrip", check_dwt_roundtrip),
    ("blur_adjoint_and_box", check_blur),
    ("frame_identity", check_frames),
    ("projection_idempotence", check_projection),
    ("opnorm", check_opnorm),
    ("prox_values", check_prox_values),
    ("separable_box_counterexample", check_separable_box_sweep),
    ("rotated_box_counterexample", check_rotated_box),
    ("inner_linear_rate", check_inner_rate),
    ("nested_toy_problem", check_nested_toy),
    ("extension_ordering", check_extension),
    ("data_term_gradient", check_gradient),
]


def run_checks(checks=None, verbose=False) -> list[CheckResult]:
    results = []
    for name, fn in (checks or CHECKS):
        t0 = time.perf_counter()
        try:
            detail, ok = fn(), True
        except Exception as err:  # a crashing check is a failed check
            detail, ok = f"{type(err).__name__}: {err}", False
        res = CheckResult(name, ok, detail, time.perf_counter() - t0)
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'} {name}: {detail} ({res.seconds:.2f}s)",
                  file=sys.stderr)
        results.append(res)
    return results
