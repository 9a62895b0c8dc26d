"""Restoration pipeline: configuration, degradation simulation, assembly of
min f(x) + g_theta(x) over x in C, solver dispatch and reporting.

Configuration files are flat ``key = value`` text with ``[section]``
headers; keys combine into dotted names (``solver.kappa``). Unknown keys are
errors. Recognized keys and their defaults are listed in ``DEFAULTS``.
Per-subband potentials use sections ``potential.approx``,
``potential.detail`` (all detail scales) and ``potential.detailJ`` (scale J,
1 = finest), each with ``chi``, ``omega``, ``p``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import io as nio
from .imaging import (
    BlurOp,
    FrameBoxConstraint,
    FrameOp,
    checkerboard,
    degrade,
    opnorm_estimate,
    phantom,
    snr,
)
from .nested import ConstrainedCompositeProblem, OuterConfig, RunReport, solve_dr_outer, solve_fb_outer
from .noise import ExtensionParams, NoiseFamily, NoiseKind, Observation, SmoothDataTerm
from .prox import PotentialArray, parse_exponent

__all__ = [
    "ConfigError",
    "DEFAULTS",
    "RunConfig",
    "RestorationSetup",
    "RestorationResult",
    "load_image",
    "simulate",
    "build_setup",
    "restore",
    "run_solver",
    "trace_rows",
    "normalized_objective",
]

ALGORITHMS = ("dr-outer", "fb-outer")


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "images.truth": "",
    "images.observation": "",
    "blur.q": "5",
    "noise.family": "poisson",
    "noise.alpha": "0.1",
    "frame.kind": "orthonormal",
    "frame.levels": "3",
    "potential.approx.chi": "1",
    "potential.approx.omega": "0.1",
    "potential.approx.p": "2",
    "potential.detail.chi": "1",
    "potential.detail.omega": "0.1",
    "potential.detail.p": "2",
    "extension.theta": "0.1",
    "extension.epsilon_rule": "constant",
    "extension.epsilon": "1e-16",
    "solver.algorithm": "fb-outer",
    "solver.kappa": "60",
    "solver.eta": "1e-4",
    "solver.inner_cap": "1000",
    "solver.outer_cap": "500",
    "solver.outer_eta": "1e-6",
    "solver.gamma_factor": "0.995",
    "solver.tau": "1",
    "solver.lam": "1",
    "opnorm.iters": "1000",
    "seed": "0",
}

_DETAIL_LEVEL = re.compile(r"^potential\.detail(\d+)\.(chi|omega|p)$")


@dataclass(frozen=True)
class SubbandPotential:
    chi: float
    omega: float
    p: float

    def __post_init__(self):
        if self.chi < 0 or self.omega < 0:
            raise ConfigError("potential chi and omega must be >= 0")


@dataclass(frozen=True)
class RunConfig:
    truth: str = ""
    observation: str = ""
    blur_q: int = 5
    family: NoiseKind = NoiseKind.POISSON
    alpha: float = 0.1
    frame_kind: str = "orthonormal"
    levels: int = 3
    approx: SubbandPotential = SubbandPotential(1.0, 0.1, 2.0)
    detail: dict = field(default_factory=dict)  # level -> SubbandPotential
    theta: float = 0.1
    epsilon_rule: str = "constant"
    epsilon: float = 1e-16
    algorithm: str = "fb-outer"
    solver: OuterConfig = OuterConfig()
    opnorm_iters: int = 1000
    seed: int = 0

    @property
    def epsilon_value(self) -> float:
        """constant: epsilon itself; inverse: epsilon / theta."""
        if self.epsilon_rule == "constant":
            return self.epsilon
        return self.epsilon / self.theta

    def detail_potential(self, level: int) -> SubbandPotential:
        return self.detail.get(level, self.detail.get(0, SubbandPotential(1.0, 0.1, 2.0)))

    def with_overrides(self, *, theta=None, algorithm=None, seed=None):
        cfg = self
        if theta is not None:
            if not theta > 0:
                raise ConfigError("theta must be > 0")
            cfg = replace(cfg, theta=float(theta))
        if algorithm is not None:
            if algorithm not in ALGORITHMS:
                raise ConfigError(f"algorithm must be one of {ALGORITHMS}")
            cfg = replace(cfg, algorithm=algorithm)
        if seed is not None:
            cfg = replace(cfg, seed=int(seed))
        return cfg

    @classmethod
    def from_mapping(cls, items: dict, base_dir: Path | None = None) -> "RunConfig":
        unknown = [k for k in items if k not in DEFAULTS and not _DETAIL_LEVEL.match(k)]
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        kv = dict(DEFAULTS)
        kv.update(items)

        def num(key, kind=float):
            try:
                return kind(kv[key])
            except ValueError:
                raise ConfigError(f"{key}: cannot parse {kv[key]!r} as {kind.__name__}") from None

        def potential(prefix):
            try:
                return SubbandPotential(num(prefix + ".chi"), num(prefix + ".omega"),
                                        parse_exponent(kv[prefix + ".p"]))
            except ValueError as e:
                raise ConfigError(f"{prefix}: {e}") from None

        detail = {0: potential("potential.detail")}
        levels = {int(m.group(1)) for k in items if (m := _DETAIL_LEVEL.match(k))}
        for lev in levels:
            for name in ("chi", "omega", "p"):
                kv.setdefault(f"potential.detail{lev}.{name}", kv[f"potential.detail.{name}"])
            detail[lev] = potential(f"potential.detail{lev}")

        def path(key):
            v = kv[key]
            if v and base_dir is not None and not v.startswith("synthetic:") and not Path(v).is_absolute():
                return str(base_dir / v)
            return v

        try:
            family = NoiseKind(kv["noise.family"])
        except ValueError:
            raise ConfigError(f"noise.family must be one of {[k.value for k in NoiseKind]}") from None
        algorithm = kv["solver.algorithm"]
        if algorithm not in ALGORITHMS:
            raise ConfigError(f"solver.algorithm must be one of {ALGORITHMS}")
        frame_kind = kv["frame.kind"]
        if frame_kind not in FrameOp.KINDS:
            raise ConfigError(f"frame.kind must be one of {FrameOp.KINDS}")
        if kv["extension.epsilon_rule"] not in ("constant", "inverse"):
            raise ConfigError("extension.epsilon_rule must be 'constant' or 'inverse'")
        try:
            solver = OuterConfig(
                kappa=num("solver.kappa"), eta=num("solver.eta"),
                inner_cap=num("solver.inner_cap", int), outer_cap=num("solver.outer_cap", int),
                outer_eta=num("solver.outer_eta"), gamma_factor=num("solver.gamma_factor"),
                tau=num("solver.tau"), lam=num("solver.lam"))
        except ValueError as e:
            raise ConfigError(f"solver: {e}") from None
        cfg = cls(
            truth=path("images.truth"), observation=path("images.observation"),
            blur_q=num("blur.q", int), family=family, alpha=num("noise.alpha"),
            frame_kind=frame_kind, levels=num("frame.levels", int),
            approx=potential("potential.approx"), detail=detail,
            theta=num("extension.theta"), epsilon_rule=kv["extension.epsilon_rule"],
            epsilon=num("extension.epsilon"), algorithm=algorithm, solver=solver,
            opnorm_iters=num("opnorm.iters", int), seed=num("seed", int))
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            items = nio.read_keyvalue(path)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except ValueError as e:
            raise ConfigError(f"{path}: {e}") from None
        return cls.from_mapping(items, base_dir=path.parent)

    def validate(self):
        if self.blur_q < 1 or self.blur_q % 2 == 0:
            raise ConfigError("blur.q must be a positive odd integer")
        if not self.alpha > 0:
            raise ConfigError("noise.alpha must be > 0")
        if self.levels < 0:
            raise ConfigError("frame.levels must be >= 0")
        if not self.theta > 0:
            raise ConfigError("extension.theta must be > 0")
        if not self.epsilon > 0:
            raise ConfigError("extension.epsilon must be > 0")
        if self.opnorm_iters < 1:
            raise ConfigError("opnorm.iters must be >= 1")


def load_image(spec: str) -> np.ndarray:
    """A PGM or raw file path, or ``synthetic:<phantom|checkerboard>:<size>``."""
    if spec.startswith("synthetic:"):
        parts = spec.split(":")
        if len(parts) != 3 or parts[1] not in ("phantom", "checkerboard"):
            raise ConfigError(f"bad synthetic image spec {spec!r}")
        try:
            size = int(parts[2])
        except ValueError:
            raise ConfigError(f"bad synthetic image size in {spec!r}") from None
        return phantom(size) if parts[1] == "phantom" else checkerboard(size)
    p = Path(spec)
    if not p.exists():
        raise FileNotFoundError(f"image not found: {spec}")
    return nio.read_raw(p) if p.suffix == ".raw" else nio.read_pgm(p)


def simulate(config: RunConfig) -> tuple[np.ndarray, Observation]:
    if not config.truth:
        raise ConfigError("simulation needs images.truth")
    truth = load_image(config.truth)
    if truth.min() < 0 or truth.max() > 255:
        raise ConfigError("input image must have values in [0, 255]")
    family = NoiseFamily(config.family, config.alpha)
    return truth, degrade(truth, BlurOp(config.blur_q), family, seed=config.seed)


def observation_scale(obs: Observation) -> np.ndarray:
    """Factor that brings z to the intensity scale (1/alpha for Poisson counts)."""
    if obs.family.kind is NoiseKind.POISSON:
        return 1.0 / obs.alpha.reshape(obs.shape)
    return np.ones(obs.shape)


@dataclass
class RestorationSetup:
    config: RunConfig
    observation: Observation
    blur: BlurOp
    frame: FrameOp
    constraint: FrameBoxConstraint
    potential: PotentialArray
    term: SmoothDataTerm
    problem: ConstrainedCompositeProblem

    def initial_point(self) -> np.ndarray:
        z = self.observation.z * observation_scale(self.observation)
        return self.constraint.project(self.frame.analysis(z))

    def image(self, x) -> np.ndarray:
        return np.clip(self.frame.synthesis(x), 0.0, 255.0)


def build_potential(config: RunConfig, frame: FrameOp) -> PotentialArray:
    labels = frame.labels()
    chi = np.empty(labels.size)
    omega = np.empty(labels.size)
    p = np.empty(labels.size)
    for lab in np.unique(labels):
        pot = config.approx if lab == 0 else config.detail_potential(int(lab))
        sel = labels == lab
        chi[sel], omega[sel], p[sel] = pot.chi, pot.omega, pot.p
    return PotentialArray(chi, omega, p)


def build_setup(config: RunConfig, observation: Observation, *, audit=False,
                opnorm: float | None = None) -> RestorationSetup:
    shape = observation.shape
    blur = BlurOp(config.blur_q, shape)
    frame = FrameOp(config.frame_kind, shape, config.levels)
    constraint = FrameBoxConstraint(frame)

    def forward(x):
        return blur.apply(frame.synthesis(x))

    def adjoint(img):
        return frame.analysis(blur.adjoint(img))

    if opnorm is None:
        opnorm = opnorm_estimate(forward, adjoint, frame.K, iters=config.opnorm_iters,
                                 seed=config.seed)
    ext = ExtensionParams.build(observation, config.theta, config.epsilon_value)
    term = SmoothDataTerm(observation, ext, forward, adjoint, opnorm)
    potential = build_potential(config, frame)
    problem = ConstrainedCompositeProblem.from_potential(
        potential, term.value, term.gradient, term.beta_theta, constraint.project, audit=audit)
    return RestorationSetup(config, observation, blur, frame, constraint, potential, term, problem)


def normalized_objective(objective) -> np.ndarray:
    """(F_n - F_last) / (F_0 - F_last): 1 at the start, 0 at the end."""
    f = np.asarray(objective, dtype=float)
    den = f[0] - f[-1]
    if den == 0:
        return np.zeros_like(f)
    return (f - f[-1]) / den


def trace_rows(report: RunReport) -> list[dict]:
    t = report.trace
    norm = normalized_objective(t.objective)
    return [{"outer_iter": i, "wall_seconds": t.wall_seconds[i], "objective": t.objective[i],
             "normalized_objective": norm[i], "inner_iters": t.inner_iters[i],
             "outer_step_norm": t.step_norms[i]} for i in range(len(t))]


@dataclass
class RestorationResult:
    setup: RestorationSetup
    report: RunReport
    image: np.ndarray
    snr_degraded: float | None
    snr_restored: float | None

    def summary(self) -> dict:
        rep = self.report
        out = {
            "algorithm": rep.algorithm,
            "theta": repr(self.setup.config.theta),
            "kappa": repr(self.setup.config.solver.kappa),
            "beta_theta": repr(self.setup.term.beta_theta),
            "outer_iterations": str(len(rep.inner_counts)),
            "inner_iterations_total": str(int(sum(rep.inner_counts))),
            "converged": str(rep.converged).lower(),
            "objective_final": repr(rep.objective_final),
            "wall_seconds": repr(rep.trace.wall_seconds[-1]),
            "gradient_calls_outside_C": str(self.setup.problem.outside_calls),
        }
        if self.snr_restored is not None:
            out["snr_degraded_db"] = repr(float(self.snr_degraded))
            out["snr_restored_db"] = repr(float(self.snr_restored))
        return out


def run_solver(problem: ConstrainedCompositeProblem, solver: OuterConfig, x0,
               algorithm: str = "fb-outer", callback=None) -> RunReport:
    """Dispatch to the nested solver named by ``algorithm``."""
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algorithm!r}")
    solve = solve_dr_outer if algorithm == "dr-outer" else solve_fb_outer
    return solve(problem, solver, x0, callback=callback)


def restore(config: RunConfig, observation: Observation, truth: np.ndarray | None = None,
            *, audit=False, opnorm: float | None = None, callback=None) -> RestorationResult:
    setup = build_setup(config, observation, audit=audit, opnorm=opnorm)
    x0 = setup.initial_point()
    report = run_solver(setup.problem, config.solver, x0, config.algorithm, callback)
    img = setup.image(report.solution)
    s_deg = s_res = None
    if truth is not None:
        s_deg = snr(observation.z * observation_scale(observation), truth)
        s_res = snr(img, truth)
    return RestorationResult(setup, report, img, s_deg, s_res)
