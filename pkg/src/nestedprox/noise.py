"""Data-fidelity terms for signal-dependent Gaussian and Poisson noise.

Each pixel carries a convex anti-log-likelihood psi_i. Near zero psi_i has
unbounded curvature, so it is replaced below a junction point upsilon_i(theta)
by a quadratic with curvature theta, giving psi_{theta,i} with a
theta-Lipschitz derivative. The data term on frame coefficients is
g_theta(x) = sum_i psi_{theta,i}((T F* x)_i).

Every evaluator here works on flat pixel arrays; the scalar helpers that take
a pixel index wrap the vectorized ones.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "NoiseKind",
    "NoiseFamily",
    "Observation",
    "ExtensionParams",
    "SmoothDataTerm",
    "DomainError",
    "psi_values",
    "psi_derivative",
    "psi_second_derivative",
    "psi_eval",
    "upsilon_threshold",
    "zeta_coeffs",
    "psi_theta_values",
    "psi_theta_derivative",
    "psi_theta_eval",
    "psi_theta_grad",
    "g_theta_eval",
    "grad_g_theta",
    "lipschitz_beta_theta",
    "anscombe_eval",
]


class NoiseKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    POISSON = "poisson"


class DomainError(ValueError):
    """A pixel value fell outside the domain of the extended data term."""

    def __init__(self, pixel: int, value: float, bound: float):
        super().__init__(f"pixel {pixel} has value {value!r} <= domain bound {bound!r}")
        self.pixel = pixel
        self.value = value


@dataclass(frozen=True)
class NoiseFamily:
    kind: NoiseKind
    alpha: float | np.ndarray = 1.0
    delta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        a = np.asarray(self.alpha, dtype=float)
        if not np.all(np.isfinite(a)) or np.any(a <= 0):
            raise ValueError("alpha must be positive and finite")
        if self.delta != 0.0:
            raise ValueError("both noise families have delta = 0")

    def alpha_for(self, shape) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.alpha, dtype=float), shape).ravel().copy()


@dataclass(frozen=True, eq=False)
class Observation:
    """Degraded image z together with the index set of informative pixels."""

    z: np.ndarray
    family: NoiseFamily
    alpha: np.ndarray = field(init=False, repr=False)
    index_set: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        z = np.array(self.z, dtype=float)
        if not np.all(np.isfinite(z)):
            raise ValueError("observation contains non-finite values")
        if self.family.kind is NoiseKind.POISSON:
            if np.any(z < 0) or np.any(z != np.round(z)):
                raise ValueError("Poisson counts must be non-negative integers")
            mask = z > 0
        else:
            mask = z != 0
        if not mask.any():
            raise ValueError("observation is identically zero")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "alpha", self.family.alpha_for(z.shape))
        object.__setattr__(self, "index_set", mask.ravel())

    @property
    def shape(self):
        return self.z.shape

    @property
    def zflat(self):
        return self.z.ravel()


# -- exact anti-log-likelihoods ------------------------------------------------

def _split(obs: Observation):
    return obs.family.kind, obs.alpha, obs.zflat, obs.index_set


def psi_values(obs: Observation, v) -> np.ndarray:
    """psi_i(v_i) for every pixel; +inf outside the domain."""
    kind, a, z, inset = _split(obs)
    v = np.asarray(v, dtype=float).ravel()
    out = np.full(v.shape, np.inf)
    lin = ~inset & (v >= 0)
    out[lin] = a[lin] * v[lin]
    pos = inset & (v > 0)
    vp, zp, ap = v[pos], z[pos], a[pos]
    if kind is NoiseKind.GAUSSIAN:
        out[pos] = ap * (vp - zp) ** 2 / vp
    else:
        out[pos] = ap * vp - zp + zp * np.log(zp / (ap * vp))
    return out


def psi_derivative(obs: Observation, v) -> np.ndarray:
    """psi_i'(v_i) on the open domain (nan elsewhere)."""
    kind, a, z, inset = _split(obs)
    v = np.asarray(v, dtype=float).ravel()
    out = np.where(inset, np.nan, a)
    pos = inset & (v > 0)
    if kind is NoiseKind.GAUSSIAN:
        out[pos] = a[pos] * (1.0 - (z[pos] / v[pos]) ** 2)
    else:
        out[pos] = a[pos] - z[pos] / v[pos]
    return out


def psi_second_derivative(obs: Observation, v) -> np.ndarray:
    kind, a, z, inset = _split(obs)
    v = np.asarray(v, dtype=float).ravel()
    out = np.where(inset, np.nan, 0.0)
    pos = inset & (v > 0)
    if kind is NoiseKind.GAUSSIAN:
        out[pos] = 2.0 * a[pos] * z[pos] ** 2 / v[pos] ** 3
    else:
        out[pos] = z[pos] / v[pos] ** 2
    return out


def _pixel(obs, i):
    i = int(i)
    if not 0 <= i < obs.zflat.size:
        raise IndexError(f"pixel index {i} out of range")
    return i


def _at_pixel(fn, obs, i, v):
    i = _pixel(obs, i)
    vec = np.zeros(obs.zflat.size)
    vec[i] = v
    return float(fn(obs, vec)[i])


def psi_eval(obs: Observation, i: int, v: float) -> float:
    return _at_pixel(psi_values, obs, i, v)


# -- quadratic extension -------------------------------------------------------

def _upsilon(kind, a, z, theta):
    if kind is NoiseKind.GAUSSIAN:
        return np.cbrt(2.0 * a * z * z / theta)
    return np.sqrt(z / theta)


def upsilon_threshold(obs: Observation, i: int, theta: float) -> float:
    """Junction point: psi_i'' <= theta exactly on [upsilon, inf)."""
    i = _pixel(obs, i)
    if not theta > 0:
        raise ValueError("theta must be > 0")
    if not obs.index_set[i]:
        raise ValueError(f"pixel {i} has a zero observation; no junction point")
    kind, a, z, _ = _split(obs)
    return float(_upsilon(kind, a[i], z[i], theta))


def _zeta(obs, ups, theta):
    """(zeta0, zeta1) so that the quadratic branch matches psi to first order at ups."""
    d1 = psi_derivative(obs, ups)
    val = psi_values(obs, ups)
    zeta1 = d1 - theta * ups
    zeta0 = val - ups * d1 + 0.5 * theta * ups * ups
    return zeta0, zeta1


def zeta_coeffs(obs: Observation, i: int, theta: float):
    ups = upsilon_threshold(obs, i, theta)
    vec = np.ones(obs.zflat.size)
    vec[i] = ups
    z0, z1 = _zeta(obs, vec, theta)
    return float(z0[i]), float(z1[i])


@dataclass(frozen=True, eq=False)
class ExtensionParams:
    """theta, epsilon and per-pixel junction data; nan where the pixel is not in the index set."""

    theta: float
    epsilon: float
    upsilon: np.ndarray
    zeta0: np.ndarray
    zeta1: np.ndarray

    @classmethod
    def build(cls, obs: Observation, theta: float, epsilon: float = 1e-16):
        if not theta > 0:
            raise ValueError("theta must be > 0")
        if not epsilon > 0:
            raise ValueError("epsilon must be > 0")
        kind, a, z, inset = _split(obs)
        ups = np.full(z.shape, np.nan)
        ups[inset] = _upsilon(kind, a[inset], z[inset], theta)
        z0 = np.full(z.shape, np.nan)
        z1 = np.full(z.shape, np.nan)
        safe = np.where(inset, ups, 1.0)
        zz0, zz1 = _zeta(obs, safe, theta)
        z0[inset] = zz0[inset]
        z1[inset] = zz1[inset]
        return cls(float(theta), float(epsilon), ups, z0, z1)

    @property
    def lower(self) -> float:
        """delta - epsilon: left end of the extended domain."""
        return -self.epsilon


def psi_theta_values(obs: Observation, ext: ExtensionParams, v) -> np.ndarray:
    """psi_{theta,i}(v_i) for every pixel; +inf below delta - epsilon."""
    _, a, _, inset = _split(obs)
    v = np.asarray(v, dtype=float).ravel()
    out = np.full(v.shape, np.inf)
    lo = ext.lower
    lin = ~inset & (v >= lo)
    out[lin] = a[lin] * v[lin]
    quad = inset & (v >= lo) & (v < np.where(inset, ext.upsilon, 0.0))
    vq = v[quad]
    out[quad] = 0.5 * ext.theta * vq * vq + ext.zeta1[quad] * vq + ext.zeta0[quad]
    exact = inset & ~quad & (v >= lo)
    out[exact] = psi_values(obs, np.where(exact, v, 1.0))[exact]
    return out


def psi_theta_derivative(obs: Observation, ext: ExtensionParams, v) -> np.ndarray:
    """Derivative of the active branch. Raises DomainError below delta - epsilon."""
    _, a, _, inset = _split(obs)
    v = np.asarray(v, dtype=float).ravel()
    bad = ~(v >= ext.lower)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DomainError(i, float(v[i]), ext.lower)
    out = a.copy()
    quad = inset & (v < np.where(inset, ext.upsilon, 0.0))
    out[quad] = ext.theta * v[quad] + ext.zeta1[quad]
    exact = inset & ~quad
    out[exact] = psi_derivative(obs, np.where(exact, v, 1.0))[exact]
    return out


def psi_theta_eval(obs, ext, i, v) -> float:
    i = _pixel(obs, i)
    vec = np.ones(obs.zflat.size)
    vec[i] = v
    return float(psi_theta_values(obs, ext, vec)[i])


def psi_theta_grad(obs, ext, i, v) -> float:
    i = _pixel(obs, i)
    vec = np.ones(obs.zflat.size)
    vec[i] = v
    try:
        return float(psi_theta_derivative(obs, ext, vec)[i])
    except DomainError as err:
        raise DomainError(i, float(v), ext.lower) from err


def psi_theta_minima(obs: Observation, ext: ExtensionParams) -> np.ndarray:
    """Per-pixel minimum of psi_{theta,i} over its domain (closed form)."""
    kind, a, z, inset = _split(obs)
    out = -a * ext.epsilon
    ups = ext.upsilon[inset]
    slope = psi_derivative(obs, np.where(inset, ext.upsilon, 1.0))[inset]
    ai, zi = a[inset], z[inset]
    if kind is NoiseKind.GAUSSIAN:
        exact_min = 4.0 * ai * np.maximum(-zi, 0.0)
    else:
        exact_min = np.zeros_like(zi)
    vstar = np.clip(-ext.zeta1[inset] / ext.theta, ext.lower, ups)
    quad_min = 0.5 * ext.theta * vstar ** 2 + ext.zeta1[inset] * vstar + ext.zeta0[inset]
    out[inset] = np.where(slope <= 0, exact_min, quad_min)
    return out


def anscombe_eval(alpha, z, v) -> float:
    """1/2 (2 sqrt(alpha v + 3/8) - z)^2 on v >= 0, +inf below."""
    if v < 0:
        return math.inf
    return 0.5 * (2.0 * math.sqrt(alpha * v + 0.375) - z) ** 2


def lipschitz_beta_theta(theta: float, opnorm: float) -> float:
    return float(theta) * float(opnorm) ** 2


@dataclass(eq=False)
class SmoothDataTerm:
    """g_theta(x) = sum_i psi_{theta,i}((T F* x)_i) with its gradient F T* psi_theta'.

    ``forward`` maps coefficients to blurred images, ``adjoint`` maps images
    back to coefficients. Pixel values in [lower - slack, lower) are lifted to
    the domain edge before evaluation: for x in C the blurred synthesis is
    non-negative up to float roundoff, which can exceed epsilon.
    """

    observation: Observation
    extension: ExtensionParams
    forward: Callable
    adjoint: Callable
    opnorm: float
    domain_slack: float = 1e-9

    @property
    def family(self):
        return self.observation.family

    @property
    def theta(self):
        return self.extension.theta

    @property
    def beta_theta(self) -> float:
        return lipschitz_beta_theta(self.theta, self.opnorm)

    def pixels(self, x) -> np.ndarray:
        v = np.asarray(self.forward(x), dtype=float).ravel()
        lo = self.extension.lower
        near = (v < lo) & (v >= lo - self.domain_slack)
        if near.any():
            v = v.copy()
            v[near] = lo
        return v

    def value(self, x) -> float:
        return float(np.sum(psi_theta_values(self.observation, self.extension, self.pixels(x))))

    def exact_value(self, x) -> float:
        """The unextended data term sum_i psi_i((T F* x)_i)."""
        v = np.asarray(self.forward(x), dtype=float).ravel()
        return float(np.sum(psi_values(self.observation, v)))

    def gradient(self, x) -> np.ndarray:
        d = psi_theta_derivative(self.observation, self.extension, self.pixels(x))
        return self.adjoint(d.reshape(self.observation.shape))

    def lower_bound(self) -> float:
        """Closed-form lower bound on inf g_theta."""
        return float(np.sum(psi_theta_minima(self.observation, self.extension)))

    __call__ = value


def g_theta_eval(x, term: SmoothDataTerm) -> float:
    return term.value(x)


def grad_g_theta(x, term: SmoothDataTerm) -> np.ndarray:
    return term.gradient(x)
