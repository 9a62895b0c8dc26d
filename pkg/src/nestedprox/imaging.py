"""Periodic blur, symlet wavelet frames, the frame-domain box constraint,
degradation simulation and image-quality helpers.

Images are 2-D float arrays (rows, cols). Frame coefficients are flat vectors.
All boundaries are periodic, which keeps adjoints exact and the uniform blur
a map from [0, 255]^N into itself.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from .noise import NoiseFamily, NoiseKind, Observation

__all__ = [
    "SYM6_LOWPASS",
    "BlurOp",
    "FrameOp",
    "FrameBoxConstraint",
    "blur_apply",
    "blur_adjoint",
    "dwt_forward",
    "dwt_inverse",
    "subband_labels",
    "project_constraint",
    "opnorm_estimate",
    "degrade",
    "snr",
    "checkerboard",
    "phantom",
]

# Least-asymmetric Daubechies decomposition low-pass filter with 6 taps
# (3 vanishing moments), normalized to sum sqrt(2). Values from the closed
# form with s = sqrt(10), r = sqrt(5 + 2s):
# (1+s-r, 5+s-3r, 10-2s-2r, 10-2s+2r, 5+s+3r, 1+s+r) / (16 sqrt(2)).
SYM6_LOWPASS = np.array([
    0.03522629188570953,
    -0.08544127388202666,
    -0.13501102001025458,
    0.45987750211849154,
    0.8068915093110925,
    0.33267055295008263,
])


def quadrature_mirror(h):
    """High-pass partner g[k] = (-1)^k h[L-1-k]."""
    h = np.asarray(h, dtype=float)
    signs = np.where(np.arange(h.size) % 2 == 0, 1.0, -1.0)
    return signs * h[::-1]


def _check_image(img, shape=None):
    img = np.asarray(img, dtype=float)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    if shape is not None and img.shape != tuple(shape):
        raise ValueError(f"image shape {img.shape} does not match operator shape {tuple(shape)}")
    return img


@dataclass(frozen=True)
class BlurOp:
    """Uniform q x q moving average with periodic boundary."""

    q: int = 5
    shape: tuple | None = None

    def __post_init__(self):
        if self.q < 1 or self.q % 2 == 0:
            raise ValueError("blur size q must be a positive odd integer")

    def _smooth(self, img):
        h = self.q // 2
        for axis in (0, 1):
            acc = np.zeros_like(img)
            for s in range(-h, h + 1):
                acc += np.roll(img, s, axis=axis)
            img = acc / self.q
        return img

    def apply(self, img):
        return self._smooth(_check_image(img, self.shape))

    # symmetric kernel: correlation equals convolution
    adjoint = apply

    def kernel(self):
        return np.full((self.q, self.q), 1.0 / self.q ** 2)


def blur_apply(op: BlurOp, img):
    return op.apply(img)


def blur_adjoint(op: BlurOp, img):
    return op.adjoint(img)


@functools.lru_cache(maxsize=64)
def _level_matrix(n: int, taps: tuple) -> np.ndarray:
    """One periodic analysis level on length n: rows 0..n/2-1 low-pass,
    rows n/2..n-1 high-pass. Orthogonal, so its transpose is the synthesis."""
    h = np.array(taps)
    g = quadrature_mirror(h)
    m = np.zeros((n, n))
    half = n // 2
    for k in range(half):
        for j in range(h.size):
            col = (2 * k + j) % n
            m[k, col] += h[j]
            m[half + k, col] += g[j]
    m.setflags(write=False)
    return m


def _check_levels(shape, levels):
    if levels < 0:
        raise ValueError("levels must be >= 0")
    for n in shape:
        if n % (2 ** levels):
            raise ValueError(f"image size {shape} is not divisible by 2^{levels}")


def dwt_forward(img, levels=3, lowpass=SYM6_LOWPASS):
    """Periodic separable orthonormal 2-D DWT in Mallat layout (same shape as img).

    Each level maps the current approximation block A to M_r A M_c^T, which
    places LL top-left, column details top-right, row details bottom-left and
    diagonal details bottom-right.
    """
    img = _check_image(img)
    _check_levels(img.shape, levels)
    taps = tuple(float(v) for v in np.asarray(lowpass).ravel())
    out = img.copy()
    r, c = img.shape
    for _ in range(levels):
        out[:r, :c] = _level_matrix(r, taps) @ out[:r, :c] @ _level_matrix(c, taps).T
        r, c = r // 2, c // 2
    return out


def dwt_inverse(coeffs, levels=3, lowpass=SYM6_LOWPASS):
    coeffs = _check_image(coeffs)
    _check_levels(coeffs.shape, levels)
    taps = tuple(float(v) for v in np.asarray(lowpass).ravel())
    out = coeffs.copy()
    R, C = coeffs.shape
    for lev in range(levels - 1, -1, -1):
        r, c = R >> lev, C >> lev
        out[:r, :c] = _level_matrix(r, taps).T @ out[:r, :c] @ _level_matrix(c, taps)
    return out


def subband_labels(shape, levels=3):
    """Integer label per coefficient: 0 for the approximation band, j for
    the details at scale j (1 = finest)."""
    _check_levels(shape, levels)
    lab = np.zeros(shape, dtype=int)
    R, C = shape
    for j in range(1, levels + 1):
        r, c = R >> (j - 1), C >> (j - 1)
        lab[:r, :c] = j
    lab[: R >> levels, : C >> levels] = 0
    return lab


@dataclass(frozen=True)
class FrameOp:
    """Analysis F (image -> coefficients) and synthesis F* with F* F = nu Id.

    ``orthonormal``: a single symlet basis (nu = 1).
    ``two-basis``: the symlet basis stacked with the same basis applied to the
    image cyclically shifted by one pixel in both directions (nu = 2).
    """

    kind: str
    shape: tuple
    levels: int = 3
    lowpass: np.ndarray = field(default_factory=lambda: SYM6_LOWPASS.copy(), repr=False)

    KINDS = ("orthonormal", "two-basis")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"frame kind must be one of {self.KINDS}, got {self.kind!r}")
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        _check_levels(self.shape, self.levels)

    @property
    def nu(self) -> int:
        return 1 if self.kind == "orthonormal" else 2

    @property
    def N(self) -> int:
        return self.shape[0] * self.shape[1]

    @property
    def K(self) -> int:
        return self.nu * self.N

    def analysis(self, img) -> np.ndarray:
        img = _check_image(img, self.shape)
        w = dwt_forward(img, self.levels, self.lowpass).ravel()
        if self.nu == 1:
            return w
        ws = dwt_forward(np.roll(img, (1, 1), axis=(0, 1)), self.levels, self.lowpass).ravel()
        return np.concatenate([w, ws])

    def synthesis(self, coeffs) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (self.K,):
            raise ValueError(f"expected {self.K} coefficients, got shape {coeffs.shape}")
        N = self.N
        img = dwt_inverse(coeffs[:N].reshape(self.shape), self.levels, self.lowpass)
        if self.nu == 2:
            shifted = dwt_inverse(coeffs[N:].reshape(self.shape), self.levels, self.lowpass)
            img = img + np.roll(shifted, (-1, -1), axis=(0, 1))
        return img

    def labels(self) -> np.ndarray:
        lab = subband_labels(self.shape, self.levels).ravel()
        return np.tile(lab, self.nu)


@dataclass(frozen=True)
class FrameBoxConstraint:
    """C = {x : F* x in [lo, hi]^N}, projected via the tight-frame identity."""

    frame: FrameOp
    lo: float = 0.0
    hi: float = 255.0

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("empty image box")

    def project(self, x):
        img = self.frame.synthesis(x)
        return x + self.frame.analysis(np.clip(img, self.lo, self.hi) - img) / self.frame.nu

    __call__ = project

    def contains(self, x, tol=1e-9) -> bool:
        img = self.frame.synthesis(x)
        return bool(np.all(img >= self.lo - tol) and np.all(img <= self.hi + tol))


def project_constraint(cons: FrameBoxConstraint, x):
    return cons.project(x)


def opnorm_estimate(forward, adjoint, dim, iters=100, seed=0) -> float:
    """Operator norm of ``forward`` by power iteration on adjoint(forward(.))."""
    rng = np.random.default_rng(seed)
    shape = (dim,) if np.isscalar(dim) else tuple(dim)
    x = rng.standard_normal(shape)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iters):
        y = adjoint(forward(x))
        lam = float(np.linalg.norm(y))
        if lam == 0.0:
            return 0.0
        x = y / lam
    return float(np.sqrt(lam))


def degrade(img, blur: BlurOp, family: NoiseFamily, seed=0) -> Observation:
    """Blur then add noise: Gaussian with variance u/(2 alpha), or Poisson(alpha u)."""
    img = _check_image(img)
    if np.any(img < 0):
        raise ValueError("input image has negative pixels")
    rng = np.random.default_rng(seed)
    u = blur.apply(img)
    alpha = family.alpha_for(img.shape).reshape(img.shape)
    if family.kind is NoiseKind.GAUSSIAN:
        # blurred values can dip below zero by roundoff only
        u = np.maximum(u, 0.0)
        z = u + rng.standard_normal(img.shape) * np.sqrt(u / (2.0 * alpha))
    else:
        z = rng.poisson(np.maximum(alpha * u, 0.0)).astype(float)
    return Observation(z, family)


def snr(y, yref) -> float:
    """20 log10(||yref|| / ||y - yref||) in dB; +inf when y == yref."""
    y = np.asarray(y, dtype=float)
    yref = np.asarray(yref, dtype=float)
    ref = float(np.linalg.norm(yref))
    if ref == 0:
        raise ValueError("reference image is zero")
    err = float(np.linalg.norm(y - yref))
    if err == 0:
        return float("inf")
    return 20.0 * np.log10(ref / err)


def checkerboard(size=64, square=8, lo=40.0, hi=200.0):
    idx = np.arange(size) // square
    return np.where((idx[:, None] + idx[None, :]) % 2 == 0, hi, lo).astype(float)


def phantom(size=64):
    """Piecewise-smooth test image with values in about [30, 220]."""
    t = (np.arange(size) + 0.5) / size
    Y, X = np.meshgrid(t, t, indexing="ij")
    img = 30.0 + 40.0 * X
    img = np.where((X - 0.5) ** 2 / 0.16 + (Y - 0.5) ** 2 / 0.1 <= 1.0, 150.0, img)
    img = np.where((X - 0.38) ** 2 + (Y - 0.45) ** 2 <= 0.012, 220.0, img)
    img = np.where((X - 0.62) ** 2 + (Y - 0.55) ** 2 <= 0.02, 80.0, img)
    img = np.where((np.abs(X - 0.5) < 0.06) & (np.abs(Y - 0.78) < 0.1), 200.0, img)
    return img
