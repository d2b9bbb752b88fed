"""Free-space log kernel, Gaussian mollifiers, and the smoothed kernel family.

The attractant potential solves -Delta c = rho on the whole plane, so
c = G * rho with G(x) = -(1/2 pi) log|x|.  Mollifying both sides of the
interaction with a Gaussian gamma_eps gives the smoothed kernel

    G_eps = gamma_eps * G * gamma_eps = G * gamma_{sqrt(2) eps},

which by the heat semigroup has the radial closed form

    G_eps(x) = -(1/2 pi) log|x| - (1/4 pi) E1(|x|^2 / (4 eps^2)),

finite at the origin with value (euler_gamma - 2 log(2 eps)) / (4 pi), and

    grad G_eps(x) = -x / (2 pi |x|^2) * (1 - exp(-|x|^2 / (4 eps^2))).

Potentials are evaluated as discrete convolutions via FFT with full
zero-padding (size 2n), so the linear convolution over the box is exact and
the long-range kernel never wraps around.  At eps = 0 the kernel's singular
on-diagonal sample is replaced by the exact cell average of G over one
square cell.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
from scipy.special import exp1

from .grid import Density, GridSpec

__all__ = [
    "Mollifier",
    "RegularizedKernel",
    "PotentialField",
    "green",
    "green_r",
    "green_reg",
    "green_reg_r",
    "green_reg_grad_factor",
    "potential",
    "clear_kernel_cache",
]

TWO_PI = 2.0 * math.pi

# mean of log|x| over the unit square [-1/2, 1/2]^2
LOG_CELL_MEAN = math.pi / 4.0 - 1.5 - 0.5 * math.log(2.0)


@dataclass(frozen=True)
class Mollifier:
    """Gaussian gamma_eps(x) = eps^-2 (2 pi)^-1 exp(-|x|^2 / 2 eps^2)."""

    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        r2 = np.sum(x * x, axis=-1)
        e2 = self.eps * self.eps
        return np.exp(-r2 / (2.0 * e2)) / (TWO_PI * e2)


def green(x) -> float:
    """G(x) = -(1/2 pi) log|x|; rejects x = 0."""
    r = math.hypot(float(x[0]), float(x[1]))
    if r == 0.0:
        raise ValueError("free-space log kernel is singular at x = 0")
    return -math.log(r) / TWO_PI


def green_r(r: np.ndarray) -> np.ndarray:
    return -np.log(r) / TWO_PI


def green_reg_r(eps: float, r) -> np.ndarray:
    """Smoothed kernel as a function of radius, finite at r = 0."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    r = np.asarray(r, dtype=np.float64)
    out = np.empty_like(r)
    origin = r == 0.0
    out[origin] = (np.euler_gamma - 2.0 * math.log(2.0 * eps)) / (2.0 * TWO_PI)
    rp = r[~origin]
    z = rp * rp / (4.0 * eps * eps)
    out[~origin] = -np.log(rp) / TWO_PI - exp1(z) / (2.0 * TWO_PI)
    return out


def green_reg(eps: float, x) -> float:
    r = math.hypot(float(x[0]), float(x[1]))
    return float(green_reg_r(eps, np.asarray([r])))


def green_reg_grad_factor(eps: float, r2: np.ndarray) -> np.ndarray:
    """Scalar factor phi(r) with grad G_eps(x) = phi(|x|^2) * x."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    r2 = np.asarray(r2, dtype=np.float64)
    z = r2 / (4.0 * eps * eps)
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = -np.where(z > 1e-8, -np.expm1(-z) / r2, (1.0 - z / 2.0) / (4.0 * eps * eps))
    return fac / TWO_PI


@dataclass(frozen=True)
class RegularizedKernel:
    """Radial evaluation rule for the smoothed kernel at a fixed eps."""

    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")

    def __call__(self, r) -> np.ndarray:
        return green_reg_r(self.eps, r)

    @property
    def sup_value(self) -> float:
        """Max of G_eps, attained at the origin."""
        return (np.euler_gamma - 2.0 * math.log(2.0 * self.eps)) / (2.0 * TWO_PI)

    @property
    def sup_bound_constant(self) -> float:
        """Measured C with G_eps <= C / eps^2 (C depends on eps through the
        log; recorded, not asserted against any fixed value)."""
        return max(self.sup_value, 0.0) * self.eps * self.eps


@dataclass(frozen=True)
class PotentialField:
    """Attractant potential and its gradient on the grid."""

    spec: GridSpec
    eps: float
    values: np.ndarray
    grad_x: np.ndarray
    grad_y: np.ndarray


# FFT kernel tables keyed by (n, half_width, eps); small LRU.
_KERNEL_CACHE: dict = {}
_KERNEL_CACHE_MAX = 8


def clear_kernel_cache() -> None:
    _KERNEL_CACHE.clear()


def _offset_axis(n: int, h: float) -> np.ndarray:
    # wrap layout for a size-2n circular convolution: index m encodes the
    # offset m for m < n and m - 2n for m >= n
    m = np.arange(2 * n)
    return np.where(m < n, m, m - 2 * n) * h


def _kernel_tables(spec: GridSpec, eps: float):
    key = (spec.n, spec.half_width, float(eps))
    hit = _KERNEL_CACHE.get(key)
    if hit is not None:
        return hit
    n, h = spec.n, spec.h
    d = _offset_axis(n, h)
    dx = d[:, None]
    dy = d[None, :]
    r2 = dx * dx + dy * dy
    if eps > 0:
        kval = green_reg_r(eps, np.sqrt(r2))
        fac = green_reg_grad_factor(eps, r2)
        kgx = fac * dx
        kgy = fac * dy
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            kval = -0.5 * np.log(r2) / TWO_PI
            fac = -1.0 / (TWO_PI * r2)
            kgx = fac * dx
            kgy = fac * dy
        kval[0, 0] = -(math.log(h) + LOG_CELL_MEAN) / TWO_PI
        kgx[0, 0] = 0.0
        kgy[0, 0] = 0.0
    tables = tuple(np.fft.rfft2(k) for k in (kval, kgx, kgy))
    if len(_KERNEL_CACHE) >= _KERNEL_CACHE_MAX:
        _KERNEL_CACHE.pop(next(iter(_KERNEL_CACHE)))
    _KERNEL_CACHE[key] = tables
    return tables


def _convolve(spec: GridSpec, table: np.ndarray, cell_masses: np.ndarray) -> np.ndarray:
    n = spec.n
    padded = np.zeros((2 * n, 2 * n))
    padded[:n, :n] = cell_masses
    out = np.fft.irfft2(np.fft.rfft2(padded) * table, s=(2 * n, 2 * n))
    return np.ascontiguousarray(out[:n, :n])


def potential(rho: Density, eps: float) -> PotentialField:
    """c = K * rho with K = G (eps = 0) or the smoothed kernel (eps > 0),
    plus its gradient from the analytically differentiated kernel."""
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    tab_v, tab_gx, tab_gy = _kernel_tables(rho.spec, eps)
    a = rho.values * rho.spec.cell_area
    return PotentialField(
        spec=rho.spec,
        eps=eps,
        values=_convolve(rho.spec, tab_v, a),
        grad_x=_convolve(rho.spec, tab_gx, a),
        grad_y=_convolve(rho.spec, tab_gy, a),
    )
