"""Uniform Cartesian grids on a truncated plane and densities living on them.

The domain is the centered square [-L, L]^2 cut into n x n cells of side
h = 2L/n; all integrals are midpoint quadrature, so every cell carries the
weight h^2.  Densities are nonnegative cell fields with a cached quadrature
mass.  The module also provides the one-parameter family of stationary
profiles rho_lam(x) = (M/pi) * lam / (lam + |x|^2)^2, whose slowly decaying
|x|^-4 tails make the truncation explicit: the analytic mass sitting outside
any finite box is reported, never silently folded back in.
"""

from __future__ import annotations

from dataclasses import dataclass
import io

import numpy as np

__all__ = [
    "GridSpec",
    "Density",
    "SteadyStateParams",
    "density_from_values",
    "steady_state",
    "steady_state_value",
    "steady_state_tail",
    "mass",
    "moment",
    "lp_norm",
    "grad_quarter_energy",
    "gradient_field",
    "l1_distance",
    "shift_cells",
    "write_density",
    "read_density",
]

_MASS_CACHE_RTOL = 1e-12


@dataclass(frozen=True)
class GridSpec:
    """n x n cells covering [-half_width, half_width]^2, midpoint quadrature."""

    n: int
    half_width: float

    def __post_init__(self):
        if self.n < 16 or self.n % 2 != 0:
            raise ValueError(f"n must be even and >= 16, got {self.n}")
        if not self.half_width > 0:
            raise ValueError(f"half_width must be positive, got {self.half_width}")

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / self.n

    @property
    def cell_area(self) -> float:
        return self.h * self.h

    def axis(self) -> np.ndarray:
        """Cell-center coordinates along one axis."""
        return (np.arange(self.n) + 0.5) * self.h - self.half_width

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-center coordinates; values[i, j] sits at (x[i], y[j])."""
        ax = self.axis()
        return np.meshgrid(ax, ax, indexing="ij")

    def radius_sq(self) -> np.ndarray:
        ax = self.axis()
        return ax[:, None] ** 2 + ax[None, :] ** 2


@dataclass(frozen=True)
class Density:
    """Nonnegative cell field with its quadrature mass cached."""

    spec: GridSpec
    values: np.ndarray
    mass: float

    def __post_init__(self):
        v = self.values
        if v.shape != (self.spec.n, self.spec.n):
            raise ValueError(f"values shape {v.shape} != grid {self.spec.n}")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("density values must be finite and nonnegative")
        m = self.spec.cell_area * float(v.sum())
        if abs(m - self.mass) > _MASS_CACHE_RTOL * max(abs(m), abs(self.mass), 1e-300):
            raise ValueError(f"cached mass {self.mass} inconsistent with quadrature {m}")


def density_from_values(spec: GridSpec, values: np.ndarray) -> Density:
    values = np.array(values, dtype=np.float64, order="C")
    values.flags.writeable = False
    m = spec.cell_area * float(values.sum())
    return Density(spec=spec, values=values, mass=m)


@dataclass(frozen=True)
class SteadyStateParams:
    """Scale lam (length^2) and total mass of a stationary profile."""

    lam: float
    mass: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if not self.mass > 0:
            raise ValueError(f"mass must be positive, got {self.mass}")


def steady_state_value(p: SteadyStateParams, x, offset=(0.0, 0.0)) -> float:
    """Closed-form stationary profile (M/pi) lam / (lam + |x - offset|^2)^2."""
    dx = float(x[0]) - float(offset[0])
    dy = float(x[1]) - float(offset[1])
    return p.mass * p.lam / np.pi / (p.lam + dx * dx + dy * dy) ** 2


def steady_state(p: SteadyStateParams, offset, spec: GridSpec) -> Density:
    """Sample rho_lam(. - offset) at cell centers.

    The result is *not* renormalized: its quadrature mass falls short of
    p.mass by the tail outside the box, see steady_state_tail.
    """
    ox, oy = float(offset[0]), float(offset[1])
    x, y = spec.meshgrid()
    r2 = (x - ox) ** 2 + (y - oy) ** 2
    a = p.mass * p.lam / np.pi
    return density_from_values(spec, a / (p.lam + r2) ** 2)


def steady_state_tail(p: SteadyStateParams, spec: GridSpec) -> float:
    """Analytic mass of rho_lam outside the disk inscribed in the box.

    Upper bound for the mass missing from the boxed sample (the box contains
    the disk of radius half_width): M * lam / (lam + L^2).
    """
    ll = spec.half_width**2
    return p.mass * p.lam / (p.lam + ll)


def mass(rho: Density) -> float:
    return rho.spec.cell_area * float(rho.values.sum())


def moment(rho: Density, q: float) -> float:
    """Radial moment of order q in [0, 2); order-2 moments diverge for the
    stationary tails, so q >= 2 is rejected."""
    if not 0 <= q < 2:
        raise ValueError(f"moment order must lie in [0, 2), got {q}")
    if q == 0:
        return mass(rho)
    r2 = rho.spec.radius_sq()
    return rho.spec.cell_area * float((r2 ** (q / 2.0) * rho.values).sum())


def lp_norm(rho: Density, p: float) -> float:
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    v = rho.values
    return float((rho.spec.cell_area * (v**p).sum()) ** (1.0 / p))


def gradient_field(values: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Centered differences in the interior, one-sided at the boundary."""
    gx = np.gradient(values, h, axis=0)
    gy = np.gradient(values, h, axis=1)
    return gx, gy


def grad_quarter_energy(rho: Density) -> float:
    """Quadrature of |grad rho^{1/4}|^2, with 0^{1/4} := 0."""
    f = rho.values**0.25
    gx, gy = gradient_field(f, rho.spec.h)
    return rho.spec.cell_area * float((gx * gx + gy * gy).sum())


def l1_distance(rho: Density, sigma: Density) -> float:
    if rho.spec != sigma.spec:
        raise ValueError("densities live on different grids")
    return rho.spec.cell_area * float(np.abs(rho.values - sigma.values).sum())


def shift_cells(rho: Density, di: int, dj: int) -> Density:
    """Whole-cell translation; mass entering from outside the box is zero."""
    v = np.zeros_like(rho.values)
    n = rho.spec.n
    si = slice(max(di, 0), n + min(di, 0))
    ti = slice(max(-di, 0), n + min(-di, 0))
    sj = slice(max(dj, 0), n + min(dj, 0))
    tj = slice(max(-dj, 0), n + min(-dj, 0))
    v[si, sj] = rho.values[ti, tj]
    return density_from_values(rho.spec, v)


def write_density(path_or_file, rho: Density) -> None:
    """Text format: header `nx ny L mass`, then one cell value per line,
    row-major, 17 significant digits."""
    own = isinstance(path_or_file, (str, bytes))
    f = open(path_or_file, "w") if own else path_or_file
    try:
        f.write(
            f"{rho.spec.n} {rho.spec.n} {rho.spec.half_width:.17g} {rho.mass:.17g}\n"
        )
        for v in rho.values.ravel(order="C"):
            f.write(f"{v:.17g}\n")
    finally:
        if own:
            f.close()


def read_density(path_or_file) -> Density:
    own = isinstance(path_or_file, (str, bytes))
    f = open(path_or_file, "r") if own else path_or_file
    try:
        header = f.readline().split()
        if len(header) != 4:
            raise ValueError("grid file header must be `nx ny L mass`")
        nx, ny = int(header[0]), int(header[1])
        if nx != ny:
            raise ValueError(f"grids are square, got {nx} x {ny}")
        half_width, declared_mass = float(header[2]), float(header[3])
        values = np.loadtxt(f, dtype=np.float64, max_rows=nx * ny)
        if values.size != nx * ny:
            raise ValueError(f"expected {nx * ny} cell values, got {values.size}")
        rho = density_from_values(GridSpec(nx, half_width), values.reshape(nx, ny))
        if abs(rho.mass - declared_mass) > 1e-9 * max(abs(declared_mass), 1.0):
            raise ValueError(
                f"declared mass {declared_mass} != quadrature mass {rho.mass}"
            )
        return rho
    finally:
        if own:
            f.close()


def dumps_density(rho: Density) -> str:
    buf = io.StringIO()
    write_density(buf, rho)
    return buf.getvalue()
