"""Scalar energies and entropies of grid densities.

Conventions: E[rho] = int rho log rho (0 log 0 = 0); the interaction
W_eps[rho] = int int rho(x) K_eps(x-y) rho(y) reuses the potential
convolution; the drift-diffusion free energy is F_eps = E - W_eps / 2.
The second Lyapunov functional H_lam measures the fast-diffusion relative
entropy against the stationary profile of the same mass:

    H_lam[u] = int (sqrt(u) - sqrt(rho_lam))^2 / sqrt(rho_lam),

whose finiteness hinges on tail cancellation that a finite box cannot
represent: the reported value is the box integral, and the worst-case
next-octave tail of sqrt(rho_lam) is available separately as an uncertainty
(it is never silently added).  The dissipation functional

    D[rho] = 8 int |grad rho^{1/4}|^2 - int rho^{3/2}

is nonnegative exactly at the critical mass 8 pi, so its evaluation warns
when the mass is off-critical.
"""

from __future__ import annotations

from dataclasses import dataclass
import math
import warnings

import numpy as np

from . import grid, kernels
from .grid import Density

__all__ = [
    "CRITICAL_MASS",
    "FunctionalReport",
    "entropy",
    "interaction",
    "free_energy",
    "h_lambda",
    "h_lambda_delta",
    "h_lambda_tail_bound",
    "dissipation",
    "log_weight_mass",
    "entropy_positive_part",
    "report",
]

CRITICAL_MASS = 8.0 * math.pi

# |mass - 8 pi| / 8 pi above which critical-mass-only statements are gated
CRITICAL_MASS_RTOL = 1e-2


def entropy(rho: Density) -> float:
    v = rho.values
    pos = v > 0
    return rho.spec.cell_area * float((v[pos] * np.log(v[pos])).sum())


def entropy_positive_part(rho: Density) -> float:
    """int rho log_+ rho."""
    v = rho.values
    above = v > 1.0
    return rho.spec.cell_area * float((v[above] * np.log(v[above])).sum())


def interaction(rho: Density, eps: float) -> float:
    c = kernels.potential(rho, eps)
    return rho.spec.cell_area * float((rho.values * c.values).sum())


def free_energy(rho: Density, eps: float) -> float:
    return entropy(rho) - 0.5 * interaction(rho, eps)


def _steady_values(rho: Density, lam: float, mass: float | None) -> np.ndarray:
    a = (grid.mass(rho) if mass is None else mass) * lam / math.pi
    return a / (lam + rho.spec.radius_sq()) ** 2


def h_lambda(rho: Density, lam: float, mass: float | None = None) -> float:
    """Box integral of the relative entropy against the mass-matched
    stationary profile centered at the origin.

    The reference profile carries the density's quadrature mass by default;
    pass the analytic mass explicitly to compare against an un-truncated
    profile (the integrand then vanishes identically on its own samples).
    """
    if not lam > 0:
        raise ValueError(f"lam must be positive, got {lam}")
    sq = np.sqrt(_steady_values(rho, lam, mass))
    diff = np.sqrt(rho.values) - sq
    return rho.spec.cell_area * float((diff * diff / sq).sum())


def h_lambda_delta(
    rho: Density, lam: float, delta: float, mass: float | None = None
) -> float:
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if not lam > 0:
        raise ValueError(f"lam must be positive, got {lam}")
    st = _steady_values(rho, lam, mass)
    diff = np.sqrt(rho.values + delta) - np.sqrt(st + delta)
    return rho.spec.cell_area * float((diff * diff / np.sqrt(st + delta)).sum())


def h_lambda_tail_bound(lam: float, mass: float, spec) -> float:
    """Worst-case H_lam mass in the next octave annulus L <= |x| <= 2L,
    assuming the density vanishes there (integrand = sqrt(rho_lam)).

    Each further octave contributes about pi sqrt(mass lam / pi) log 4, with
    no finite total: this is an uncertainty to report alongside the box
    value, never a correction to add to it.
    """
    ll = spec.half_width**2
    return math.sqrt(mass * lam / math.pi) * math.pi * math.log((lam + 4 * ll) / (lam + ll))


def dissipation(rho: Density) -> float:
    m = grid.mass(rho)
    if abs(m - CRITICAL_MASS) > CRITICAL_MASS_RTOL * CRITICAL_MASS:
        warnings.warn(
            f"dissipation sign guarantee needs mass 8*pi; got {m:.6g}",
            stacklevel=2,
        )
    return 8.0 * grid.grad_quarter_energy(rho) - grid.lp_norm(rho, 1.5) ** 1.5


def log_weight_mass(rho: Density) -> float:
    """int rho log(e + |x|^2) over the box."""
    w = np.log(math.e + rho.spec.radius_sq())
    return rho.spec.cell_area * float((rho.values * w).sum())


@dataclass(frozen=True)
class FunctionalReport:
    """All functionals of one density at one (eps, lam, delta)."""

    mass: float
    eps: float
    lam: float
    delta: float
    entropy: float
    interaction: float
    free_energy: float
    h_lambda: float
    h_lambda_delta: float
    dissipation: float
    grad_quarter: float
    p32: float

    FIELDS = (
        "mass",
        "eps",
        "lam",
        "delta",
        "entropy",
        "interaction",
        "free_energy",
        "h_lambda",
        "h_lambda_delta",
        "dissipation",
        "grad_quarter",
        "p32",
    )

    def as_row(self) -> tuple:
        return tuple(getattr(self, f) for f in self.FIELDS)


def report(rho: Density, eps: float, lam: float, delta: float = 1e-6) -> FunctionalReport:
    e = entropy(rho)
    w = interaction(rho, eps)
    gq = grid.grad_quarter_energy(rho)
    p32 = grid.lp_norm(rho, 1.5) ** 1.5
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        d = dissipation(rho)
    return FunctionalReport(
        mass=grid.mass(rho),
        eps=eps,
        lam=lam,
        delta=delta,
        entropy=e,
        interaction=w,
        free_energy=e - 0.5 * w,
        h_lambda=h_lambda(rho, lam),
        h_lambda_delta=h_lambda_delta(rho, lam, delta),
        dissipation=d,
        grad_quarter=gq,
        p32=p32,
    )
