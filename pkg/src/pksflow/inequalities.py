"""Validators for the functional inequalities governing the critical-mass flow.

Every check evaluates both sides of one inequality on a grid density and
returns an InequalityReport whose slack is signed so that `pass` uniformly
means slack >= -tol.  Constants that the underlying theorems promise to be
computable are assembled literally from their constructive recipes, however
conservative; reports distinguish "inequality holds" from "bound is tight".
Several of those recipes produce constants whose floating-point value
overflows (they contain exp(1/alpha) factors with alpha ~ 1e-7); such
constants are carried in log form alongside a saturated float.

The checks:

* log-HLS:        E[rho] + (2/M) II rho log|x-y| rho >= -M(1 + log pi - log M)
* sharp GNS:      pi int f^6 <= int |grad f|^2 int f^4  (f = rho^{1/4})
* Talagrand:      W_2(rho, rho_lam) <= sqrt(2 H_lam[rho] / kappa),
                  kappa = 2 sqrt(pi / (M lam))
* thick tails:    mass beyond radius sqrt(lam) s is at least
                  eta* exp(-4 H_lam / sqrt(pi M lam)) M/(1+s^2), eta* = e^{-1/5}/5
* localization:   int |x|^q rho <= C(q, lam, M) (1 + H_lam)^{q/2}
* negative entropy: int rho log_- rho <= int m rho + (1/e) int e^{-m}
* concentration control (free energy): gamma1 int rho log_+ rho <= F + C_CCF
* concentration control (dissipation): gamma2 int |grad rho^{1/4}|^2
                                         <= pi D + C_CCD
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from . import functionals, grid, transport
from .grid import Density

__all__ = [
    "InequalityReport",
    "ETA_STAR",
    "check_log_hls",
    "check_gns",
    "check_talagrand",
    "check_thick_tails",
    "localization_bound",
    "neg_entropy_bound",
    "ccf_constants",
    "ccd_constants",
    "check_ccf",
    "check_ccd",
]

ETA_STAR = 0.2 * math.exp(-0.2)

_EXP_SAT = 700.0  # exp beyond this saturates to the float cap below
_FLOAT_CAP = 1e300


@dataclass(frozen=True)
class InequalityReport:
    name: str
    anchor: str  # short stable id of the estimate, quoted in CLI output
    lhs: float
    rhs: float
    slack: float
    tol: float
    passed: bool
    constants: dict = field(default_factory=dict)

    FIELDS = ("name", "anchor", "lhs", "rhs", "slack", "tol", "passed")

    def as_row(self) -> tuple:
        return tuple(getattr(self, f) for f in self.FIELDS)


def _default_tol(lhs: float, rhs: float) -> float:
    return 1e-3 * max(abs(lhs), abs(rhs), 1.0)


def _report(name, anchor, lhs, rhs, slack, constants=None, tol=None) -> InequalityReport:
    tol = _default_tol(lhs, rhs) if tol is None else tol
    return InequalityReport(
        name=name,
        anchor=anchor,
        lhs=lhs,
        rhs=rhs,
        slack=slack,
        tol=tol,
        passed=bool(slack >= -tol),
        constants=constants or {},
    )


def log_hls_constant(mass: float) -> float:
    """-inf bound constant M (1 + log pi - log M) of the log-HLS inequality."""
    return mass * (1.0 + math.log(math.pi) - math.log(mass))


def check_log_hls(rho: Density) -> InequalityReport:
    m = rho.mass
    e = functionals.entropy(rho)
    # II rho log|x-y| rho = -2 pi * II rho G rho
    log_pair = -2.0 * math.pi * functionals.interaction(rho, 0.0)
    c_m = log_hls_constant(m)
    lhs = e + (2.0 / m) * log_pair
    rhs = -c_m
    return _report(
        "log_hls",
        "loghls",
        lhs,
        rhs,
        lhs - rhs,
        {"C(M)": c_m, "entropy": e, "log_pair": log_pair},
    )


def check_gns(rho: Density) -> InequalityReport:
    grad_sq = grid.grad_quarter_energy(rho)  # int |grad f|^2, f = rho^{1/4}
    f4 = rho.mass  # int f^4 = mass
    f6 = grid.lp_norm(rho, 1.5) ** 1.5  # int f^6 = int rho^{3/2}
    lhs = grad_sq * f4
    rhs = math.pi * f6
    return _report(
        "gns",
        "gns",
        lhs,
        rhs,
        lhs - rhs,
        {"grad_sq": grad_sq, "f4": f4, "f6": f6},
    )


def kappa(mass: float, lam: float) -> float:
    """Displacement-convexity modulus 2 sqrt(pi / (M lam))."""
    return 2.0 * math.sqrt(math.pi / (mass * lam))


def check_talagrand(
    rho: Density,
    lam: float,
    cfg: transport.OTSolverConfig | None = None,
    w2: float | None = None,
) -> InequalityReport:
    """W_2(rho, rho_lam) <= sqrt(2 H_lam / kappa).  Pass w2 to reuse a known
    distance (e.g. the exact translation value) instead of a solver run."""
    h = functionals.h_lambda(rho, lam)
    kap = kappa(rho.mass, lam)
    bound = math.sqrt(2.0 * h / kap)
    if w2 is None:
        p = grid.SteadyStateParams(lam=lam, mass=rho.mass)
        target = grid.steady_state(p, (0.0, 0.0), rho.spec)
        scaled = grid.density_from_values(
            rho.spec, target.values * (rho.mass / target.mass)
        )
        w2 = transport.wasserstein(rho, scaled, 2.0, cfg).cost
    return _report(
        "talagrand",
        "tal",
        bound,
        w2,
        bound - w2,
        {"h_lambda": h, "kappa": kap},
    )


def tail_mass(rho: Density, radius_sq: float) -> float:
    r2 = rho.spec.radius_sq()
    return rho.spec.cell_area * float(rho.values[r2 >= radius_sq].sum())


def check_thick_tails(
    rho: Density, lam: float, s: float, exterior_mass: float = 0.0
) -> InequalityReport:
    """Annular mass >= eta* exp(-4 H / sqrt(pi M lam)) M / (1 + s^2), s > 1.

    exterior_mass: analytically known density mass outside the box (the
    boxed tail understates the true one); defaults to none.
    """
    if not s > 1:
        raise ValueError(f"s must exceed 1, got {s}")
    spec = rho.spec
    if lam * s * s >= spec.half_width**2:
        raise ValueError("annulus radius reaches outside the box")
    m = rho.mass + exterior_mass
    h = functionals.h_lambda(rho, lam)
    lhs = tail_mass(rho, lam * s * s) + exterior_mass
    damp = math.exp(-4.0 * h / math.sqrt(math.pi * m * lam))
    rhs = ETA_STAR * damp * m / (1.0 + s * s)
    return _report(
        "thick_tails",
        "firab",
        lhs,
        rhs,
        lhs - rhs,
        {"eta_star": ETA_STAR, "h_lambda": h, "damp": damp, "s": s},
    )


def _steady_power_integral(lam: float, mass: float, r: float) -> float:
    """int rho_lam^{1-r} over the plane = A^{1-r} pi lam^{2r-1} / (1 - 2r),
    A = M lam / pi; finite for r < 1/2."""
    a = mass * lam / math.pi
    return a ** (1.0 - r) * math.pi * lam ** (2.0 * r - 1.0) / (1.0 - 2.0 * r)


def localization_constant(q: float, lam: float, mass: float) -> tuple[float, dict]:
    """Constant of the moment bound by the Cauchy-Schwarz iteration over
    weights rho_lam^{-r_j}, r_j = 1/2 - 2^{-j-1}, then interpolation.

    Each stage bounds S_j := int rho rho_lam^{-r_j} <= c_j (1 + H)^{1-2^{-j}}
    with c_1 = T(r_1) + sqrt(2 M) and
    c_{j+1} = T(r_{j+1}) + sqrt(c_j) + sqrt(T(r_j)), T(r) the steady-profile
    integral above.  With 4 r_j = 2 (1 - 2^{-j}), interpolating the moment
    of order q <= 4 r_j against the mass yields exactly the (1+H)^{q/2} rate.
    """
    if not 0 < q < 2:
        raise ValueError(f"q must lie in (0, 2), got {q}")
    a = mass * lam / math.pi
    r = 0.25
    c = _steady_power_integral(lam, mass, r) + math.sqrt(2.0 * mass)
    j = 1
    while 4.0 * r < q:
        r_next = 0.5 * r + 0.25
        c = (
            _steady_power_integral(lam, mass, r_next)
            + math.sqrt(c)
            + math.sqrt(_steady_power_integral(lam, mass, r))
        )
        r = r_next
        j += 1
    exponent = q / (4.0 * r)
    const = (a**r * c) ** exponent * mass ** (1.0 - exponent)
    return const, {"stages": j, "r": r, "chain_c": c}


def localization_bound(rho: Density, lam: float, q: float) -> InequalityReport:
    const, details = localization_constant(q, lam, rho.mass)
    h = functionals.h_lambda(rho, lam)
    lhs = const * (1.0 + h) ** (q / 2.0)
    rhs = grid.moment(rho, q)
    return _report(
        "localization",
        "controlcenter",
        lhs,
        rhs,
        lhs - rhs,
        {"C": const, "h_lambda": h, "q": q, **details},
    )


def neg_entropy_bound(rho: Density, lam: float | None = 1.0) -> InequalityReport:
    """int rho log_- rho <= int m rho + (1/e) int e^{-m}, m = sqrt(lam+|x|^2).

    The right-hand integral of e^{-m} is over the whole plane:
    2 pi (1 + sqrt(lam)) exp(-sqrt(lam))."""
    spec = rho.spec
    m_field = np.sqrt(lam + spec.radius_sq())
    v = rho.values
    below = (v > 0) & (v < 1)
    lhs_neg = -spec.cell_area * float((v[below] * np.log(v[below])).sum())
    moment_m = spec.cell_area * float((m_field * v).sum())
    exp_int = 2.0 * math.pi * (1.0 + math.sqrt(lam)) * math.exp(-math.sqrt(lam))
    rhs = moment_m + exp_int / math.e
    return _report(
        "neg_entropy",
        "logminus",
        rhs,
        lhs_neg,
        rhs - lhs_neg,
        {"moment_m": moment_m, "exp_int": exp_int},
    )


def _entropy_bound_constant(mass: float, alpha: float, lam: float) -> float:
    """C(M, alpha, lam) of the crude entropy bound, alpha > 1/(8 pi)."""
    return (
        alpha
        * mass
        * (
            (1.0 / (lam * math.e)) * (8.0 * math.pi * alpha / (8.0 * math.pi * alpha - 1.0))
            + 1.0 / math.e
            - math.log(lam / math.pi)
            + 3.0 * max(math.log(mass), 0.0)
        )
    )


def ccf_constants(
    lam: float, h_bound: float, mass: float = functionals.CRITICAL_MASS
) -> tuple[float, float, dict]:
    """(gamma1, C_CCF) from the cut-radius construction.

    The solid-core estimate caps the inner mass with a1 = 4 pi; the thick
    tails bound gives the outer mass floor a2; then gamma1 = a/(16 pi - a)
    with a = min(a1, a2), and C_CCF collects the crude entropy bound at
    alpha = (8 pi - a/2)^{-1}, the first-moment control, and the Carleman
    integral."""
    if h_bound < 0:
        raise ValueError("h_bound must be nonnegative")
    sq = math.sqrt(h_bound / math.sqrt(mass * math.pi * lam))
    a1 = 4.0 * math.pi
    a2 = (
        8.0
        * math.pi
        * lam
        * ETA_STAR
        * math.exp(-4.0 * h_bound / math.sqrt(math.pi * mass * lam))
        / (4.0 * math.sqrt(lam) * (1.0 + sq) + 2.0) ** 2
    )
    a = min(a1, a2)
    gamma1 = a / (16.0 * math.pi - a)
    alpha = 1.0 / (8.0 * math.pi - 0.5 * a)
    first_moment_bound = 2.0 * math.sqrt(lam) * mass + 2.0 * mass**0.75 * (
        lam / math.pi
    ) ** 0.25 * math.sqrt(h_bound)
    carleman = (
        2.0 * math.pi * (1.0 + math.sqrt(lam)) * math.exp(-math.sqrt(lam)) / math.e
    )
    c_ccf = (
        2.0 * _entropy_bound_constant(mass, alpha, lam)
        + 32.0 * math.pi * alpha * math.log(first_moment_bound)
        + first_moment_bound
        + carleman
    )
    details = {
        "a1": a1,
        "a2": a2,
        "a": a,
        "alpha": alpha,
        "first_moment_bound": first_moment_bound,
    }
    return gamma1, c_ccf, details


def check_ccf(rho: Density, lam: float) -> InequalityReport:
    h = functionals.h_lambda(rho, lam)
    gamma1, c_ccf, details = ccf_constants(lam, h, rho.mass)
    f = functionals.free_energy(rho, 0.0)
    lhs = f + c_ccf
    rhs = gamma1 * functionals.entropy_positive_part(rho)
    return _report(
        "ccf",
        "both",
        lhs,
        rhs,
        lhs - rhs,
        {"gamma1": gamma1, "c_ccf": c_ccf, "h_lambda": h, **details},
    )


def ccd_constants(
    lam: float,
    h_bound: float,
    energy_bound: float,
    gamma2: float = 2.0 * math.pi,
    entropy_variant: bool = False,
    mass: float = functionals.CRITICAL_MASS,
) -> tuple[float, float, float, dict]:
    """(gamma2, C_CCD, log_C_CCD) by the vertical-splitting recipe.

    eta = 1/2; alpha is fixed so that the entropy contribution to the
    truncated fourth-power mass is pi/8 -- through the concentration bound
    on int rho log_+ rho (default) or a direct entropy bound (variant).
    The level beta then satisfies 32 alpha e^{1/alpha - 1} |A_beta| <= 4 pi
    - gamma2 with |A_beta| <= 8 pi / beta, and C_CCD = 248 pi^2 sqrt(beta).
    The exp(1/alpha) factor usually overflows, so the log value is exact
    and the float is saturated.
    """
    if not 0.0 < gamma2 < 4.0 * math.pi:
        raise ValueError("gamma2 must lie in (0, 4 pi)")
    if entropy_variant:
        ent_bound = max(energy_bound, 1e-2)
    else:
        gamma1, c_ccf, _ = ccf_constants(lam, h_bound, mass)
        ent_bound = max((energy_bound + c_ccf) / gamma1, 1e-2)
    alpha = math.pi / (8.0 * ent_bound)
    # 32 alpha e^{1/alpha - 1} (8 pi / beta) = 4 pi - gamma2
    log_beta = (
        math.log(256.0 * math.pi * alpha / (4.0 * math.pi - gamma2)) + 1.0 / alpha - 1.0
    )
    log_c_ccd = math.log(248.0 * math.pi**2) + 0.5 * log_beta
    c_ccd = math.exp(log_c_ccd) if log_c_ccd < _EXP_SAT else _FLOAT_CAP
    details = {"alpha": alpha, "log_beta": log_beta, "entropy_variant": entropy_variant}
    return gamma2, c_ccd, log_c_ccd, details


def check_ccd(
    rho: Density, lam: float, entropy_variant: bool = False
) -> InequalityReport:
    h = functionals.h_lambda(rho, lam)
    bound = (
        functionals.entropy(rho)
        if entropy_variant
        else functionals.free_energy(rho, 0.0)
    )
    gamma2, c_ccd, log_c_ccd, details = ccd_constants(
        lam, h, bound, entropy_variant=entropy_variant, mass=rho.mass
    )
    d = functionals.dissipation(rho)
    lhs = math.pi * d + c_ccd
    rhs = gamma2 * grid.grad_quarter_energy(rho)
    return _report(
        "ccd",
        "both2",
        lhs,
        rhs,
        lhs - rhs,
        {
            "gamma2": gamma2,
            "c_ccd": c_ccd,
            "log_c_ccd": log_c_ccd,
            "h_lambda": h,
            "dissipation": d,
            **details,
        },
    )
