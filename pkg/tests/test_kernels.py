import math

import numpy as np
import pytest

from pksflow import grid, kernels

# brute-force double-convolution oracle gamma_eps * G * gamma_eps evaluated
# by adaptive 2D quadrature (tol 1e-12); the closed form matched to ~1e-11
BRUTE_EPS01 = {0.0: 0.302083362513, 0.05: 0.297186416100, 0.2: 0.238691980566,
               3.0: -0.174849576283}
BRUTE_EPS03 = {0.0: 0.127233786230, 1.0: -0.001380292611}


def test_green_point_values():
    assert kernels.green((1.0, 0.0)) == 0.0
    assert kernels.green((math.e, 0.0)) == pytest.approx(-1.0 / (2 * math.pi))
    assert kernels.green((0.5, 0.0)) == pytest.approx(math.log(2.0) / (2 * math.pi))
    with pytest.raises(ValueError):
        kernels.green((0.0, 0.0))


def test_mollifier_normalization():
    m = kernels.Mollifier(0.37)
    xs = np.linspace(-4, 4, 801)
    x, y = np.meshgrid(xs, xs, indexing="ij")
    pts = np.stack([x, y], axis=-1)
    total = m(pts).sum() * (xs[1] - xs[0]) ** 2
    assert total == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ValueError):
        kernels.Mollifier(0.0)


@pytest.mark.parametrize("eps,table", [(0.1, BRUTE_EPS01), (0.3, BRUTE_EPS03)])
def test_green_reg_matches_convolution_oracle(eps, table):
    for r, expected in table.items():
        got = kernels.green_reg(eps, (r, 0.0))
        assert got == pytest.approx(expected, rel=1e-8, abs=1e-10)


def test_green_reg_rejects_nonpositive_eps():
    with pytest.raises(ValueError):
        kernels.green_reg(0.0, (1.0, 0.0))
    with pytest.raises(ValueError):
        kernels.green_reg(-0.1, (1.0, 0.0))


def test_green_reg_below_green():
    rs = np.geomspace(1e-3, 30.0, 200)
    for eps in (0.05, 0.1, 0.5, 1.0):
        reg = kernels.green_reg_r(eps, rs)
        free = kernels.green_r(rs)
        assert np.all(reg <= free + 1e-15)
        # strict wherever E1 exceeds the float resolution of the values
        resolvable = rs * rs / (4 * eps * eps) < 25
        assert np.all(reg[resolvable] < free[resolvable])


def test_green_reg_monotone_in_eps():
    rs = np.geomspace(1e-3, 30.0, 120)
    pairs = [(0.05, 0.1), (0.1, 0.5), (0.5, 1.0)]
    for e1, e2 in pairs:
        a = kernels.green_reg_r(e1, rs)
        b = kernels.green_reg_r(e2, rs)
        assert np.all(a >= b - 1e-15)
        resolvable = rs * rs / (4 * e1 * e1) < 25
        assert np.all(a[resolvable] > b[resolvable])


def test_green_reg_lower_bound_pairs():
    # two-sided log bound on sampled pairs; valid for small eps
    rng = np.random.default_rng(7)
    for eps in (0.005, 0.019):
        x = rng.uniform(-20, 20, (200, 2))
        y = rng.uniform(-20, 20, (200, 2))
        d = np.hypot(x[:, 0] - y[:, 0], x[:, 1] - y[:, 1])
        vals = kernels.green_reg_r(eps, d)
        bound = -(
            4.0
            + np.log(math.e + (x**2).sum(axis=1))
            + np.log(math.e + (y**2).sum(axis=1))
        ) / (4.0 * math.pi)
        assert np.all(vals >= bound)


def test_regularized_kernel_sup_constant_recorded():
    k = kernels.RegularizedKernel(0.1)
    assert k.sup_value == pytest.approx(BRUTE_EPS01[0.0], rel=1e-9)
    assert k.sup_bound_constant == pytest.approx(k.sup_value * 0.01)
    rs = np.geomspace(1e-4, 10, 300)
    assert np.all(k(rs) <= k.sup_value + 1e-14)


def test_potential_laplacian_consistency(params_unit):
    # -Delta c = rho to second order in the interior (eps = 0)
    errs = {}
    for n in (128, 256):
        spec = grid.GridSpec(n, 20.0)
        rho = grid.steady_state(params_unit, (0.0, 0.0), spec)
        c = kernels.potential(rho, 0.0)
        h = spec.h
        lap = (
            c.values[2:, 1:-1]
            + c.values[:-2, 1:-1]
            + c.values[1:-1, 2:]
            + c.values[1:-1, :-2]
            - 4.0 * c.values[1:-1, 1:-1]
        ) / (h * h)
        interior = rho.values[1:-1, 1:-1]
        sl = slice(n // 4, -n // 4)
        errs[n] = np.abs(lap[sl, sl] + interior[sl, sl]).max()
    assert errs[256] < 0.4 * errs[128]


def test_potential_gradient_bound(params_unit, spec128):
    rho = grid.steady_state(params_unit, (0.0, 0.0), spec128)
    eps = 0.1
    c = kernels.potential(rho, eps)
    gnorm = np.hypot(c.grad_x, c.grad_y).max()
    c_hls = 2.0 * math.sqrt(math.pi)
    gamma43 = (1.5 * math.pi) ** 0.75 / (2 * math.pi)
    assert gnorm <= 4.0 * c_hls * gamma43**2 / eps


def test_potential_symmetric_gradient_vanishes_at_center(params_unit, spec128):
    rho = grid.steady_state(params_unit, (0.0, 0.0), spec128)
    c = kernels.potential(rho, 0.1)
    n = spec128.n
    # central 2x2 block: odd symmetry makes the x-gradients cancel pairwise
    gx = c.grad_x[n // 2 - 1 : n // 2 + 1, n // 2 - 1 : n // 2 + 1]
    assert abs(gx.sum()) < 1e-10 * np.abs(c.grad_x).max()


def test_potential_linear_in_density(params_unit, spec64):
    r1 = grid.steady_state(params_unit, (0.4, 0.0), spec64)
    r2 = grid.steady_state(params_unit, (-0.3, 0.2), spec64)
    both = grid.density_from_values(spec64, r1.values + r2.values)
    c1 = kernels.potential(r1, 0.2).values
    c2 = kernels.potential(r2, 0.2).values
    c12 = kernels.potential(both, 0.2).values
    assert np.allclose(c12, c1 + c2, rtol=0, atol=1e-12 * np.abs(c12).max())


def test_potential_rejects_negative_eps(steady128):
    with pytest.raises(ValueError):
        kernels.potential(steady128, -0.1)
