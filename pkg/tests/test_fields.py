"""Direction field, manufactured solution and the forcing oracle.

The forcing test applies the PDE operator to the exact solution with central
finite differences only (no reuse of the closed-form derivatives), which makes
it an independent check of the symbolic pipeline.
"""

import numpy as np
import pytest

from aniheat.fields import (AnisotropyField, ExactSolution, MmsParams,
                            bfield_eval, boundary_residual, divergence_check,
                            exact_u, gaussian_initial, limit_constancy_check)


def test_bfield_examples():
    assert np.allclose(bfield_eval(AnisotropyField(0.0), (0.3, 0.7)), [1.0, 0.0])

    b = bfield_eval(AnisotropyField(1.0), (0.5, 0.5))
    expected = np.array([np.pi, -np.pi / 4.0])
    expected /= np.linalg.norm(expected)
    assert np.allclose(b, expected, atol=1e-14)

    b = bfield_eval(AnisotropyField(1.0), (0.0, 0.0))
    assert np.allclose(b, [1.0, 0.0], atol=1e-14)  # B = (pi - 1, 0)


def test_bfield_unit_norm_everywhere():
    rng = np.random.default_rng(11)
    x = rng.uniform(0, 1, 10_000)
    y = rng.uniform(0, 1, 10_000)
    for alpha in (0.0, 0.5, 1.0):
        bx, by = AnisotropyField(alpha).b(x, y)
        assert np.max(np.abs(np.hypot(bx, by) - 1.0)) <= 1e-14


def test_divergence_free():
    field = AnisotropyField(1.0)
    rng = np.random.default_rng(3)
    pts = rng.uniform(0.01, 0.99, size=(1000, 2))
    for px, py in pts[:5]:
        assert divergence_check(field, (px, py)) == 0.0
    assert divergence_check(AnisotropyField(0.0), (0.4, 0.6)) == 0.0

    # finite-difference divergence of B
    step = 1e-5
    x, y = pts[:, 0], pts[:, 1]
    bx_p, _ = field.B(x + step, y)
    bx_m, _ = field.B(x - step, y)
    _, by_p = field.B(x, y + step)
    _, by_m = field.B(x, y - step)
    div_fd = (bx_p - bx_m) / (2 * step) + (by_p - by_m) / (2 * step)
    assert np.max(np.abs(div_fd)) <= 1e-8


def test_exact_u_point_values():
    params = MmsParams(alpha=1.0, Tm=1.0, eps=1e-14)
    assert exact_u(params, 0.0, (0.5, 0.5)) == pytest.approx(4.0, abs=1e-12)

    params = MmsParams(alpha=0.0, Tm=1.0, eps=1e-30)
    for x in (0.0, 0.3, 0.9):
        assert exact_u(params, 0.0, (x, 0.0)) == pytest.approx(5.0, abs=1e-12)

    # p carries the e^{-t} factor: halved at t = ln 2
    sol = ExactSolution(MmsParams())
    assert sol.p(np.log(2.0), 0.3, 0.8) == pytest.approx(0.5 * sol.p(0.0, 0.3, 0.8))


def test_exact_u_limit_matches_p():
    sol = ExactSolution(MmsParams(eps=1e-10))
    rng = np.random.default_rng(5)
    x = rng.uniform(0, 1, 200)
    y = rng.uniform(0, 1, 200)
    u = sol.u(0.2, x, y)
    p = sol.p(0.2, x, y)
    assert np.max(np.abs(u - p)) <= 1e-10 * np.max(np.abs(p))


def test_limit_constancy():
    assert limit_constancy_check(MmsParams(alpha=1.0), t=0.0) <= 1e-10
    assert limit_constancy_check(MmsParams(alpha=0.0), t=0.5) <= 1e-14

    # the eps-perturbation breaks the alignment of the full solution
    sol = ExactSolution(MmsParams(eps=1.0))
    field = AnisotropyField(1.0)
    bx, by = field.b(0.4, 0.3)
    aligned = bx * sol.partial("x", 0.0, 0.4, 0.3) + by * sol.partial("y", 0.0, 0.4, 0.3)
    assert abs(aligned) > 1e-3


def _fd_forcing(sol, field, eps, t, x, y, step=1e-4):
    """PDE operator applied to exact u with nested central differences."""

    def u(tt, xx, yy):
        return sol.u(tt, xx, yy)

    def grad_u(tt, xx, yy):
        return ((u(tt, xx + step, yy) - u(tt, xx - step, yy)) / (2 * step),
                (u(tt, xx, yy + step) - u(tt, xx, yy - step)) / (2 * step))

    def flux(tt, xx, yy):
        ux, uy = grad_u(tt, xx, yy)
        bx, by = field.b(xx, yy)
        d = bx * ux + by * uy
        par_x = u(tt, xx, yy) ** 2.5 * d * bx / eps
        par_y = u(tt, xx, yy) ** 2.5 * d * by / eps
        perp_x = ux - d * bx
        perp_y = uy - d * by
        return par_x + perp_x, par_y + perp_y

    dudt = (u(t + step, x, y) - u(t - step, x, y)) / (2 * step)
    fx_p, _ = flux(t, x + step, y)
    fx_m, _ = flux(t, x - step, y)
    _, fy_p = flux(t, x, y + step)
    _, fy_m = flux(t, x, y - step)
    div = (fx_p - fx_m) / (2 * step) + (fy_p - fy_m) / (2 * step)
    return dudt - div


@pytest.mark.parametrize("eps", [1.0, 1e-2])
def test_forcing_matches_fd_oracle(eps):
    params = MmsParams(alpha=1.0, Tm=1.0, eps=eps)
    sol = ExactSolution(params)
    field = AnisotropyField(1.0)
    rng = np.random.default_rng(17)
    x = rng.uniform(0.01, 0.99, 1000)
    y = rng.uniform(0.01, 0.99, 1000)
    t = 0.37
    f_closed = sol.forcing(t, x, y)
    f_fd = _fd_forcing(sol, field, eps, t, x, y)
    scale = np.max(np.abs(f_closed))
    assert np.max(np.abs(f_closed - f_fd)) <= 1e-5 * scale


def test_forcing_time_consistency():
    # d/dt u from the pipeline against a plain finite difference in t
    sol = ExactSolution(MmsParams(eps=1e-2))
    x, y, t, step = 0.3, 0.6, 0.8, 1e-6
    fd = (sol.u(t + step, x, y) - sol.u(t - step, x, y)) / (2 * step)
    assert sol.partial("t", t, x, y) == pytest.approx(fd, rel=1e-8)


def test_forcing_rejects_nonpositive_state():
    # a large perturbation with tiny Tm drives u below zero somewhere
    params = MmsParams(alpha=1.0, Tm=1e-3, eps=1.0)
    sol = ExactSolution(params)
    x = np.linspace(0.01, 0.99, 101)
    y = np.full_like(x, 0.5)
    assert np.min(sol.u(0.0, x, y)) < 0
    with pytest.raises(ValueError, match="nonpositive"):
        sol.forcing(0.0, x, y)


def test_boundary_residuals_vanish_for_shipped_config():
    params = MmsParams(alpha=1.0, Tm=1.0, eps=1e-2, gamma=1.0)
    scale = 1.0  # u = O(5), fluxes O(10); absolute tolerance is meaningful
    for t in (0.0, 0.5):
        for y in (0.1, 0.5, 0.9):
            assert abs(boundary_residual(params, t, (0.0, y), "in")) <= 1e-12 * scale
            assert abs(boundary_residual(params, t, (1.0, y), "out")) <= 1e-12 * scale
        for x in (0.2, 0.7):
            assert abs(boundary_residual(params, t, (x, 0.0), "parallel")) <= 1e-12
            assert abs(boundary_residual(params, t, (x, 1.0), "parallel")) <= 1e-12


def test_boundary_residual_rejects_bad_tag():
    with pytest.raises(ValueError):
        boundary_residual(MmsParams(), 0.0, (0.0, 0.5), "weird")


def test_mms_params_validation():
    with pytest.raises(ValueError):
        MmsParams(eps=0.0)
    with pytest.raises(ValueError):
        MmsParams(Tm=-1.0)
    with pytest.raises(ValueError):
        MmsParams(gamma=-0.5)


def test_gaussian_initial():
    assert gaussian_initial(1e5, (0.5, 0.5)) == pytest.approx(1e5)
    assert gaussian_initial(1e5, (0.0, 0.0)) == pytest.approx(5e4 * (1 + np.exp(-25)))
    rng = np.random.default_rng(23)
    pts = rng.uniform(0, 1, size=(500, 2))
    vals = gaussian_initial(2.0, (pts[:, 0], pts[:, 1]))
    assert np.all(vals >= 1.0)
    assert np.all(vals <= 2.0)
