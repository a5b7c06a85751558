from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qbsde.errors import ConfigError
from qbsde.generators import GeneratorSpec, constant_driver, linear, quadratic
from qbsde.grid import brownian_model, ou_model
from qbsde.pde import McConfig, PdeGrid, feynman_kac_compare, growth_check, padded_grid, solve_pde
from qbsde.solver import SolverConfig
from qbsde.transforms import indicator

# mpmath oracle values of the purely quadratic equation with f = 0.5 on [-1, 1], xi = W_T
GOLDEN_Y0 = 0.38683435494266565
SURFACE = {(0.5, 0.3): 0.50686934300135398, (0.75, -1.2): -1.1589763798095695}

MODEL = brownian_model()
F_HALF = indicator(0.5, 1.0)


def _grid(**kw):
    return padded_grid(MODEL, 1.0, -2.0, 2.0, nx=401, nt=200, **kw)


def test_zero_driver_keeps_terminal():
    fld = solve_pde(MODEL, GeneratorSpec(), lambda x: x, _grid())
    np.testing.assert_allclose(fld.u, np.broadcast_to(fld.x, fld.u.shape), atol=1e-10)


@pytest.mark.parametrize("boundary", ["dirichlet", "linear"])
def test_linear_closed_form(boundary):
    fld = solve_pde(MODEL, linear(0.0, -0.5), lambda x: x, _grid(boundary=boundary))
    exact = np.exp(-0.5 * (1 - fld.t))[:, None] * fld.x[None, :]
    inner = np.abs(fld.x) <= 2.0
    assert np.max(np.abs(fld.u - exact)[:, inner]) <= 2e-3


def test_quadratic_against_oracle():
    fld = solve_pde(MODEL, quadratic(F_HALF), lambda x: x, _grid())
    assert abs(float(fld.at(0.0, 0.0)) - GOLDEN_Y0) <= 1e-3
    for (t, x), v in SURFACE.items():
        assert abs(float(fld.at(t, x)) - v) <= 1e-3


def test_explicit_cfl_violation():
    with pytest.raises(ConfigError) as exc:
        solve_pde(MODEL, GeneratorSpec(), lambda x: x, padded_grid(MODEL, 1.0, -2, 2, nx=201, nt=100, theta=0.0))
    assert exc.value.key == "pde.nt"
    ok = padded_grid(MODEL, 1.0, -2, 2, nx=101, nt=400, theta=0.0)
    assert ok.cfl_number(MODEL) <= 1
    solve_pde(MODEL, GeneratorSpec(), lambda x: x, ok)


@pytest.mark.parametrize("kw,key", [({"nx": 2}, "pde.nx"), ({"nt": 0}, "pde.nt"), ({"x_max": -5.0}, "pde.x_max"),
                                    ({"boundary": "periodic"}, "pde.boundary"), ({"theta": 1.5}, "pde.theta"),
                                    ({"z_scheme": "weno"}, "pde.z_scheme")])
def test_grid_validation(kw, key):
    args = {"x_min": -1.0, "x_max": 1.0}
    args.update(kw)
    with pytest.raises(ConfigError) as exc:
        PdeGrid(**args)
    assert exc.value.key == key


def test_refined_grid():
    g = PdeGrid(-1.0, 1.0, 11, 5).refined()
    assert (g.nx, g.nt) == (21, 10) and g.dx == pytest.approx(0.1)


def test_growth_check():
    lin = growth_check(solve_pde(MODEL, GeneratorSpec(), lambda x: x, _grid()), 1.0)
    assert lin.c == pytest.approx(1.0, abs=1e-9) and lin.holds
    const = growth_check(solve_pde(MODEL, GeneratorSpec(), lambda x: np.full_like(x, -2.5), _grid()), 0.0, beta=3)
    assert const.c == pytest.approx(2.5) and const.holds
    assert not growth_check(solve_pde(MODEL, GeneratorSpec(), lambda x: x**2, _grid()), 1.0, beta=2.0).holds


def test_exports(tmp_path):
    fld = solve_pde(MODEL, GeneratorSpec(), lambda x: x, PdeGrid(-1.0, 1.0, 5, 2))
    fld.to_csv(tmp_path / "u.csv")
    rows = np.loadtxt(tmp_path / "u.csv", delimiter=",", skiprows=1)
    assert (tmp_path / "u.csv").read_text().startswith("t,x,u\n")
    assert rows.shape == (15, 3)
    np.testing.assert_allclose(rows[:, 2], rows[:, 1])
    fld.to_gnuplot(tmp_path / "u.dat")
    m = np.loadtxt(tmp_path / "u.dat")
    assert m[0, 0] == 5 and np.allclose(m[0, 1:], fld.x) and np.allclose(m[1:, 0], fld.t)


def test_feynman_kac_linear():
    mc = McConfig(n_paths=4000, n_steps=20, t_points=(0.0, 0.5), x_points=(-0.5, 0.5), seed=3)
    rep = feynman_kac_compare(MODEL, linear(0.0, -0.5), lambda x: x, _grid(), mc)
    assert rep.passed
    exact = [math.exp(-0.5 * (1 - t)) * x for t, x in rep.fine.points]
    assert np.max(np.abs(rep.fine.u_pde - exact)) <= 2e-3


def test_feynman_kac_ou_quadratic():
    model = ou_model(theta=0.5)
    mc = McConfig(n_paths=4000, n_steps=20, t_points=(0.0,), x_points=(0.0, 0.5), seed=4,
                  solver=SolverConfig())
    grid = padded_grid(model, 1.0, -1.0, 1.0, nx=201, nt=100)
    rep = feynman_kac_compare(model, quadratic(F_HALF), np.tanh, grid, mc)
    assert rep.passed


@settings(max_examples=15)
@given(k=st.floats(-1, 1), a=st.floats(0, 0.5))
def test_pde_comparison(k, a):
    """A larger terminal and a larger driver give a larger solution on the lattice."""
    g = PdeGrid(-3.0, 3.0, 61, 40)
    lo = solve_pde(MODEL, quadratic(F_HALF), lambda x: np.tanh(x), g)
    hi = solve_pde(MODEL, quadratic(F_HALF) if a == 0 else _plus(a), lambda x: np.tanh(x) + abs(k), g)
    assert np.all(hi.u >= lo.u - 1e-10)


def _plus(a):
    from qbsde.generators import combine
    return combine(quadratic(F_HALF), constant_driver(a))


@settings(max_examples=15)
@given(k=st.floats(-2, 2))
def test_pde_constant_driver_shift(k):
    """A constant driver adds ``k (T - t)`` when the boundary does not pin the values."""
    g = PdeGrid(-3.0, 3.0, 61, 40, boundary="linear")
    base = solve_pde(MODEL, GeneratorSpec(), np.sin, g)
    shifted = solve_pde(MODEL, constant_driver(k), np.sin, g)
    diff = shifted.u - base.u
    np.testing.assert_allclose(diff, np.broadcast_to((k * (1 - g.t))[:, None], diff.shape), atol=1e-10)


def test_transform_commutation():
    """``f(u)|u_x|^2`` with data ``g`` equals ``u_f^{-1}`` of the heat equation with data ``u_f(g)``."""
    from qbsde.transforms import build_u, invert_u
    table = build_u(F_HALF)
    grid = _grid()
    direct = solve_pde(MODEL, quadratic(F_HALF), np.tanh, grid)
    heat = solve_pde(MODEL, GeneratorSpec(), lambda x: table.evaluate(np.tanh(x))[0], grid)
    back = invert_u(table, heat.u)
    inner = np.abs(grid.x) <= 2.0
    assert np.max(np.abs(direct.u - back)[:, inner]) <= 2e-3
