from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qbsde.errors import CoefficientEvaluationError, PreconditionError
from qbsde.transforms import (build_u, build_v, eval_transform, from_function, gaussian, indicator, invert_u,
                              piecewise_constant, zero)

E = math.e


@pytest.fixture(scope="module")
def half_ind():
    return build_u(indicator(0.5, 1.0))


def test_identity_table():
    t = build_u(zero())
    v, d = eval_transform(t, 1.7)
    assert v == pytest.approx(1.7, abs=1e-14) and d == pytest.approx(1.0, abs=1e-14)
    assert t.mass_constant == 1.0
    assert eval_transform(t, -2.3) == pytest.approx((-2.3, 1.0), abs=1e-14)
    assert invert_u(t, 4.2) == pytest.approx(4.2, abs=1e-12)


def test_indicator_values(half_ind):
    assert half_ind(1.0) == pytest.approx(E - 1, abs=1e-10)
    assert half_ind(2.0) == pytest.approx(E - 1 + E, abs=1e-10)
    assert half_ind.mass_constant == pytest.approx(E**2, rel=1e-12)
    # beyond the support the table extrapolates linearly with slope e
    assert half_ind(5.0) == pytest.approx(E - 1 + 4 * E, abs=1e-9)
    assert half_ind.deriv(0.5) == pytest.approx(math.exp(0.5), abs=1e-7)


def test_nodes_reproduced(half_ind):
    k = len(half_ind.nodes) // 3
    v, d = eval_transform(half_ind, half_ind.nodes[k])
    assert v == half_ind.values[k] and d == half_ind.derivs[k]


def test_inverse(half_ind):
    assert invert_u(half_ind, half_ind(1.0)) == pytest.approx(1.0, abs=1e-8)
    assert invert_u(half_ind, 0.0) == 0.0


def test_v_values():
    v0 = build_v(zero())
    assert v0(3.0) == pytest.approx(4.5, abs=1e-10) and v0.deriv(3.0) == pytest.approx(3.0, abs=1e-10)
    assert v0(-3.0) == pytest.approx(4.5, abs=1e-10) and v0.deriv(-3.0) == pytest.approx(-3.0, abs=1e-10)
    v = build_v(indicator(0.5, 1.0))
    # closed form: int_0^x (1 - e^{-y}) e^{y} dy = e^x - 1 - x on [0, 1]
    assert v(0.5) == pytest.approx(math.exp(0.5) - 1.5, abs=1e-10)
    assert v(0.0) == 0.0


def test_v_ode_and_bounds():
    f = gaussian(0.7, 0.5)
    v = build_v(f)
    M = v.mass_constant
    x = np.linspace(-6, 6, 10_000)
    val, d = v.evaluate(x)
    assert np.all(val >= x**2 / (2 * M**2) - 1e-12) and np.all(val <= M**2 * x**2 / 2 + 1e-12)
    nz = x != 0
    assert np.all(np.sign(d[nz]) == np.sign(x[nz]))
    h = 1e-3
    xs = np.linspace(0.1, 4, 200)
    second = (v(xs + h) - 2 * v(xs) + v(xs - h)) / h**2
    resid = second - 2 * f(np.abs(xs)) * np.abs(v.deriv(xs)) - 1
    assert np.max(np.abs(resid)) < 1e-3


def test_errors():
    with pytest.raises(PreconditionError):
        build_u(zero(), domain=(1.0, 2.0))
    with pytest.raises(PreconditionError):
        build_u(zero(), resolution=1)
    bad = from_function(lambda x: np.where(np.abs(x) < 0.5, np.nan, 0.0), 1.0)
    with pytest.raises(CoefficientEvaluationError):
        build_u(bad)


def test_coefficient_invariants():
    f = piecewise_constant([-1.0, 0.0, 0.5], [0.75, -0.4])
    assert f.total_abs_mass == pytest.approx(0.75 + 0.2, abs=1e-14)
    r = np.linspace(0, 5, 20)
    b = np.array([f.compact_bound(x) for x in r])
    assert np.all(np.diff(b) >= 0)
    g = gaussian(0.4, 0.3)
    from scipy.integrate import quad
    assert quad(lambda s: abs(float(g(s))), -np.inf, np.inf)[0] == pytest.approx(g.total_abs_mass, rel=1e-8)


COEFFS = [zero(), indicator(0.25, 1.0), indicator(0.5, 1.0), indicator(2.0, 1.0),
          piecewise_constant([-1.0, 0.0, 0.5], [0.75, -0.4]), gaussian(0.6, 0.4)]


@pytest.mark.parametrize("f", COEFFS, ids=lambda f: f.name)
def test_u_bounds_dense(f):
    t = build_u(f)
    M = t.mass_constant
    x = np.linspace(-f.radius - 5, f.radius + 5, 10_000)
    u, du = t.evaluate(x)
    assert np.all(np.abs(x) / M - np.abs(u) <= 1e-12)
    assert np.all(np.abs(u) - M * np.abs(x) <= 1e-12)
    assert np.all((du >= 1 / M - 1e-12) & (du <= M + 1e-12))
    rng = np.random.default_rng(0)
    xr = rng.uniform(-8, 8, 1000)
    assert np.max(np.abs(invert_u(t, t(xr)) - xr)) <= 1e-8


@pytest.mark.parametrize("f", COEFFS[1:], ids=lambda f: f.name)
def test_doubled_coefficient_bounds(f):
    t = build_u(f.scaled(2.0))
    M2 = math.exp(4 * f.total_abs_mass)
    x = np.linspace(-6, 6, 2001)
    u, du = t.evaluate(x)
    assert np.all(np.abs(u) <= M2 * np.abs(x) + 1e-12) and np.all(du >= 1 / M2 - 1e-12)


@given(c=st.floats(-2.0, 2.0), a=st.floats(0.1, 2.0), x=st.floats(-20, 20))
def test_u_properties(c, a, x):
    t = build_u(indicator(c, a), resolution=401)
    M = t.mass_constant
    u, du = t.evaluate(np.array([x]))
    assert abs(x) / M - abs(u[0]) <= 1e-12 * max(1, abs(x)) and abs(u[0]) <= M * abs(x) + 1e-12 * max(1, abs(x))
    assert 1 / M - 1e-12 <= du[0] <= M + 1e-12
    assert u[0] * x >= 0 or abs(u[0]) < 1e-14
    assert invert_u(t, u)[0] == pytest.approx(x, abs=1e-8)


@given(xs=st.lists(st.floats(-10, 10), min_size=2, max_size=20))
def test_u_monotone(xs):
    t = build_u(gaussian(-0.8, 0.7), resolution=401)
    xs = np.sort(np.array(xs))
    assert np.all(np.diff(t(xs)) >= 0)
