from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qbsde.errors import PreconditionError
from qbsde.generators import (GeneratorSpec, Lattice, approximating_generator, combine, constant_driver,
                              convex_exp, dominates, generator_from_config, inf_convolution, linear,
                              monotone_polynomial, quadratic, structure_margins, transform_generator,
                              truncate_rho, untransform_generator, validate_structure, z_lipschitz)
from qbsde.transforms import build_u, gaussian, indicator, zero

E = math.e


def test_validate_examples():
    assert validate_structure(linear(b=-1.0)).passed
    assert validate_structure(quadratic(indicator(0.5, 1.0))).passed
    assert validate_structure(quadratic(gaussian(-0.7, 0.5))).passed
    assert validate_structure(combine(linear(0.1, -0.5, 0.3), convex_exp(0.5, 1.0), z_lipschitz(0.2)),
                              require_convex=True).passed
    assert validate_structure(monotone_polynomial(2.0, 3)).passed
    sq = GeneratorSpec(F1=lambda t, x, y, z: y**2, phi=lambda r: np.asarray(r) ** 2, name="y^2")
    rep = validate_structure(sq)
    assert not rep.passed and "growth_sign" in rep.failed()
    m = structure_margins(sq, 0.0, None, np.array([2.0]), np.array([[0.0]]))
    assert m["growth_sign"][0] == pytest.approx(-4.0)


def test_mislabelled_convexity_caught():
    concave = GeneratorSpec(F2=lambda t, x, y, z: -z[:, 0] ** 2 / (1 + z[:, 0] ** 2), convex_F2=True, gamma2=1.0,
                            phi=lambda r: np.ones_like(np.asarray(r)))
    assert "F2_convex" in validate_structure(concave).failed()


def test_dominates():
    a = linear(0.0, -0.5)
    assert dominates(a, combine(a, constant_driver(1.0))) == pytest.approx(1.0)
    assert dominates(combine(a, constant_driver(1.0)), a) < 0


def test_truncate():
    assert truncate_rho(0.5, 1) == 0.5 and truncate_rho(3.0, 1) == 1 and truncate_rho(-3.0, 1) == -1
    with pytest.raises(PreconditionError):
        truncate_rho(1.0, 0.0)


def test_inf_convolution_huber():
    ic = inf_convolution(lambda y, z: y**2, 2.0)
    y = np.linspace(-5, 5, 1001)
    huber = np.where(np.abs(y) <= 1, y**2, 2 * np.abs(y) - 1)
    # off-lattice slack of the corner rule: n h / 2 plus the h^2 curvature term
    h = 0.05
    assert np.max(np.abs(ic(y, np.zeros_like(y)) - huber)) <= 2.0 * h / 2 + h**2
    lat = ic.lattice.y
    on = lat[np.abs(lat) <= 5]
    assert np.allclose(ic(on, np.zeros_like(on)), np.where(np.abs(on) <= 1, on**2, 2 * np.abs(on) - 1),
                       atol=1e-12)


def test_inf_convolution_lipschitz_fixed_point():
    F = lambda y, z: np.abs(y) - 0.5 * np.abs(z)  # noqa: E731
    ic = inf_convolution(F, 1.0)
    y = ic.lattice.y[20:-20]
    z = ic.lattice.z[20:-20][::-1]
    assert np.allclose(ic(y, z), F(y, z), atol=1e-12)
    # off the lattice the corner rule is an upper bound within n h
    yo = y[:-1] + 0.013
    assert np.all(ic(yo, z[:-1]) >= F(yo, z[:-1]) - 1e-12) and np.all(ic(yo, z[:-1]) <= F(yo, z[:-1]) + 0.05)
    with pytest.raises(PreconditionError):
        inf_convolution(lambda y, z: 1 / (y * 0), 1.0)


@given(n1=st.integers(1, 6), n2=st.integers(1, 6))
def test_inf_convolution_monotone_and_lipschitz(n1, n2):
    lo, hi = sorted((n1, n2))
    lat = Lattice.uniform(-4, 4, 81)
    F = lambda y, z: y**2 + np.exp(z)  # noqa: E731
    a, b = inf_convolution(F, lo, lat), inf_convolution(F, hi, lat)
    assert np.all(a.values <= b.values + 1e-12)
    h = lat.y[1] - lat.y[0]
    assert np.max(np.abs(np.diff(b.values, axis=0))) <= hi * h + 1e-9
    assert np.max(np.abs(np.diff(b.values, axis=1))) <= hi * h + 1e-9


def test_approximating_generator_monotone():
    spec = combine(linear(0.2, -0.5), quadratic(indicator(0.5, 1.0)))
    times = np.linspace(0, 1, 11)
    lat = Lattice.uniform(-5, 5, 101)
    y = np.linspace(-4, 4, 50)
    z = np.linspace(-3, 3, 50)[:, None]
    vals = {(n, k): approximating_generator(spec, n, k, times, lat)(0.5, None, y, z)
            for n in (1, 2, 4) for k in (1, 2, 4)}
    for k in (1, 2, 4):
        assert np.all(vals[(1, k)] <= vals[(2, k)] + 1e-12) and np.all(vals[(2, k)] <= vals[(4, k)] + 1e-12)
    for n in (1, 2, 4):
        assert np.all(vals[(n, 1)] >= vals[(n, 2)] - 1e-12) and np.all(vals[(n, 2)] >= vals[(n, 4)] - 1e-12)
    with pytest.raises(PreconditionError):
        approximating_generator(spec, 0, 1, times)


def test_transform_generator():
    G = lambda t, x, y, z: -y  # noqa: E731
    assert transform_generator(G, zero()) is G
    f = indicator(0.5, 1.0)
    t = build_u(f)
    Ft = transform_generator(G, f, t)
    assert Ft(0.0, None, np.array([t(1.0)]), np.zeros((1, 1)))[0] == pytest.approx(-E, abs=1e-8)
    zero_G = transform_generator(lambda t_, x, y, z: np.zeros_like(y), f, t)
    assert np.all(zero_G(0.0, None, np.linspace(-3, 3, 7), np.ones((7, 1))) == 0)


@given(y=st.floats(-4, 4), z=st.floats(-3, 3))
def test_transform_round_trip(y, z):
    f = gaussian(0.6, 0.5)
    t = _TABLE
    G = lambda t_, x, y_, z_: np.sin(y_) + 0.3 * z_[:, 0]  # noqa: E731
    back = untransform_generator(transform_generator(G, f, t), f, t)
    ya, za = np.array([y]), np.array([[z]])
    assert back(0.0, None, ya, za)[0] == pytest.approx(G(0.0, None, ya, za)[0], abs=1e-8)


_TABLE = build_u(gaussian(0.6, 0.5))


def test_config_families():
    spec = generator_from_config([{"family": "linear", "a": 0.1, "b": -0.5, "c": 0.3},
                                  {"family": "quadratic", "coefficient": {"family": "indicator", "c": 0.5, "a": 1.0}}])
    y, z = np.array([0.5]), np.array([[2.0]])
    assert spec(0.0, None, y, z)[0] == pytest.approx(0.1 - 0.25 + 0.6 + 0.5 * 4)
    assert generator_from_config([]).name == "zero"
    with pytest.raises(PreconditionError):
        generator_from_config([{"family": "nope"}])
    with pytest.raises(PreconditionError):
        combine(quadratic(indicator(0.5, 1.0)), quadratic(gaussian(0.1, 1.0)))
