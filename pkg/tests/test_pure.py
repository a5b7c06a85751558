from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qbsde.errors import InvalidComparisonError, PreconditionError
from qbsde.grid import TimeGrid, brownian_model, sample_brownian
from qbsde.pure import (BsdeSolution, TerminalCondition, brownian_terminal, check_growth, compare_pure,
                        constant_terminal, solve_pure_exact, solve_pure_mc, terminal_from_config)
from qbsde.regression import BasisSpec
from qbsde.transforms import build_u, indicator, invert_u, zero

# independent 30-digit mpmath quadrature of u^{-1}(E[u(w + sqrt(T - t) N)]) for f = 0.5 on [-1, 1]
GOLDEN_Y0 = 0.38683435494266565
SURFACE = {(0.5, 0.3): 0.50686934300135398, (0.5, 1.5): 1.5265710637848286, (0.75, -1.2): -1.1589763798095695}

F_HALF = indicator(0.5, 1.0)
W_T = brownian_terminal(lambda x: x, "linear")


@pytest.fixture(scope="module")
def paths():
    return sample_brownian(TimeGrid.uniform(1.0, 50), 20_000, seed=7)


def test_golden_oracle():
    s = solve_pure_exact(F_HALF, W_T, np.array([0.0, 1.0]), [0.0])
    assert abs(s.Y[0, 0] - GOLDEN_Y0) <= 1e-9
    gh = solve_pure_exact(F_HALF, W_T, np.array([0.0, 1.0]), [0.0], method="gauss-hermite", orders=(64, 128),
                         tol=1e-3)
    assert abs(gh.Y[0, 0] - GOLDEN_Y0) <= 1e-4


@pytest.mark.parametrize("tx", sorted(SURFACE))
def test_oracle_surface(tx):
    t, x = tx
    s = solve_pure_exact(F_HALF, W_T, np.array([t, 1.0]), [x])
    assert s.Y[0, 0] == pytest.approx(SURFACE[tx], abs=1e-8)


def test_trivial_oracles():
    g = np.linspace(0, 1, 5)
    s = solve_pure_exact(F_HALF, constant_terminal(0.7), g, np.linspace(-2, 2, 9))
    assert np.allclose(s.Y, 0.7, atol=1e-12)
    s0 = solve_pure_exact(zero(), W_T, g, np.linspace(-2, 2, 9))
    assert np.allclose(s0.Y, np.linspace(-2, 2, 9)[None, :], atol=1e-10)
    assert np.allclose(s0.Z[:-1], 1.0, atol=1e-8)


def test_mc_brownian_identity(paths):
    sol = solve_pure_mc(zero(), W_T, paths)
    W = paths.brownian()[:, :, 0]
    assert np.max(np.abs(sol.Y - W)) < 1e-10
    assert np.max(np.abs(sol.Z[:-1, :, 0] - 1.0)) < 1e-8
    assert np.array_equal(sol.Y[-1], sol.xi)


def test_mc_constant(paths):
    sol = solve_pure_mc(F_HALF, constant_terminal(-0.4), paths)
    assert np.all(sol.Y == -0.4) or np.max(np.abs(sol.Y + 0.4)) < 1e-14
    assert np.max(np.abs(sol.Z)) < 1e-12


def test_mc_golden(paths):
    sol = solve_pure_mc(F_HALF, W_T, paths)
    assert abs(sol.y0 - GOLDEN_Y0) <= 3 * sol.se_y0 + 5e-3
    M = sol.diagnostics["mass_constant"]
    assert sol.diagnostics["min_uprime"] >= 1 / M - 1e-12
    assert np.all(np.isfinite(sol.Y)) and np.all(np.isfinite(sol.Z))


def test_transform_consistency(paths):
    f = indicator(0.8, 0.7)
    sol = solve_pure_mc(f, W_T, paths)
    t = build_u(f, domain=(-12, 12), resolution=4001)
    sol_t = solve_pure_mc(f, W_T, paths, table=t)
    uxi = brownian_terminal(lambda x: t(x), "u(xi)")
    ident = solve_pure_mc(zero(), uxi, paths)
    back = invert_u(t, ident.Y)
    assert np.max(np.abs(back - sol_t.Y)) <= 1e-10
    assert abs(sol.y0 - sol_t.y0) < 1e-6


def test_pnorm_bound(paths):
    sol = solve_pure_mc(F_HALF, W_T, paths)
    M = sol.diagnostics["mass_constant"]
    for p in (1.5, 2.0, 4.0):
        lhs = np.mean(np.max(np.abs(sol.Y), axis=0) ** p)
        rhs = M**p * np.mean(np.max(np.abs(sol.diagnostics["Ytilde"]), axis=0) ** p)
        assert lhs <= rhs


def test_compare_examples(paths):
    small = paths.head(4000)
    same = compare_pure(F_HALF, F_HALF, W_T, W_T, small)
    assert same.passed and abs(same.details["raw_min_difference"]) < 1e-12
    assert compare_pure(zero(), F_HALF, W_T, W_T, small).passed
    shifted = compare_pure(F_HALF, F_HALF, W_T, W_T.shifted(1.0), small)
    assert shifted.passed and shifted.details["y0_difference"] > 0
    # away from the few most extreme samples the difference is strictly positive
    tight = compare_pure(F_HALF, F_HALF, W_T, W_T.shifted(1.0), small, BasisSpec(family="spline"), trim=0.005)
    assert tight.passed and tight.details["raw_min_difference"] > 0
    with pytest.raises(InvalidComparisonError):
        compare_pure(F_HALF, zero(), W_T, W_T, small)
    with pytest.raises(InvalidComparisonError):
        compare_pure(F_HALF, F_HALF, W_T.shifted(0.1), W_T, small)


@settings(max_examples=15)
@given(c1=st.floats(0, 1.5), c2=st.floats(0, 1.5), shift=st.floats(0, 1), x=st.floats(-2, 2))
def test_oracle_comparison_property(c1, c2, shift, x):
    lo, hi = sorted((c1, c2))
    a = solve_pure_exact(indicator(lo, 1.0), W_T, np.array([0.0, 1.0]), [x]).Y[0, 0]
    b = solve_pure_exact(indicator(hi, 1.0), W_T.shifted(shift), np.array([0.0, 1.0]), [x]).Y[0, 0]
    assert b >= a - 1e-9


def test_terminal_config_and_growth():
    t = terminal_from_config({"family": "abs", "a": 2.0, "b": 1.0})
    assert t(np.array([-1.5]))[0] == 4.0 and t.kinks == (0.0,)
    assert check_growth(t, 2.0, 1.0, np.linspace(-5, 5, 101)) >= 0
    assert check_growth(t, 1.0, 1.0, np.linspace(-5, 5, 101)) < 0
    with pytest.raises(PreconditionError):
        terminal_from_config({"family": "linear", "of": "state"})
    with pytest.raises(PreconditionError):
        solve_pure_exact(F_HALF, terminal_from_config({"family": "linear", "of": "state"}, brownian_model()),
                         np.array([0.0, 1.0]), [0.0])
    with pytest.raises(PreconditionError):
        TerminalCondition("nope")


def test_exports(paths, tmp_path):
    sol = solve_pure_mc(F_HALF, W_T, paths.head(100))
    sol.to_csv(tmp_path / "s.csv", 3)
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "t,path,Y,Z1" and len(lines) == 1 + 3 * 51
    s = sol.summary()
    json.dumps(s)
    assert s["scheme"] == "transform-mc" and s["n_steps"] == 50
