from __future__ import annotations

import math

import numpy as np
import pytest

from qbsde.errors import InvalidComparisonError, PreconditionError, StepDivergenceError
from qbsde.generators import GeneratorSpec, Lattice, combine, constant_driver, linear, quadratic
from qbsde.grid import TimeGrid, sample_brownian
from qbsde.pure import brownian_terminal, coarsen, constant_terminal
from qbsde.solver import (SolverConfig, comparison_run, double_approximation_run, solve_bsde, stability_run,
                          truncated_terminal)
from qbsde.transforms import indicator

GOLDEN_Y0 = 0.38683435494266565
W_T = brownian_terminal(lambda x: x, "linear")
QUAD = quadratic(indicator(0.5, 1.0))


@pytest.fixture(scope="module")
def paths():
    return sample_brownian(TimeGrid.uniform(1.0, 50), 20_000, seed=21)


@pytest.fixture(scope="module")
def small():
    return sample_brownian(TimeGrid.uniform(1.0, 20), 4000, seed=22)


def test_zero_driver(paths):
    sol = solve_bsde(GeneratorSpec(), W_T, paths)
    assert np.max(np.abs(sol.Y - paths.brownian()[:, :, 0])) < 1e-10
    assert np.max(np.abs(sol.Z[:-1] - 1.0)) < 1e-8
    assert np.array_equal(sol.Y[-1], sol.xi)


@pytest.mark.parametrize("scheme", ["implicit", "explicit"])
def test_linear_closed_form(small, scheme):
    r = 0.7
    sol = solve_bsde(linear(b=-r), constant_terminal(1.0), small, SolverConfig(scheme=scheme))
    exact = np.exp(-r * (1.0 - small.grid.times))
    assert np.max(np.abs(sol.Y - exact[:, None])) <= 2 * r * small.grid.max_step
    assert np.max(np.abs(sol.Z)) == 0.0


def test_quadratic_against_oracle(paths):
    sol = solve_bsde(QUAD, W_T, paths)
    assert abs(sol.y0 - GOLDEN_Y0) <= 3 * sol.se_y0 + 5e-3
    pre = solve_bsde(QUAD, W_T, paths, SolverConfig(precondition="u-transform"))
    assert abs(pre.y0 - GOLDEN_Y0) <= 3 * pre.se_y0 + 5e-3
    assert abs(pre.y0 - sol.y0) <= 3 * math.hypot(pre.se_y0, sol.se_y0) + 5e-3
    assert pre.scheme == "implicit+u-transform" and "Ytilde" in pre.diagnostics


def test_schemes_converge_together():
    fine = sample_brownian(TimeGrid.uniform(1.0, 100), 4000, seed=23)
    spec = combine(linear(0.2, -1.0, 0.3), QUAD)
    gaps = []
    for factor in (4, 2, 1):
        P = coarsen(fine, factor) if factor > 1 else fine
        a = solve_bsde(spec, W_T, P, SolverConfig(scheme="explicit"))
        b = solve_bsde(spec, W_T, P, SolverConfig(scheme="implicit"))
        gaps.append(float(np.median(np.abs(a.Y - b.Y))))
    assert gaps[0] / gaps[1] >= 1.3 and gaps[1] / gaps[2] >= 1.3


def test_divergence_detected(small):
    blow = GeneratorSpec(F1=lambda t, x, y, z: 400.0 * y + 1.0)
    with pytest.raises(StepDivergenceError) as ei:
        solve_bsde(blow, W_T, small, SolverConfig(check_structure=False, picard_iters=20))
    assert ei.value.step == small.grid.n_steps - 1


def test_structure_gate(small):
    bad = GeneratorSpec(F1=lambda t, x, y, z: y**2, name="y^2")
    with pytest.raises(PreconditionError):
        solve_bsde(bad, W_T, small)
    with pytest.raises(PreconditionError):
        SolverConfig(scheme="rk4")


def test_comparison_examples(small):
    A = linear(b=-0.5)
    same = comparison_run(A, A, W_T, W_T, small)
    assert same.passed and same.raw_min_difference == 0.0
    up = comparison_run(A, A, W_T, W_T.shifted(1.0), small)
    diff = up.raw_min_difference
    assert up.passed and math.exp(-0.5) - 1e-9 <= diff <= 1.0 + 1e-9
    assert comparison_run(A, combine(A, constant_driver(1.0)), W_T, W_T, small).passed
    with pytest.raises(InvalidComparisonError):
        comparison_run(combine(A, constant_driver(1.0)), A, W_T, W_T, small)
    with pytest.raises(InvalidComparisonError):
        comparison_run(A, A, W_T.shifted(0.5), W_T, small)


def test_stability_examples(small):
    r = 0.5
    spec = linear(b=-r)
    zero_rep = stability_run(spec, W_T, [(spec, W_T)], small)
    assert zero_rep.y_errors[0] == 0.0 and zero_rep.z_errors[0] == 0.0
    ns = [1, 2, 4, 8, 16]
    rep = stability_run(spec, W_T, [(spec, W_T.shifted(1 / n)) for n in ns], small, scales=[1 / n for n in ns])
    np.testing.assert_allclose(rep.y_errors, [1 / n for n in ns], rtol=1e-10)
    assert rep.fitted_order == pytest.approx(1.0, abs=1e-8) and rep.bounded
    rep_f = stability_run(spec, W_T, [(combine(spec, constant_driver(1 / n)), W_T) for n in ns], small,
                          scales=[1 / n for n in ns])
    assert rep_f.fitted_order == pytest.approx(1.0, abs=0.05)


def test_truncated_terminal():
    t = truncated_terminal(brownian_terminal(lambda x: 3 * x, "3x"), 2, 1)
    np.testing.assert_allclose(t(np.array([-1.0, -0.1, 0.5, 1.0])), [-1.0, -0.3, 1.5, 2.0], atol=1e-15)


def test_double_approximation_exact_case(small):
    spec = linear(b=-0.5)
    xi = brownian_terminal(np.tanh, "tanh")
    lat = Lattice.uniform(-5, 5, 1001)
    rep = double_approximation_run(spec, xi, small, [(1, 1), (2, 1), (2, 2), (4, 4)], lattice=lat)
    vals = np.array(list(rep.y0.values()))
    h = lat.y[1] - lat.y[0]
    assert np.ptp(vals) <= 3 * max(rep.se.values()) + 4 * h
    assert rep.passed


def test_double_approximation_quadratic(small):
    spec = combine(linear(0.2, -0.5), QUAD)
    xi = brownian_terminal(lambda x: 2 * x, "2x")
    rep = double_approximation_run(spec, xi, small, [(1, 1), (2, 1), (2, 2), (4, 2), (4, 4)])
    assert rep.monotone_n and rep.monotone_k and rep.cauchy_ok and not rep.errors
    assert rep.y0[(2, 1)] >= rep.y0[(1, 1)] and rep.y0[(2, 2)] <= rep.y0[(2, 1)]
    assert min(rep.envelope_coverage.values()) >= 0.99
