from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qbsde.errors import PreconditionError
from qbsde.generators import GeneratorSpec, quadratic
from qbsde.grid import TimeGrid, sample_brownian
from qbsde.monitors import (Psi, builtin_psis, estimate_local_time, ito_p_residual, krylov_check,
                            localization_index, lp_moment_report, null_set_occupation, psi_indicator, psi_one,
                            psi_zero)
from qbsde.pure import brownian_terminal, coarsen, constant_terminal, solve_pure_mc
from qbsde.solver import solve_bsde
from qbsde.transforms import indicator, zero

W_T = brownian_terminal(lambda x: x, "linear")
F_HALF = indicator(0.5, 1.0)


@pytest.fixture(scope="module")
def fine():
    return sample_brownian(TimeGrid.uniform(1.0, 200), 10_000, seed=31)


@pytest.fixture(scope="module")
def brownian(fine):
    return solve_bsde(GeneratorSpec(), W_T, fine)


@pytest.fixture(scope="module")
def pure(fine):
    return solve_pure_mc(F_HALF, W_T, fine)


def test_krylov_examples(brownian, pure):
    spec0 = GeneratorSpec()
    assert krylov_check(brownian, spec0, psi_zero(), 1.0).lhs == 0.0
    big = krylov_check(brownian, spec0, psi_one(), 50.0)
    assert big.tau_m_hits == 0.0 and abs(big.lhs - 1.0) <= 3 * big.se + 1e-2 and big.passed
    assert big.rhs == pytest.approx(6 * 50 * 100)
    rep = krylov_check(pure, quadratic(F_HALF), psi_indicator(-0.1, 0.1), 1.0)
    assert rep.rhs == pytest.approx(6 * 1.0 * 0.2) and rep.passed
    for psi in builtin_psis(F_HALF):
        for m in (0.5, 1.0, 2.0):
            assert krylov_check(pure, None, psi, m).passed


def test_krylov_needs_integrable_psi(brownian):
    with pytest.raises(PreconditionError):
        krylov_check(brownian, GeneratorSpec(), Psi(lambda y: np.full_like(y, np.inf), "inf"), 1.0)


def test_localization_index(brownian):
    idx = localization_index(brownian, 0.5)
    W = brownian.Y
    k = idx[0]
    if k < brownian.grid.n_steps:
        assert abs(W[k, 0]) >= 0.5 and np.all(np.abs(W[:k, 0]) < 0.5)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_ito_residual_shrinks(fine, p):
    meds = []
    for factor in (4, 2, 1):
        P = coarsen(fine, factor) if factor > 1 else fine
        meds.append(ito_p_residual(solve_pure_mc(F_HALF, W_T, P), p).median_abs)
    assert meds[0] / meds[1] >= 1.3 and meds[1] / meds[2] >= 1.3


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 3.0])
def test_ito_constant_exact(fine, p):
    sol = solve_bsde(GeneratorSpec(), constant_terminal(-1.25), fine.head(500))
    r = ito_p_residual(sol, p)
    assert r.max_abs == 0.0


def test_ito_p_below_one(brownian):
    with pytest.raises(PreconditionError):
        ito_p_residual(brownian, 0.5)


def test_local_time(brownian, fine):
    L = estimate_local_time(brownian, 0.0, 0.05).mean()
    assert abs(L / math.sqrt(2 / math.pi) - 1) <= 0.10
    assert np.all(estimate_local_time(brownian, 50.0) == 0)
    const = solve_bsde(GeneratorSpec(), constant_terminal(0.0), fine.head(200))
    assert np.all(estimate_local_time(const, 0.0) == 0)
    half = estimate_local_time(brownian, 0.0, 0.025).mean()
    assert abs(half / L - 1) <= 0.10
    with pytest.raises(PreconditionError):
        estimate_local_time(brownian, 0.0, 0.0)


def test_lp_examples(brownian, fine, pure):
    z = solve_bsde(GeneratorSpec(), constant_terminal(0.0), fine.head(300))
    r0 = lp_moment_report(z, GeneratorSpec(), 2.0)
    assert r0.ystar_p == r0.z_p == r0.f_p == 0.0 and r0.first_holds and r0.second_holds
    r = lp_moment_report(brownian, GeneratorSpec(), 2.0)
    assert r.ystar_p <= 4.0 and abs(r.z_p - 1.0) < 1e-8
    for p in (1.5, 2.0, 4.0):
        rep = lp_moment_report(pure, quadratic(F_HALF), p)
        assert rep.first_holds and rep.second_holds
    assert lp_moment_report(pure, quadratic(F_HALF), 1.0).second_holds is None


def test_null_set(pure):
    rep = null_set_occupation(pure, (0.0, 0.5))
    assert rep.exact_hits == 0.0 and rep.shrinking


@given(a=st.floats(-3, 3), b=st.floats(-3, 3), m=st.floats(0.1, 5))
def test_indicator_l1(a, b, m):
    lo, hi = sorted((a, b))
    expected = max(0.0, min(hi, m) - max(lo, -m))
    assert psi_indicator(lo, hi).l1(m) == pytest.approx(expected, abs=1e-8)
