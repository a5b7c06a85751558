"""Empirical checks of occupation-time, Ito and a priori identities on solutions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .constants import first_estimate, second_estimate
from .errors import PreconditionError
from .generators import GeneratorSpec
from .pure import BsdeSolution
from .regression import batch_se
from .transforms import IntegrableCoefficient


# --------------------------------------------------------------------------
# test functions psi

@dataclass(frozen=True)
class Psi:
    func: Callable
    name: str
    breakpoints: tuple = ()

    def __call__(self, y):
        return np.asarray(self.func(np.asarray(y, dtype=float)), dtype=float)

    def l1(self, m: float) -> float:
        """``||psi||_{L^1[-m, m]}`` by adaptive quadrature split at the breakpoints."""
        pts = sorted({-m, m} | {b for b in self.breakpoints if -m < b < m})
        total = 0.0
        for a, b in zip(pts[:-1], pts[1:]):
            total += integrate.quad(lambda s: abs(float(self(np.array([s]))[0])), a, b,
                                    epsabs=1e-12, epsrel=1e-10, limit=200)[0]
        return total


def psi_zero() -> Psi:
    return Psi(lambda y: np.zeros_like(y), "zero")


def psi_one() -> Psi:
    return Psi(lambda y: np.ones_like(y), "one")


def psi_indicator(a: float, b: float) -> Psi:
    return Psi(lambda y: ((y >= a) & (y <= b)).astype(float), f"1[{a:g},{b:g}]", (a, b))


def psi_gaussian(center: float = 0.0, width: float = 0.5) -> Psi:
    return Psi(lambda y: np.exp(-0.5 * ((y - center) / width) ** 2), f"gauss({center:g},{width:g})")


def psi_abs_coefficient(f: IntegrableCoefficient) -> Psi:
    return Psi(lambda y: np.abs(f(y)), f"|{f.name}|", tuple(f.breakpoints))


def builtin_psis(f: IntegrableCoefficient | None = None) -> list:
    out = [psi_indicator(-0.1, 0.1), psi_indicator(-1.0, 1.0), psi_indicator(0.5, 2.0),
           psi_gaussian(0.0, 0.5), psi_gaussian(1.0, 0.25)]
    if f is not None and f.total_abs_mass > 0:
        out.append(psi_abs_coefficient(f))
    return out


# --------------------------------------------------------------------------
# Krylov estimate

@dataclass
class OccupationReport:
    psi: str
    m: float
    lhs: float
    rhs: float
    se: float
    tau_m_hits: float
    passed: bool

    @property
    def tightness(self) -> float:
        return self.rhs / self.lhs if self.lhs > 0 else math.inf


def _driver_values(sol: BsdeSolution, spec: GeneratorSpec | None) -> np.ndarray:
    if sol.drivers is not None:
        return sol.drivers
    if spec is None or sol.state is None:
        raise PreconditionError("solution carries no driver values and no generator was given")
    t = sol.grid.times
    return np.stack([spec(t[k], sol.state[k], sol.Y[k], sol.Z[k]) for k in range(sol.grid.n_steps)])


def localization_index(sol: BsdeSolution, m: float, spec: GeneratorSpec | None = None) -> np.ndarray:
    """Per path, the first grid index with ``|Y_t| + int_0^t |F| ds >= m`` (``n_steps`` if none)."""
    dt = sol.grid.dt
    run = np.abs(sol.Y).copy()
    run[1:] += np.cumsum(np.abs(_driver_values(sol, spec)) * dt[:, None], axis=0)
    hit = run >= m
    idx = np.where(hit.any(axis=0), hit.argmax(axis=0), sol.grid.n_steps)
    return idx


def krylov_check(sol: BsdeSolution, spec: GeneratorSpec | None, psi: Psi, m: float) -> OccupationReport:
    """``E[int_0^{tau_m} psi(Y)|Z|^2 ds] <= 6 m ||psi||_{L^1[-m,m]}`` with 3 SE slack."""
    rhs = 6.0 * m * psi.l1(m)
    if not math.isfinite(rhs):
        raise PreconditionError("psi is not integrable on [-m, m]")
    idx = localization_index(sol, m, spec)
    nsteps = sol.grid.n_steps
    active = np.arange(nsteps)[:, None] < idx[None, :]
    z2 = np.einsum("knd,knd->kn", sol.Z[:-1], sol.Z[:-1])
    contrib = np.where(active, psi(sol.Y[:-1]) * z2, 0.0) * sol.grid.dt[:, None]
    per_path = contrib.sum(axis=0)
    lhs = float(per_path.mean())
    se = batch_se(per_path)
    return OccupationReport(psi.name, m, lhs, rhs, se, float(np.mean(idx < nsteps)), lhs <= rhs + 3 * se)


# --------------------------------------------------------------------------
# |y|^p Ito formula and local time

def estimate_local_time(sol: BsdeSolution, a: float = 0.0, eps: float = 0.05) -> np.ndarray:
    """``L^a_T ~ (1/(2 eps)) sum 1{|Y - a| < eps} |Z|^2 dt`` per path."""
    if eps <= 0:
        raise PreconditionError("epsilon must be positive")
    z2 = np.einsum("knd,knd->kn", sol.Z[:-1], sol.Z[:-1])
    near = np.abs(sol.Y[:-1] - a) < eps
    return (near * z2 * sol.grid.dt[:, None]).sum(axis=0) / (2.0 * eps)


@dataclass
class ItoResidual:
    p: float
    gap: np.ndarray
    median_abs: float
    mean_abs: float
    max_abs: float


def ito_p_residual(sol: BsdeSolution, p: float, local_time_eps: float = 0.05,
                   zero_tol: float = 1e-10) -> ItoResidual:
    """Per-path gap between the two sides of the discrete ``|Y|^p`` expansion on ``[0, T]``.

    ``|Y_0|^p + p(p-1)/2 sum 1{Y != 0}|Y|^{p-2}|Z|^2 dt`` versus
    ``|xi|^p - p sum sgn(Y)|Y|^{p-1} dY`` minus the local time at 0 when ``p = 1``.

    Values with ``|Y| <= zero_tol * max(1, max|xi|)`` count as zero, so a
    start value that should be 0 but carries round-off does not turn
    ``|Y|^{p-2}`` into a spike for ``p < 2``.
    """
    if p < 1:
        raise PreconditionError("p must be >= 1")
    Y = sol.Y.copy()
    Y[np.abs(Y) <= zero_tol * max(1.0, float(np.max(np.abs(sol.xi), initial=0.0)))] = 0.0
    Yk = Y[:-1]
    dY = np.diff(Y, axis=0)
    z2 = np.einsum("knd,knd->kn", sol.Z[:-1], sol.Z[:-1])
    nz = Yk != 0
    absY = np.abs(Yk)
    dt = sol.grid.dt[:, None]
    if p == 1:
        corr = np.zeros_like(absY)
    else:
        powm2 = np.zeros_like(absY)
        np.power(absY, p - 2, out=powm2, where=nz)
        corr = 0.5 * p * (p - 1) * np.where(nz & (z2 != 0), powm2 * z2, 0.0) * dt
    lhs = np.abs(Y[0]) ** p + corr.sum(axis=0)
    mart = p * (np.sign(Yk) * absY ** (p - 1) * dY).sum(axis=0)
    rhs = np.abs(Y[-1]) ** p - mart
    if p == 1:
        rhs = rhs - estimate_local_time(sol, 0.0, local_time_eps)
    gap = lhs - rhs
    a = np.abs(gap)
    return ItoResidual(p, gap, float(np.median(a)), float(a.mean()), float(a.max()))


# --------------------------------------------------------------------------
# L^p moments and the a priori estimates

@dataclass
class LpReport:
    p: float
    ystar_p: float
    z_p: float
    f_p: float
    xi_alpha_p: float
    y_alpha_p: float
    log_c_first: float
    log_c_second: float | None
    first_holds: bool
    second_holds: bool | None
    details: dict = field(default_factory=dict)


def _le_log(lhs: float, log_c: float, rhs: float) -> bool:
    if lhs <= 0:
        return True
    if rhs <= 0:
        return False
    return math.log(lhs) <= log_c + math.log(rhs) + 1e-12


def lp_moment_report(sol: BsdeSolution, spec: GeneratorSpec, p: float) -> LpReport:
    """Empirical moments of ``(Y*, int|Z|^2, int f|Z|^2)`` against both a priori bounds."""
    dt = sol.grid.dt[:, None]
    z2 = np.einsum("knd,knd->kn", sol.Z[:-1], sol.Z[:-1])
    ystar = np.max(np.abs(sol.Y), axis=0)
    qv = (z2 * dt).sum(axis=0)
    fq = (spec.f(np.abs(sol.Y[:-1])) * z2 * dt).sum(axis=0)
    alpha_T = float(spec.alpha_integral(sol.grid.times)[-1])
    ystar_p = float(np.mean(ystar**p))
    z_p = float(np.mean(qv ** (p / 2)))
    f_p = float(np.mean(fq**p))
    xi_alpha = float(np.mean(np.abs(sol.xi) ** p)) + alpha_T**p
    y_alpha = ystar_p + alpha_T**p
    T = sol.grid.T
    M = math.exp(4.0 * spec.f.positive_mass)
    first = first_estimate(T, M, spec.beta, spec.gamma, p)
    ok1 = _le_log(z_p + f_p, first.c, y_alpha)
    second, ok2 = None, None
    if p > 1:
        sec = second_estimate(T, M, spec.beta, spec.gamma, p)
        second = sec.c
        ok2 = _le_log(ystar_p + z_p + f_p, sec.c, xi_alpha)
    return LpReport(p, ystar_p, z_p, f_p, xi_alpha, y_alpha, first.c, second, ok1, ok2,
                    {"M": M, "alpha_T": alpha_T})


# --------------------------------------------------------------------------
# occupation of null sets

@dataclass
class NullSetReport:
    points: tuple
    exact_hits: float
    occupations: dict
    shrinking: bool


def null_set_occupation(sol: BsdeSolution, points, eps_list=(0.1, 0.05, 0.025, 0.0125)) -> NullSetReport:
    """``int 1{Y in A}|Z|^2 ds`` for a finite set ``A``: exact-hit mass and eps-neighbourhood occupation."""
    z2 = np.einsum("knd,knd->kn", sol.Z[:-1], sol.Z[:-1])
    dt = sol.grid.dt[:, None]
    Yk = sol.Y[:-1]
    hits = np.zeros_like(Yk, dtype=bool)
    for a in points:
        hits |= Yk == a
    exact = float(((hits * z2) * dt).sum(axis=0).mean())
    occ = {}
    for eps in eps_list:
        near = np.zeros_like(hits)
        for a in points:
            near |= np.abs(Yk - a) < eps
        occ[eps] = float(((near * z2) * dt).sum(axis=0).mean())
    vals = [occ[e] for e in sorted(eps_list, reverse=True)]
    shrinking = all(b <= a + 1e-15 for a, b in zip(vals[:-1], vals[1:]))
    return NullSetReport(tuple(points), exact, occ, shrinking)
