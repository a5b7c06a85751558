"""Finite differences for the one-dimensional semilinear PDE

    u_t + b u_x + 1/2 sigma^2 u_xx + F(t, x, u, sigma u_x) = 0,   u(T, .) = g,

and a value-level comparison with the Markovian BSDE solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.linalg import solve_banded

from .errors import ConfigError, PreconditionError, SimulationBlowupError
from .generators import GeneratorSpec
from .grid import SdeModel, TimeGrid, sample_brownian
from .pure import TerminalCondition, coarsen
from .solver import SolverConfig, solve_bsde


@dataclass(frozen=True)
class PdeGrid:
    """Uniform space-time lattice on ``[x_min, x_max] x [t0, T]``.

    ``boundary`` is ``"dirichlet"`` (``u = g`` on both ends) or ``"linear"``
    (zero second derivative, i.e. one-sided linear extrapolation).
    ``theta`` weights the implicit part of the linear operator (1 is backward
    Euler, 0.5 Crank-Nicolson, 0 explicit). ``z_scheme`` selects the
    difference quotient fed to the driver: ``"central"`` or ``"upwind"``
    (the one-sided quotient of smaller magnitude, zero at local extrema).
    """

    x_min: float
    x_max: float
    nx: int = 401
    nt: int = 200
    T: float = 1.0
    t0: float = 0.0
    boundary: str = "dirichlet"
    theta: float = 1.0
    z_scheme: str = "central"

    def __post_init__(self):
        if self.nx < 3:
            raise ConfigError("need at least 3 space nodes", key="pde.nx")
        if self.nt < 1:
            raise ConfigError("need at least 1 time step", key="pde.nt")
        if not self.x_max > self.x_min:
            raise ConfigError("x_max must exceed x_min", key="pde.x_max")
        if not self.T > self.t0:
            raise ConfigError("T must exceed t0", key="pde.T")
        if self.boundary not in ("dirichlet", "linear"):
            raise ConfigError(f"unknown boundary {self.boundary!r}", key="pde.boundary")
        if not 0.0 <= self.theta <= 1.0:
            raise ConfigError("theta must lie in [0, 1]", key="pde.theta")
        if self.z_scheme not in ("central", "upwind"):
            raise ConfigError(f"unknown z scheme {self.z_scheme!r}", key="pde.z_scheme")

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx)

    @property
    def t(self) -> np.ndarray:
        return np.linspace(self.t0, self.T, self.nt + 1)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx - 1)

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.nt

    def refined(self) -> "PdeGrid":
        """Half the space and time steps on the same domain."""
        return replace(self, nx=2 * (self.nx - 1) + 1, nt=2 * self.nt)

    def cfl_number(self, model: SdeModel) -> float:
        """``dt * max(sigma^2) / dx^2`` over the lattice (sampled at ``t0`` and ``T``)."""
        xs = self.x[:, None]
        s2 = max(float(np.max(model.sigma(t, xs, 1) ** 2)) for t in (self.t0, self.T))
        return self.dt * s2 / self.dx**2


def padded_grid(model: SdeModel, T: float, x_lo: float, x_hi: float, nx: int = 401, nt: int = 200,
                t0: float = 0.0, pad_sigmas: float = 6.0, **kw) -> PdeGrid:
    """Grid covering ``[x_lo, x_hi]`` padded by ``pad_sigmas * sigma_max * sqrt(T - t0)`` on each side."""
    xs = np.linspace(x_lo, x_hi, 11)[:, None]
    smax = float(np.max(np.abs(model.sigma(t0, xs, 1))))
    pad = pad_sigmas * max(smax, 1e-12) * math.sqrt(T - t0)
    return PdeGrid(x_lo - pad, x_hi + pad, nx, nt, T, t0, **kw)


@dataclass
class PdeField:
    """``u`` on the lattice; ``u[n, i] = u(t[n], x[i])``."""

    grid: PdeGrid
    u: np.ndarray
    info: dict = field(default_factory=dict)

    @property
    def t(self) -> np.ndarray:
        return self.grid.t

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    def at(self, t0: float, x0) -> np.ndarray:
        """Bilinear interpolation at time ``t0`` and points ``x0``."""
        t = self.t
        if not t[0] - 1e-12 <= t0 <= t[-1] + 1e-12:
            raise PreconditionError(f"t0={t0} outside the PDE time range")
        j = min(max(int(np.searchsorted(t, t0) - 1), 0), len(t) - 2)
        w = (t0 - t[j]) / (t[j + 1] - t[j])
        x0 = np.asarray(x0, dtype=float)
        a = np.interp(x0, self.x, self.u[j])
        b = np.interp(x0, self.x, self.u[j + 1])
        return (1 - w) * a + w * b

    def to_csv(self, path) -> None:
        """Long format with header ``t,x,u``."""
        T, X = np.meshgrid(self.t, self.x, indexing="ij")
        np.savetxt(path, np.column_stack([T.ravel(), X.ravel(), self.u.ravel()]), delimiter=",",
                   header="t,x,u", comments="", fmt="%.17g")

    def to_gnuplot(self, path) -> None:
        """``matrix nonuniform`` layout: first row ``nx, x...``, then ``t, u(t, x...)``."""
        m = np.empty((len(self.t) + 1, len(self.x) + 1))
        m[0, 0] = len(self.x)
        m[0, 1:] = self.x
        m[1:, 0] = self.t
        m[1:, 1:] = self.u
        np.savetxt(path, m, fmt="%.17g")


def _terminal_function(g) -> Callable:
    if isinstance(g, TerminalCondition):
        if g.kind == "constant":
            return lambda x: np.full_like(x, g.value)
        return g.g
    return g


def _gradient(u: np.ndarray, dx: float, scheme: str) -> np.ndarray:
    ux = np.empty_like(u)
    ux[1:-1] = (u[2:] - u[:-2]) / (2 * dx)
    if scheme == "upwind":
        back = (u[1:-1] - u[:-2]) / dx
        fwd = (u[2:] - u[1:-1]) / dx
        ux[1:-1] = np.where(back * fwd > 0, np.where(np.abs(back) < np.abs(fwd), back, fwd), 0.0)
    ux[0] = (u[1] - u[0]) / dx
    ux[-1] = (u[-1] - u[-2]) / dx
    return ux


def solve_pde(model: SdeModel, spec: GeneratorSpec, g, grid: PdeGrid) -> PdeField:
    """Backward theta-scheme; the linear part is implicit-weighted, the driver explicit.

    Raises
    ------
    ConfigError
        ``theta = 0`` with ``dt sigma^2 / dx^2 > 1``.
    SimulationBlowupError
        Non-finite values; ``path`` holds the space index and ``step`` the time index.
    """
    if model.state_dim != 1:
        raise PreconditionError("the PDE solver is one-dimensional")
    gf = _terminal_function(g)
    x = grid.x
    xs = x[:, None]
    dx, dt, th = grid.dx, grid.dt, grid.theta
    cfl = grid.cfl_number(model)
    if th == 0.0 and cfl > 1.0:
        raise ConfigError(f"explicit scheme needs dt*sigma^2/dx^2 <= 1, got {cfl:.3g}", key="pde.nt")
    t = grid.t
    nx = grid.nx
    U = np.empty((grid.nt + 1, nx))
    U[-1] = np.asarray(gf(x), dtype=float)
    if not np.all(np.isfinite(U[-1])):
        raise PreconditionError("terminal function is not finite on the PDE grid")
    bnd = U[-1, [0, -1]].copy()

    def coefficients(tn):
        b = model.b(tn, xs)[:, 0]
        s = model.sigma(tn, xs, 1)[:, 0, 0]
        lo = 0.5 * s**2 / dx**2 - 0.5 * b / dx
        hi = 0.5 * s**2 / dx**2 + 0.5 * b / dx
        return lo, -(s**2) / dx**2, hi, s

    def apply(lo, mid, hi, u):
        out = np.zeros_like(u)
        out[1:-1] = lo[1:-1] * u[:-2] + mid[1:-1] * u[1:-1] + hi[1:-1] * u[2:]
        return out

    for n in range(grid.nt - 1, -1, -1):
        un = U[n + 1]
        lo1, mid1, hi1, s1 = coefficients(t[n + 1])
        z = (s1 * _gradient(un, dx, grid.z_scheme))[:, None]
        F = np.asarray(spec(t[n + 1], xs, un, z), dtype=float)
        rhs = un + dt * F
        if th < 1.0:
            rhs = rhs + (1 - th) * dt * apply(lo1, mid1, hi1, un)
        lo0, mid0, hi0, _ = coefficients(t[n])
        U[n] = _implicit_solve(rhs, -th * dt * lo0, 1.0 - th * dt * mid0, -th * dt * hi0,
                               grid.boundary, bnd)
        _check_finite(U[n], n, t, x)
    return PdeField(grid, U, {"cfl": cfl})


def _implicit_solve(rhs, lo, mid, hi, boundary, bnd):
    """Solve ``lo u_{i-1} + mid u_i + hi u_{i+1} = rhs_i`` on interior nodes.

    Dirichlet ends move the known boundary values to the right-hand side;
    linear ends substitute ``u_0 = 2u_1 - u_2`` (and its mirror).
    """
    nx = len(rhs)
    a = np.zeros((3, nx - 2))
    a[0, 1:] = hi[1:-2]
    a[1, :] = mid[1:-1]
    a[2, :-1] = lo[2:-1]
    r = rhs[1:-1].copy()
    if boundary == "dirichlet":
        r[0] -= lo[1] * bnd[0]
        r[-1] -= hi[-2] * bnd[1]
    else:
        a[1, 0] += 2 * lo[1]
        a[0, 1] -= lo[1]
        a[1, -1] += 2 * hi[-2]
        a[2, -2] -= hi[-2]
    inner = solve_banded((1, 1), a, r)
    out = np.empty(nx)
    out[1:-1] = inner
    if boundary == "dirichlet":
        out[0], out[-1] = bnd
    else:
        out[0] = 2 * inner[0] - inner[1]
        out[-1] = 2 * inner[-1] - inner[-2]
    return out


def _check_finite(row, n, t, x):
    bad = ~np.isfinite(row)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise SimulationBlowupError(f"non-finite PDE value at t={t[n]:.6g}, x={x[i]:.6g}", path=i, step=n)


# --------------------------------------------------------------------------
# growth

@dataclass
class GrowthReport:
    q: float
    c: float
    holds: bool
    worst_point: tuple


def growth_check(field_: PdeField, q: float, beta: float | None = None) -> GrowthReport:
    """Smallest ``c`` with ``|u(t,x)| <= c max(1, |x|^q)`` on the lattice.

    ``holds`` compares ``c`` with ``beta`` when one is given and otherwise
    only asks for a finite ``c``.
    """
    x = field_.x
    w = np.maximum(1.0, np.abs(x) ** q)
    ratio = np.abs(field_.u) / w[None, :]
    n, i = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
    c = float(ratio[n, i])
    holds = math.isfinite(c) and (beta is None or c <= beta)
    return GrowthReport(q, c, holds, (float(field_.t[n]), float(x[i])))


# --------------------------------------------------------------------------
# Feynman-Kac comparison

@dataclass(frozen=True)
class McConfig:
    n_paths: int = 20000
    n_steps: int = 100
    seed: int = 0
    t_points: tuple = (0.0, 0.5)
    x_points: tuple = (-1.0, -0.5, 0.0, 0.5, 1.0)
    solver: SolverConfig = SolverConfig()
    refine: bool = True


@dataclass
class FkLevel:
    points: list
    u_pde: np.ndarray
    y_mc: np.ndarray
    se: np.ndarray

    @property
    def diff(self) -> np.ndarray:
        return self.u_pde - self.y_mc

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.diff)))

    @property
    def mean_abs(self) -> float:
        return float(np.mean(np.abs(self.diff)))

    @property
    def median_abs(self) -> float:
        return float(np.median(np.abs(self.diff)))


@dataclass
class FkReport:
    coarse: FkLevel
    fine: FkLevel | None
    allowance: float
    tolerance: float
    passed: bool
    fine_allowance: float = 0.0
    fine_tolerance: float = math.inf

    @property
    def refinement_ratio(self) -> float:
        if self.fine is None or self.fine.median_abs == 0:
            return math.nan
        return self.coarse.median_abs / self.fine.median_abs


def _mc_values(model, spec, g, T, t0, x0, n_steps_full, mc: McConfig, stream: int, factor: int):
    """``Y_{t0}`` started from ``X_{t0} = x0``; ``factor`` > 1 coarsens a finer path set."""
    steps = max(1, int(round(n_steps_full * (T - t0) / T)))
    fine_grid = TimeGrid.uniform(T, steps * factor, t0=t0)
    paths = sample_brownian(fine_grid, mc.n_paths, seed=mc.seed, stream_id=stream)
    if factor > 1:
        paths = coarsen(paths, factor)
    term = TerminalCondition("state", _terminal_function(g), model=model.with_start([x0], t0))
    sol = solve_bsde(spec, term, paths, mc.solver)
    return sol.y0, sol.se_y0


def _level(model, spec, g, grid: PdeGrid, mc: McConfig, n_steps: int, factor: int) -> FkLevel:
    fld = solve_pde(model, spec, g, grid)
    pts, up, ym, se = [], [], [], []
    stream = 0
    for t0 in mc.t_points:
        for x0 in mc.x_points:
            pts.append((float(t0), float(x0)))
            up.append(float(fld.at(t0, x0)))
            y, s = _mc_values(model, spec, g, grid.T, t0, x0, n_steps, mc, stream, factor)
            ym.append(y)
            se.append(s)
            stream += 1
    return FkLevel(pts, np.array(up), np.array(ym), np.array(se))


def feynman_kac_compare(model: SdeModel, spec: GeneratorSpec, g, pde_grid: PdeGrid,
                        mc: McConfig = McConfig(), safety: float = 3.0) -> FkReport:
    """PDE value against ``Y_{t0}^{t0,x0}`` on the ``(t_points, x_points)`` lattice.

    With ``mc.refine`` both sides are recomputed at half the steps (the MC
    paths are the same Brownian paths, sampled twice as finely). The
    discretisation allowance is the two-grid convergence index for
    first-order schemes: with ``D = max |d_coarse - d_fine|`` it is
    ``safety * D`` on the fine level and ``2 * safety * D`` on the coarse
    one. Each level passes when ``max |u - Y| <= 3 max SE + allowance``.
    """
    if model.state_dim != 1:
        raise PreconditionError("Feynman-Kac comparison is one-dimensional")
    factor = 2 if mc.refine else 1
    coarse = _level(model, spec, g, pde_grid, mc, mc.n_steps, factor)
    if not mc.refine:
        tol = 3.0 * float(np.max(coarse.se))
        return FkReport(coarse, None, 0.0, tol, coarse.max_abs <= tol)
    fine = _level(model, spec, g, pde_grid.refined(), mc, 2 * mc.n_steps, 1)
    change = float(np.max(np.abs(coarse.diff - fine.diff)))
    allow_c, allow_f = 2.0 * safety * change, safety * change
    tol_c = 3.0 * float(np.max(coarse.se)) + allow_c
    tol_f = 3.0 * float(np.max(fine.se)) + allow_f
    ok = coarse.max_abs <= tol_c and fine.max_abs <= tol_f
    return FkReport(coarse, fine, allow_c, tol_c, ok, allow_f, tol_f)
