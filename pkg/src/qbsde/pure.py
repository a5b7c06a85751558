"""Solvers for dY = -f(Y)|Z|^2 dt + Z dW, Y_T = xi, through the u-transform.

With ``u = u^f`` the process ``u(Y)`` is a martingale, so

    Y_t = u^{-1}(E[u(xi) | F_t]),    Z_t = Ztilde_t / u'(Y_t),

where ``Ztilde`` represents the martingale ``E[u(xi) | F_t]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import hermite_e

from .errors import (InvalidComparisonError, OracleFailureError, PreconditionError,
                     TerminalOverflowError)
from .grid import PathBundle, SdeModel, TimeGrid, euler_maruyama
from .regression import BasisSpec, Projector, backward_step, batch_se, prediction_se
from .transforms import IntegrableCoefficient, TransformTable, build_u, invert_u


# --------------------------------------------------------------------------
# terminal conditions

@dataclass
class TerminalCondition:
    """``xi`` as a constant, a function of ``W_T``, or a function of ``X_T``.

    ``g`` receives ``(n,)`` arrays for one-dimensional arguments and
    ``(n, m)`` arrays otherwise.
    """

    kind: str
    g: Callable | None = None
    value: float = 0.0
    model: SdeModel | None = None
    p_integrability: float = 2.0
    name: str = "custom"
    params: dict = field(default_factory=dict)
    kinks: tuple = ()

    def __post_init__(self):
        if self.kind not in ("constant", "brownian", "state"):
            raise PreconditionError(f"unknown terminal kind {self.kind!r}")
        if self.kind == "state" and self.model is None:
            raise PreconditionError("terminal of kind 'state' needs an SDE model")
        if self.kind != "constant" and self.g is None:
            raise PreconditionError("terminal function missing")

    def state(self, paths: PathBundle) -> np.ndarray:
        """Regression state on the grid, shape ``(n_times, n_paths, m)``."""
        if self.kind == "state":
            return euler_maruyama(self.model, paths)
        return paths.brownian()

    def evaluate_state(self, X_T: np.ndarray) -> np.ndarray:
        n = X_T.shape[0]
        if self.kind == "constant":
            return np.full(n, float(self.value))
        arg = X_T[:, 0] if X_T.shape[1] == 1 else X_T
        return np.asarray(self.g(arg), dtype=float).reshape(n)

    def __call__(self, x):
        """Evaluate ``g`` on a one-dimensional argument (constants broadcast)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.full(x.shape, float(self.value))
        return np.asarray(self.g(x), dtype=float)

    def shifted(self, c: float) -> "TerminalCondition":
        if self.kind == "constant":
            return TerminalCondition("constant", value=self.value + c, p_integrability=self.p_integrability,
                                     name=f"{self.name}+{c:g}")
        g = self.g
        return TerminalCondition(self.kind, lambda x: g(x) + c, model=self.model,
                                 p_integrability=self.p_integrability, name=f"{self.name}+{c:g}",
                                 params={"shift": c, "base": self.params}, kinks=self.kinks)


def constant_terminal(k: float) -> TerminalCondition:
    return TerminalCondition("constant", value=float(k), name=f"const({k:g})",
                             params={"family": "constant", "value": float(k)})


def brownian_terminal(g: Callable, name: str = "custom", params=None, kinks=()) -> TerminalCondition:
    return TerminalCondition("brownian", g, name=name, params=params or {}, kinks=tuple(kinks))


_TERMINAL_FAMILIES = {
    "linear": lambda c: (lambda x: c.get("a", 1.0) * x + c.get("b", 0.0)),
    "abs": lambda c: (lambda x: c.get("a", 1.0) * np.abs(x) + c.get("b", 0.0)),
    "sin": lambda c: (lambda x: c.get("a", 1.0) * np.sin(x) + c.get("b", 0.0)),
    "call": lambda c: (lambda x: np.maximum(x - c.get("strike", 0.0), 0.0)),
    "tanh": lambda c: (lambda x: c.get("a", 1.0) * np.tanh(x) + c.get("b", 0.0)),
}


def terminal_from_config(cfg: dict, model: SdeModel | None = None) -> TerminalCondition:
    """``{"family": "linear", "a": 1, "b": 0, "of": "brownian" | "state"}`` and friends."""
    fam = cfg.get("family", "linear")
    p = float(cfg.get("p", 2.0))
    if fam == "constant":
        t = constant_terminal(float(cfg.get("value", 0.0)))
        t.p_integrability = p
        return t
    if fam not in _TERMINAL_FAMILIES:
        raise PreconditionError(f"unknown terminal family {fam!r}")
    g = _TERMINAL_FAMILIES[fam](cfg)
    kinks = {"abs": (0.0,), "call": (float(cfg.get("strike", 0.0)),)}.get(fam, ())
    of = cfg.get("of", "brownian")
    if of == "state":
        if model is None:
            raise PreconditionError("terminal of the state needs an SDE section")
        return TerminalCondition("state", g, model=model, p_integrability=p, name=fam,
                                 params=dict(cfg), kinks=kinks)
    return TerminalCondition("brownian", g, p_integrability=p, name=fam, params=dict(cfg), kinks=kinks)


def check_growth(terminal: TerminalCondition, beta: float, q: float, samples: np.ndarray) -> float:
    """Worst margin of ``|g(x)| <= beta (1 + |x|^q)`` on samples (>= 0 means it holds)."""
    x = np.asarray(samples, dtype=float)
    gx = terminal(x)
    if not np.all(np.isfinite(gx)):
        raise PreconditionError("terminal function is not finite on the sampled support")
    return float(np.min(beta * (1 + np.abs(x) ** q) - np.abs(gx)))


# --------------------------------------------------------------------------
# solutions

@dataclass
class BsdeSolution:
    """Discrete ``(Y, Z)`` on grid x paths.

    ``Y`` has shape ``(n_times, n_paths)``, ``Z`` ``(n_times, n_paths, d)``.
    ``drivers[k]`` holds the generator values used on ``[t_k, t_{k+1})``.
    """

    grid: TimeGrid
    Y: np.ndarray
    Z: np.ndarray
    xi: np.ndarray
    scheme: str
    se_y0: float = float("nan")
    drivers: np.ndarray | None = None
    state: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def y0(self) -> float:
        return float(np.mean(self.Y[0]))

    @property
    def n_paths(self) -> int:
        return self.Y.shape[1]

    def to_csv(self, path, n_paths: int | None = None) -> None:
        """Long format ``t, path, Y, Z_1..Z_d`` for the first ``n_paths`` paths."""
        n = self.n_paths if n_paths is None else min(n_paths, self.n_paths)
        nt, d = len(self.grid), self.Z.shape[2]
        t = np.repeat(self.grid.times, n)
        pid = np.tile(np.arange(n), nt)
        cols = [t, pid, self.Y[:, :n].ravel()] + [self.Z[:, :n, j].ravel() for j in range(d)]
        header = ",".join(["t", "path", "Y"] + [f"Z{j + 1}" for j in range(d)])
        np.savetxt(path, np.column_stack(cols), delimiter=",", header=header, comments="",
                   fmt=["%.17g", "%d"] + ["%.17g"] * (1 + d))

    def summary(self) -> dict:
        return {"Y0": self.y0, "SE": self.se_y0, "scheme": self.scheme,
                "n_paths": self.n_paths, "n_steps": self.grid.n_steps,
                **{k: v for k, v in self.diagnostics.items() if np.isscalar(v) or isinstance(v, str)}}


def transform_table_for(f: IntegrableCoefficient, *arrays, pad: float = 10.0) -> TransformTable:
    """u-table whose domain covers the support of ``f`` and the given values."""
    span = f.radius + pad
    for a in arrays:
        a = np.asarray(a, dtype=float)
        a = a[np.isfinite(a)]
        if a.size:
            span = max(span, float(np.max(np.abs(a))) + 1.0)
    return build_u(f, (-span, span))


# --------------------------------------------------------------------------
# exact oracle

_GAUSS_REACH = 12.0
_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


def _hermite_rule(order: int):
    z, w = hermite_e.hermegauss(order)
    return z, w / math.sqrt(2.0 * math.pi)


def _panel_rule(edges: np.ndarray):
    """Composite 16-point Gauss-Legendre nodes/weights on consecutive edges."""
    a, b = edges[:-1, None], edges[1:, None]
    half = 0.5 * (b - a)
    return (a + half * (_GL_X + 1.0)).ravel(), (half * _GL_W).ravel()


def terminal_kinks(f: IntegrableCoefficient, terminal: TerminalCondition, lo: float, hi: float,
                   n_scan: int = 20001) -> np.ndarray:
    """Points in ``[lo, hi]`` where ``u(g(x))`` may lose smoothness.

    These are the declared kinks of ``g`` plus the crossings of ``g`` through
    the breakpoints of ``f`` (located by a scan and refined with ``brentq``).
    """
    from scipy.optimize import brentq

    pts = [k for k in terminal.kinks if lo < k < hi]
    if terminal.kind == "constant" or not f.breakpoints:
        return np.array(sorted(pts))
    xs = np.linspace(lo, hi, n_scan)
    gx = terminal(xs)
    for c in f.breakpoints:
        h = gx - c
        idx = np.nonzero(np.sign(h[:-1]) * np.sign(h[1:]) < 0)[0]
        for i in idx:
            pts.append(brentq(lambda x: float(terminal(np.array(x))) - c, xs[i], xs[i + 1], xtol=1e-14))
        pts.extend(xs[h == 0].tolist())
    return np.array(sorted(set(pts)))


@dataclass
class ExactSurface:
    t: np.ndarray
    x: np.ndarray
    Y: np.ndarray            # (len(t), len(x))
    Z: np.ndarray
    method: str
    max_change: float


def solve_pure_exact(f: IntegrableCoefficient, terminal: TerminalCondition, grid, x_eval,
                     table: TransformTable | None = None, method: str = "composite",
                     orders=(64, 128), panels=(24, 48), tol: float = 1e-9) -> ExactSurface:
    """Ground truth ``Y(t, w) = u^{-1}(int u(g(w + sqrt(T - t) z)) phi(z) dz)``.

    ``grid`` is a :class:`TimeGrid` or an array of evaluation times whose last
    entry is ``T``. The Gaussian integral uses either composite Gauss-Legendre
    on ``[-12, 12]`` with panel edges at the kinks of ``u o g`` (``method=
    "composite"``) or plain Gauss-Hermite (``"gauss-hermite"``). The last two
    refinement levels must agree to ``tol`` (relative) or
    :class:`OracleFailureError` is raised. ``Z`` uses the Gaussian
    integration-by-parts identity ``d/dw E[h(w + s z)] = E[h(w + s z) z] / s``.
    """
    if terminal.kind == "state":
        raise PreconditionError("exact oracle needs a terminal of W_T")
    times = grid.times if isinstance(grid, TimeGrid) else np.asarray(grid, dtype=float)
    T = float(times[-1])
    x = np.atleast_1d(np.asarray(x_eval, dtype=float))
    tau = T - times
    reach = _GAUSS_REACH * math.sqrt(max(float(tau.max()), 0.0))
    lo, hi = float(x.min()) - reach - 1.0, float(x.max()) + reach + 1.0
    if table is None:
        table = transform_table_for(f, terminal(np.linspace(lo, hi, 4001)))
    kinks = terminal_kinks(f, terminal, lo, hi) if method == "composite" else np.array([])

    def moments(level):
        E = np.empty((len(times), len(x)))
        Mz = np.empty_like(E)
        for i, ti in enumerate(tau):
            if ti <= 0:
                E[i] = Mz[i] = np.nan
                continue
            s = math.sqrt(ti)
            for j, w in enumerate(x):
                if method == "composite":
                    zk = (kinks - w) / s
                    zk = zk[np.abs(zk) < _GAUSS_REACH]
                    edges = np.union1d(np.linspace(-_GAUSS_REACH, _GAUSS_REACH, level + 1), zk)
                    z, wt = _panel_rule(edges)
                    wt = wt * np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
                else:
                    z, wt = _hermite_rule(level)
                h = table(terminal(w + s * z))
                E[i, j] = h @ wt
                Mz[i, j] = (h * z) @ wt
        return E, Mz

    if method == "composite":
        levels = panels
    elif method == "gauss-hermite":
        levels = orders
    else:
        raise PreconditionError(f"unknown oracle method {method!r}")
    (e_lo, _), (e_hi, m_hi) = moments(levels[-2]), moments(levels[-1])
    live = tau > 0
    change = 0.0
    if np.any(live):
        change = float(np.max(np.abs(e_hi[live] - e_lo[live]) / np.maximum(1.0, np.abs(e_hi[live]))))
    if not change <= tol:
        raise OracleFailureError(
            f"{method} quadrature changed by {change:.3g} between levels {levels[-2]} and {levels[-1]}")
    Y = np.empty_like(e_hi)
    Z = np.empty_like(e_hi)
    Y[live] = invert_u(table, e_hi[live])
    Z[live] = m_hi[live] / np.sqrt(tau[live])[:, None] / table.deriv(Y[live])
    if np.any(~live):
        d = 1e-6
        Y[~live] = terminal(x)
        Z[~live] = (terminal(x + d) - terminal(x - d)) / (2 * d)
    return ExactSurface(times, x, Y, Z, method, change)


# --------------------------------------------------------------------------
# regression Monte Carlo

def solve_pure_mc(f: IntegrableCoefficient, terminal: TerminalCondition, paths: PathBundle,
                  basis: BasisSpec = BasisSpec(), table: TransformTable | None = None) -> BsdeSolution:
    """Backward regression on ``Ytilde = u(Y)``, then back-transform."""
    grid = paths.grid
    S = terminal.state(paths)
    xi = terminal.evaluate_state(S[-1])
    if table is None:
        table = transform_table_for(f, xi)
    with np.errstate(over="ignore", invalid="ignore"):
        yt_T = table(xi)
    if not np.all(np.isfinite(yt_T)):
        bad = int(np.argmax(~np.isfinite(yt_T)))
        raise TerminalOverflowError(f"u(xi) is not finite on path {bad}")
    n, d = paths.n_paths, paths.dim
    nt = len(grid)
    Yt = np.empty((nt, n))
    Zt = np.empty((nt, n, d))
    Yt[-1] = yt_T
    conds = np.empty(grid.n_steps)
    resid = np.empty(grid.n_steps)
    dt = grid.dt
    dW = paths.dW
    target0 = None
    for k in range(grid.n_steps - 1, -1, -1):
        proj = Projector(S[k], basis, step=k, dW=dW[k], dt=dt[k])
        est = backward_step(proj, Yt[k + 1], dW[k])
        Yt[k], Zt[k] = est.y, est.z
        conds[k], resid[k] = proj.condition_number, est.residual_rms
        if k == 0:
            target0 = est.target
    Zt[-1] = Zt[-2] if nt > 1 else 0.0
    Y = invert_u(table, Yt)
    Y[-1] = xi
    uprime = table.deriv(Y)
    Z = Zt / uprime[..., None]
    se = batch_se(target0) / float(table.deriv(np.mean(Y[0])))
    drivers = f(Y[:-1]) * np.einsum("knd,knd->kn", Z[:-1], Z[:-1])
    return BsdeSolution(grid, Y, Z, xi, "transform-mc", se_y0=se, drivers=drivers, state=S,
                        diagnostics={"condition_numbers": conds, "residual_rms": resid,
                                     "min_uprime": float(np.min(uprime)), "mass_constant": table.mass_constant,
                                     "basis_degree": basis.degree, "Ytilde": Yt, "uprime": uprime})


# --------------------------------------------------------------------------
# comparison

@dataclass
class ComparisonReport:
    min_difference: float
    tolerance: float
    se: float
    allowance: float
    passed: bool
    worst_step: int
    details: dict = field(default_factory=dict)


def coarsen(paths: PathBundle, factor: int = 2) -> PathBundle:
    """Same Brownian path on every ``factor``-th grid point."""
    if paths.grid.n_steps % factor:
        raise PreconditionError("step count must be divisible by the coarsening factor")
    n, N, d = paths.increments.shape
    inc = paths.increments.reshape(n, N // factor, factor, d).sum(axis=2)
    return PathBundle(TimeGrid(paths.grid.times[::factor]), inc, paths.seed, paths.stream_id)


def support_mask(S: np.ndarray, trim: float) -> np.ndarray:
    """``(n_times, n_paths)`` mask of states inside the per-step ``[trim, 1 - trim]`` quantile box.

    Regression estimates at the few most extreme samples of a step are
    extrapolations; comparisons can be restricted to the populated region.
    """
    nt, n, m = S.shape
    if trim <= 0:
        return np.ones((nt, n), dtype=bool)
    lo = np.quantile(S, trim, axis=1, keepdims=True)
    hi = np.quantile(S, 1 - trim, axis=1, keepdims=True)
    return np.all((S >= lo) & (S <= hi), axis=2)


def masked_min(diff: np.ndarray, mask: np.ndarray):
    """Per-step minimum of ``diff`` over ``mask`` (steps with empty masks give ``+inf``)."""
    return np.where(mask, diff, np.inf).min(axis=1)


def pair_se_surface(S: np.ndarray, sol_a: BsdeSolution, sol_b: BsdeSolution, paths: PathBundle,
                    basis: BasisSpec) -> np.ndarray:
    """Per step and path, ``sqrt(se_a^2 + se_b^2)`` of the two regression estimates; zero at ``T``.

    Each side's SE is the prediction SE of its own regression target
    (``Ytilde`` for transformed solves, mapped back through ``1/u'(Y)``).
    """
    grid = paths.grid
    se = np.zeros_like(sol_a.Y)
    for k in range(grid.n_steps):
        proj = Projector(S[k], basis, step=k, dW=paths.dW[k], dt=grid.dt[k])
        tot = np.zeros(paths.n_paths)
        for sol in (sol_a, sol_b):
            target = sol.diagnostics.get("Ytilde", sol.Y)[k + 1]
            e = prediction_se(proj, target)
            up = sol.diagnostics.get("uprime")
            if up is not None:
                e = e / up[k]
            tot += e**2
        se[k] = np.sqrt(tot)
    return se


def pointwise_verdict(D: np.ndarray, se: np.ndarray, mask: np.ndarray, allowance: float):
    """Worst entry of ``D + 3 se`` over ``mask``: ``(D there, 3 se there + allowance, step)``."""
    slack = np.where(mask, D + 3.0 * se, np.inf)
    k, i = np.unravel_index(int(np.argmin(slack)), slack.shape)
    return float(D[k, i]), float(3.0 * se[k, i] + allowance), int(k)


def compare_pure(f: IntegrableCoefficient, g: IntegrableCoefficient, xi: TerminalCondition,
                 xi_prime: TerminalCondition, paths: PathBundle, basis: BasisSpec = BasisSpec(),
                 check_points: np.ndarray | None = None, trim: float = 0.0) -> ComparisonReport:
    """Solve both pure BSDEs on shared noise and check ``Y <= Y'``.

    Every grid point and path must satisfy ``Y' - Y >= -(3 SE + allowance)``
    where SE combines the pointwise prediction standard errors of both
    solutions (:func:`pair_se_surface`) and the allowance is the
    change of the minimum difference when the same paths are observed on a
    grid twice as coarse. With ``trim > 0`` only :func:`support_mask` counts.
    The report carries the entry with the least slack.
    """
    if check_points is None:
        R = max(f.radius, g.radius)
        check_points = np.linspace(-R - 1.0, R + 1.0, 4001)
    gap = g(check_points) - f(check_points)
    if np.min(gap) < -1e-12:
        raise InvalidComparisonError(f"f <= g fails at x={check_points[np.argmin(gap)]:.6g}")
    S = xi.state(paths)
    a, b = xi.evaluate_state(S[-1]), xi_prime.evaluate_state(S[-1])
    if np.any(a > b):
        raise InvalidComparisonError(f"xi <= xi' fails on path {int(np.argmax(a > b))}")

    def run(p):
        s1 = solve_pure_mc(f, xi, p, basis)
        s2 = solve_pure_mc(g, xi_prime, p, basis)
        return s1, s2

    s1, s2 = run(paths)
    D = s2.Y - s1.Y
    mask = support_mask(S, trim)
    m = float(masked_min(D, mask).min())
    se = _difference_se(s1, s2, paths)
    allowance = 0.0
    if paths.grid.n_steps % 2 == 0 and paths.grid.n_steps >= 4:
        c1, c2 = run(coarsen(paths))
        allowance = abs(float(masked_min(c2.Y - c1.Y, support_mask(S[::2], trim)).min()) - m)
    worst, tol, step = pointwise_verdict(D, pair_se_surface(S, s1, s2, paths, basis), mask, allowance)
    return ComparisonReport(worst, tol, se, allowance, worst >= -tol, step,
                            {"y0_difference": s2.y0 - s1.y0, "raw_min_difference": m})


def _difference_se(s1: BsdeSolution, s2: BsdeSolution, paths: PathBundle) -> float:
    """Batch SE of the time-0 difference of the two solutions."""
    d1 = s1.Y[1] - np.einsum("nd,nd->n", s1.Z[0], paths.dW[0])
    d2 = s2.Y[1] - np.einsum("nd,nd->n", s2.Z[0], paths.dW[0])
    return batch_se(d2 - d1)
