"""Backward regression Monte Carlo for BSDEs with quadratic growth in z.

Step ``k`` fits ``Y_{k+1} ~ a(X_k) + Z_k dW_k`` (see
:func:`qbsde.regression.backward_step`) and then solves

    Y_k = a(X_k) + F(t_k, X_k, Y_k, Z_k) dt_k

by Picard iteration (implicit) or with ``Y_k`` replaced by ``a`` inside
``F`` (explicit).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constants import second_estimate
from .errors import (InvalidComparisonError, PreconditionError, QbsdeError, SimulationBlowupError,
                     StepDivergenceError)
from .generators import (GeneratorSpec, Lattice, approximating_generator, dominates, transform_generator,
                         truncate_rho, validate_structure)
from .grid import PathBundle
from .pure import (BsdeSolution, TerminalCondition, coarsen, pair_se_surface, masked_min, pointwise_verdict,
                   support_mask, transform_table_for)
from .regression import BasisSpec, Projector, backward_step, batch_se
from .transforms import invert_u


GROWTH_FACTOR = 1.01


@dataclass(frozen=True)
class SolverConfig:
    scheme: str = "implicit"
    picard_iters: int = 5
    picard_tol: float = 1e-10
    basis: BasisSpec = BasisSpec()
    precondition: str = "none"
    truncation_m: float | None = None
    z_clip_quantile: float | None = 0.999
    check_structure: bool = True

    def __post_init__(self):
        if self.scheme not in ("implicit", "explicit"):
            raise PreconditionError(f"unknown scheme {self.scheme!r}")
        if self.picard_iters < 1:
            raise PreconditionError("picard_iters must be >= 1")
        if self.precondition not in ("none", "u-transform"):
            raise PreconditionError(f"unknown preconditioning {self.precondition!r}")
        if self.z_clip_quantile is not None and not 0 < self.z_clip_quantile <= 1:
            raise PreconditionError("z_clip_quantile must lie in (0, 1]")


def _clip_z(z: np.ndarray, q: float | None):
    if q is None or q >= 1:
        return z, 0
    norms = np.sqrt(np.einsum("nd,nd->n", z, z))
    cap = np.quantile(norms, q)
    over = norms > cap
    if not np.any(over):
        return z, 0
    zc = z.copy()
    zc[over] *= (cap / norms[over])[:, None]
    return zc, int(over.sum())


def _backward(driver, S, xi_like, paths: PathBundle, cfg: SolverConfig):
    """Core loop on a generic driver ``driver(t, x, y, z)``; returns arrays and diagnostics."""
    grid = paths.grid
    n, d = paths.n_paths, paths.dim
    nt = len(grid)
    Y = np.empty((nt, n))
    Z = np.empty((nt, n, d))
    drv = np.empty((grid.n_steps, n))
    Y[-1] = xi_like
    iters = np.zeros(grid.n_steps, dtype=int)
    clipped = np.zeros(grid.n_steps, dtype=int)
    conds = np.empty(grid.n_steps)
    rho = (lambda y: truncate_rho(y, cfg.truncation_m)) if cfg.truncation_m else (lambda y: y)
    dt, dW, times = grid.dt, paths.dW, grid.times
    target0 = None
    for k in range(grid.n_steps - 1, -1, -1):
        proj = Projector(S[k], cfg.basis, step=k, dW=dW[k], dt=dt[k])
        conds[k] = proj.condition_number
        est = backward_step(proj, Y[k + 1], dW[k])
        z, clipped[k] = _clip_z(est.z, cfg.z_clip_quantile)
        t, x = times[k], S[k]
        a = est.y
        if cfg.scheme == "explicit":
            F = driver(t, x, rho(a), z)
            y = a + F * dt[k]
            iters[k] = 1
        else:
            y = a
            F = driver(t, x, rho(y), z)
            prev = math.inf
            grow = 0
            for it in range(cfg.picard_iters):
                y_new = a + F * dt[k]
                res = float(np.max(np.abs(y_new - y)))
                y = y_new
                F = driver(t, x, rho(y), z)
                iters[k] = it + 1
                if not math.isfinite(res):
                    break
                if res <= cfg.picard_tol:
                    break
                # plateaus from a path cycling across a jump of F in y are not divergence
                grow = grow + 1 if res > GROWTH_FACTOR * prev else 0
                if grow >= 3:
                    raise StepDivergenceError(f"Picard residual grew 3 times in a row at step {k}", step=k)
                prev = res
            y = a + F * dt[k]
        bad = ~np.isfinite(y)
        if np.any(bad):
            p = int(np.argmax(bad))
            raise SimulationBlowupError(f"non-finite Y on path {p} at step {k}", path=p, step=k)
        Y[k], Z[k], drv[k] = y, z, F
        if k == 0:
            target0 = est.target + F * dt[0]
    Z[-1] = Z[-2]
    diag = {"picard_iterations": iters, "clipped_z": clipped, "condition_numbers": conds,
            "max_picard_iterations": int(iters.max()), "total_clipped": int(clipped.sum())}
    return Y, Z, drv, target0, diag


def solve_bsde(spec: GeneratorSpec, terminal: TerminalCondition, paths: PathBundle,
               cfg: SolverConfig = SolverConfig()) -> BsdeSolution:
    """Backward regression solver for ``(F, xi)``.

    With ``precondition="u-transform"`` the quadratic part ``q(y)|z|^2`` of
    ``spec`` is absorbed: ``(Ftilde, u(xi))`` is solved with ``Ftilde`` from
    :func:`transform_generator` and mapped back by ``Y = u^{-1}(Ytilde)``,
    ``Z = Ztilde / u'(Y)``.
    """
    if cfg.check_structure:
        rep = validate_structure(spec, T=paths.grid.T, d=paths.dim)
        if not rep.passed:
            raise PreconditionError(f"generator fails structure checks: {rep.failed()}")
    S = terminal.state(paths)
    xi = terminal.evaluate_state(S[-1])
    if cfg.precondition == "u-transform" and spec.quadratic is not None:
        table = transform_table_for(spec.quadratic, xi, pad=10.0 + 5 * np.std(xi))
        Ft = transform_generator(spec.G, spec.quadratic, table)
        Yt, Zt, _, target0, diag = _backward(Ft, S, table(xi), paths, cfg)
        Y = invert_u(table, Yt)
        Y[-1] = xi
        up = table.deriv(Y)
        Z = Zt / up[..., None]
        diag["Ytilde"], diag["uprime"] = Yt, up
        times = paths.grid.times
        drv = np.stack([spec(times[k], S[k], Y[k], Z[k]) for k in range(paths.grid.n_steps)])
        se = batch_se(target0) / float(table.deriv(np.mean(Y[0])))
        scheme = f"{cfg.scheme}+u-transform"
    else:
        Y, Z, drv, target0, diag = _backward(spec, S, xi, paths, cfg)
        Y[-1] = xi
        se = batch_se(target0)
        scheme = cfg.scheme
    diag["target0"] = target0
    return BsdeSolution(paths.grid, Y, Z, xi, scheme, se_y0=se, drivers=drv, state=S, diagnostics=diag)


# --------------------------------------------------------------------------
# comparison

@dataclass
class BsdeComparison:
    min_difference: float
    tolerance: float
    se: float
    allowance: float
    passed: bool
    y0_difference: float
    worst_step: int
    raw_min_difference: float = 0.0


def _diff_se(a: BsdeSolution, b: BsdeSolution) -> float:
    return batch_se(b.diagnostics["target0"] - a.diagnostics["target0"])


def comparison_run(spec_a: GeneratorSpec, spec_b: GeneratorSpec, xi_a: TerminalCondition,
                   xi_b: TerminalCondition, paths: PathBundle, cfg: SolverConfig = SolverConfig(),
                   check_samples: int = 20000, trim: float = 0.0) -> BsdeComparison:
    """Solve ``(F_A, xi_A)`` and ``(F_B, xi_B)`` on shared noise and check ``Y_A <= Y_B``.

    Every entry must satisfy ``Y_B - Y_A >= -(3 SE + allowance)`` with SE
    the combined pointwise prediction standard error of both fits and
    the allowance how much the minimum difference moves when the same paths
    are observed on a grid twice as coarse. ``se`` in the report is the
    batch standard error of the time-0 difference.
    ``trim`` restricts the minimum as in :func:`qbsde.pure.support_mask`.
    """
    gap = dominates(spec_a, spec_b, check_samples, T=paths.grid.T, d=paths.dim)
    if gap < -1e-9:
        raise InvalidComparisonError(f"F_A <= F_B fails on samples (worst gap {gap:.3g})")
    rep = validate_structure(spec_a, check_samples, T=paths.grid.T, d=paths.dim, require_convex=True)
    if not rep.passed:
        raise InvalidComparisonError(f"F_A fails the convex structure checks: {rep.failed()}")
    S = xi_a.state(paths)
    ea, eb = xi_a.evaluate_state(S[-1]), xi_b.evaluate_state(S[-1])
    if np.any(ea > eb):
        raise InvalidComparisonError(f"xi_A <= xi_B fails on path {int(np.argmax(ea > eb))}")
    run_cfg = SolverConfig(**{**cfg.__dict__, "check_structure": False})

    def run(p):
        return solve_bsde(spec_a, xi_a, p, run_cfg), solve_bsde(spec_b, xi_b, p, run_cfg)

    a, b = run(paths)
    D = b.Y - a.Y
    mask = support_mask(S, trim)
    m = float(masked_min(D, mask).min())
    se = _diff_se(a, b)
    allowance = 0.0
    if paths.grid.n_steps % 2 == 0 and paths.grid.n_steps >= 4:
        ca, cb = run(coarsen(paths))
        allowance = abs(float(masked_min(cb.Y - ca.Y, support_mask(S[::2], trim)).min()) - m)
    worst, tol, step = pointwise_verdict(D, pair_se_surface(S, a, b, paths, cfg.basis), mask, allowance)
    return BsdeComparison(worst, tol, se, allowance, worst >= -tol, b.y0 - a.y0, step, m)


# --------------------------------------------------------------------------
# stability

@dataclass
class StabilityReport:
    p: float
    y_errors: np.ndarray          # E[sup |Y0 - Yn|^p]^{1/p}
    z_errors: np.ndarray          # E[(int |Z0 - Zn|^2)^{p/2}]^{1/p}
    terminal_sizes: np.ndarray    # E[|xi_n - xi_0|^p]^{1/p}
    driver_sizes: np.ndarray      # E[|int |F_n - F_0|(s, Y0, Z0) ds|^p]^{1/p}
    ratios: np.ndarray
    fitted_order: float
    bounded: bool


def stability_run(spec0: GeneratorSpec, terminal0: TerminalCondition, perturbations: list,
                  paths: PathBundle, p: float = 2.0, cfg: SolverConfig = SolverConfig(),
                  scales: list | None = None, ratio_bound: float = 1e3) -> StabilityReport:
    """Distance of perturbed solutions to the base solution versus the size of the perturbation.

    ``perturbations`` is a list of ``(spec_n, terminal_n)``; ``scales`` (for
    example ``1/n``) are used to fit the convergence order of the Y-error.
    """
    base = solve_bsde(spec0, terminal0, paths, cfg)
    dt = paths.grid.dt
    times = paths.grid.times
    ye, ze, ts, ds = [], [], [], []
    for spec_n, term_n in perturbations:
        sol = solve_bsde(spec_n, term_n, paths, cfg)
        dy = np.max(np.abs(sol.Y - base.Y), axis=0)
        dz = np.einsum("k,knd->n", dt, (sol.Z[:-1] - base.Z[:-1]) ** 2)
        ye.append(np.mean(dy**p) ** (1 / p))
        ze.append(np.mean(dz ** (p / 2)) ** (1 / p))
        ts.append(np.mean(np.abs(sol.xi - base.xi) ** p) ** (1 / p))
        dF = sum(np.abs(spec_n(times[k], base.state[k], base.Y[k], base.Z[k])
                        - spec0(times[k], base.state[k], base.Y[k], base.Z[k])) * dt[k]
                 for k in range(paths.grid.n_steps))
        ds.append(np.mean(np.abs(dF) ** p) ** (1 / p))
    ye, ze, ts, ds = map(np.array, (ye, ze, ts, ds))
    size = ts + ds
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(size > 0, (ye + ze) / size, np.where(ye + ze > 0, np.inf, 0.0))
    order = float("nan")
    if scales is not None and len(scales) >= 2 and np.all(ye > 0):
        order = float(np.polyfit(np.log(scales), np.log(ye), 1)[0])
    return StabilityReport(p, ye, ze, ts, ds, ratios, order, bool(np.all(ratios <= ratio_bound)))


# --------------------------------------------------------------------------
# double approximation

@dataclass
class ApproxReport:
    schedule: list
    y0: dict
    se: dict
    errors: dict
    monotone_n: bool
    monotone_k: bool
    monotone_violations: list
    cauchy_differences: list
    cauchy_ok: bool
    envelope_coverage: dict
    envelope_ok: bool
    log_envelope_constant: float
    tau_m_hits: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.monotone_n and self.monotone_k and self.cauchy_ok and self.envelope_ok and not self.errors


def truncated_terminal(terminal: TerminalCondition, n: float, k: float) -> TerminalCondition:
    """``xi^{n,k} = xi^+ ^ n - xi^- ^ k``."""
    g = terminal.g if terminal.kind != "constant" else (lambda x, v=terminal.value: np.full(np.shape(x), v))

    def gnk(x):
        v = g(x)
        return np.minimum(np.maximum(v, 0.0), n) - np.minimum(np.maximum(-v, 0.0), k)

    kind = "brownian" if terminal.kind == "constant" else terminal.kind
    return TerminalCondition(kind, gnk, model=terminal.model, p_integrability=terminal.p_integrability,
                             name=f"{terminal.name}^[{n},{k}]", kinks=terminal.kinks + (n, -k))


def envelope(spec: GeneratorSpec, terminal: TerminalCondition, S: np.ndarray, times: np.ndarray, p: float,
             basis: BasisSpec, log_c: float) -> np.ndarray:
    """``X_t = (c E[|xi|^p + |alpha|_T^p | F_t])^{1/p}`` with the conditional mean by regression."""
    xi = terminal.evaluate_state(S[-1])
    target = np.abs(xi) ** p + spec.alpha_integral(times)[-1] ** p
    X = np.empty((len(times), len(xi)))
    for k in range(len(times)):
        cond = Projector(S[k], basis).project(target) if k < len(times) - 1 else target
        with np.errstate(over="ignore"):
            X[k] = np.exp((log_c + np.log(np.maximum(cond, 1e-300))) / p)
    return X


DEFAULT_SCHEDULE = [(1, 1), (2, 1), (2, 2), (4, 2), (4, 4), (8, 4), (8, 8), (16, 16)]


def double_approximation_run(spec: GeneratorSpec, terminal: TerminalCondition, paths: PathBundle,
                             schedule=None, m_levels=(1.0, 2.0, 4.0), p: float = 2.0,
                             cfg: SolverConfig = SolverConfig(check_structure=False),
                             lattice: Lattice | None = None) -> ApproxReport:
    """Solve ``(F^{n,k}, xi^{n,k})`` along a schedule and check the approximation properties.

    (a) ``Y^{n,k}_0`` nondecreasing in ``n`` and nonincreasing in ``k``
    within 3 SE of the difference; (b) coverage of ``|Y| <= X`` over grid x
    paths (required >= 99%); (c) along the diagonal entries ``n = k`` the
    successive differences do not grow beyond their noise.
    """
    schedule = list(schedule or DEFAULT_SCHEDULE)
    times = paths.grid.times
    d = paths.dim
    if d != 1:
        raise PreconditionError("the approximation experiment is scalar in z")
    y0, se, targets, errors, sols = {}, {}, {}, {}, {}
    for n, k in schedule:
        try:
            Fnk = approximating_generator(spec, n, k, times, lattice)
            sol = solve_bsde(Fnk, truncated_terminal(terminal, n, k), paths, cfg)
        except QbsdeError as exc:  # collected, not fatal
            errors[(n, k)] = f"{type(exc).__name__}: {exc}"
            continue
        y0[(n, k)], se[(n, k)] = sol.y0, sol.se_y0
        targets[(n, k)] = sol.diagnostics["target0"]
        sols[(n, k)] = sol

    def diff_se(a, b):
        return batch_se(targets[b] - targets[a])

    violations = []
    mono_n = mono_k = True
    keys = list(y0)
    for a in keys:
        for b in keys:
            if a == b:
                continue
            if b[1] == a[1] and b[0] > a[0] and y0[b] < y0[a] - 3 * diff_se(a, b) - 1e-12:
                mono_n = False
                violations.append({"from": a, "to": b, "kind": "n", "change": y0[b] - y0[a]})
            if b[0] == a[0] and b[1] > a[1] and y0[b] > y0[a] + 3 * diff_se(a, b) + 1e-12:
                mono_k = False
                violations.append({"from": a, "to": b, "kind": "k", "change": y0[b] - y0[a]})
    diag = [key for key in keys if key[0] == key[1]]
    diffs = [(abs(y0[b] - y0[a]), diff_se(a, b)) for a, b in zip(diag[:-1], diag[1:])]
    cauchy_ok = all(diffs[j + 1][0] <= diffs[j][0] + 3 * max(diffs[j][1], diffs[j + 1][1]) + 1e-12
                    for j in range(len(diffs) - 1))
    c2 = second_estimate(paths.grid.T, math.exp(4.0 * spec.f.positive_mass), spec.beta, spec.gamma, p)
    coverage = {}
    if sols:
        S = next(iter(sols.values())).state
        X = envelope(spec, terminal, S, times, p, cfg.basis, c2.c)
        for key, sol in sols.items():
            coverage[key] = float(np.mean(np.abs(sol.Y) <= X))
    tau_hits = {}
    for key, sol in sols.items():
        run = np.abs(sol.Y[:-1]) + np.cumsum(np.abs(sol.drivers) * paths.grid.dt[:, None], axis=0)
        tau_hits[key] = {m: float(np.mean(np.any(run >= m, axis=0))) for m in m_levels}
    env_ok = bool(coverage) and min(coverage.values()) >= 0.99
    return ApproxReport(schedule, y0, se, errors, mono_n, mono_k, violations,
                        [dd for dd, _ in diffs], cauchy_ok, coverage, env_ok, c2.c, tau_hits)
