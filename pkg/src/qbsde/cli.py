"""Command-line entry point: run scenarios, write artifacts, report PASS/FAIL.

Exit status is 0 when every asserted check passes, 1 when a check fails
and 2 for usage or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from . import config as C
from .errors import ConfigError, QbsdeError
from .experiments import comparison_batch
from .generators import GeneratorSpec, quadratic
from .grid import TimeGrid, brownian_model
from .monitors import (builtin_psis, estimate_local_time, ito_p_residual, krylov_check, lp_moment_report,
                       null_set_occupation)
from .pde import McConfig, feynman_kac_compare, padded_grid
from .pure import BsdeSolution, coarsen, solve_pure_exact, solve_pure_mc
from .regression import BasisSpec
from .solver import double_approximation_run, solve_bsde, stability_run
from .transforms import build_u, build_v, invert_u

SUBCOMMANDS = C.COMMANDS + ("reproduce",)


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    threshold: float
    criterion: int | None = None


@dataclass
class ScenarioResult:
    name: str
    command: str
    checks: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)
    values: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def passed(self) -> bool:
        return self.error is None and all(c.passed for c in self.checks)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path: Path, header: list, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


# --------------------------------------------------------------------------
# scenario helpers shared with the acceptance suite

def monitor_spec(cfg: dict) -> GeneratorSpec:
    """Generator of a scenario; a bare coefficient means the purely quadratic driver."""
    if cfg["generator"]:
        return C.generator_of(cfg)
    return quadratic(C.coefficient_of(cfg))


def uses_pure_solver(cfg: dict) -> bool:
    return cfg["command"] == "solve-pure" or (not cfg["generator"] and "coefficient" in cfg)


def scenario_solution(cfg: dict, paths=None) -> BsdeSolution | None:
    """The main BSDE solution of a scenario (``None`` for comparison and transform scenarios)."""
    if cfg["command"] in ("compare", "transforms"):
        return None
    paths = paths if paths is not None else C.paths_of(cfg)
    term = C.terminal_of(cfg)
    if uses_pure_solver(cfg):
        return solve_pure_mc(C.coefficient_of(cfg), term, paths, C.basis_of(cfg["solver"]))
    return solve_bsde(C.generator_of(cfg), term, paths, C.solver_config(cfg))


# --------------------------------------------------------------------------
# runners

def _run_transforms(cfg, out: Path, res: ScenarioResult):
    f = C.coefficient_of(cfg)
    tr, ck = cfg["transforms"], cfg["checks"]
    t = build_u(f, resolution=int(tr["resolution"]))
    t.to_csv(out / "u_table.csv")
    res.artifacts.append("u_table.csv")
    if tr["include_v"]:
        build_v(f, resolution=int(tr["resolution"])).to_csv(out / "v_table.csv")
        res.artifacts.append("v_table.csv")
    R = f.radius + 5.0
    x = np.random.default_rng(cfg["seed"]).uniform(-R, R, int(tr["points"]))
    u, du = t.evaluate(x)
    M = t.mass_constant
    viol = max(0.0, float(np.max(np.abs(x) / M - np.abs(u))), float(np.max(np.abs(u) - M * np.abs(x))),
               float(np.max(1.0 / M - du)), float(np.max(du - M)))
    rt = float(np.max(np.abs(invert_u(t, u) - x)))
    res.checks.append(Check("transform_bounds", viol <= ck["bound_violation"], viol, ck["bound_violation"], 1))
    res.checks.append(Check("roundtrip", rt <= ck["roundtrip_tolerance"], rt, ck["roundtrip_tolerance"], 1))
    res.values.update({"M": M, "nodes": len(t.nodes)})


def _write_solution(sol: BsdeSolution, cfg, out: Path, res: ScenarioResult, name="solution.csv"):
    sol.to_csv(out / name, int(cfg["export"]["paths"]))
    res.artifacts.append(name)
    res.values.update({k: v for k, v in sol.summary().items() if not isinstance(v, str)})


def _run_solve_pure(cfg, out, res):
    ck = cfg["checks"]
    f, term = C.coefficient_of(cfg), C.terminal_of(cfg)
    paths = C.paths_of(cfg)
    sol = solve_pure_mc(f, term, paths, C.basis_of(cfg["solver"]))
    _write_solution(sol, cfg, out, res)
    T = paths.grid.T
    oracle = float(solve_pure_exact(f, term, TimeGrid(np.array([0.0, T])), np.array([0.0])).Y[0, 0])
    res.values["oracle_y0"] = oracle
    if ck["use_golden"]:
        e = abs(oracle - ck["golden_y0"])
        res.checks.append(Check("oracle_vs_golden", e <= 1e-9, e, 1e-9, 2))
    err = abs(sol.y0 - oracle)
    tol = 3 * sol.se_y0 + ck["y0_tolerance"]
    res.checks.append(Check("y0_vs_oracle", err <= tol, err, tol, 2))
    if ck["path_check"]:
        W = paths.brownian()[:, :, 0]
        lo, hi = float(W.min()) - 0.1, float(W.max()) + 0.1
        xs = np.linspace(lo, hi, 401)
        ex = solve_pure_exact(f, term, paths.grid, xs)
        worst = max(float(np.max(np.abs(sol.Y[k] - np.interp(W[k], xs, ex.Y[k])))) for k in range(len(paths.grid)))
        res.checks.append(Check("paths_vs_oracle", worst <= ck["path_tolerance"], worst, ck["path_tolerance"], 2))


def _run_solve_bsde(cfg, out, res):
    ck = cfg["checks"]
    sol = scenario_solution(cfg)
    _write_solution(sol, cfg, out, res)
    finite = bool(np.all(np.isfinite(sol.Y)))
    res.checks.append(Check("finite", finite, float(finite), 1.0, None))
    if ck["use_expected"]:
        err = abs(sol.y0 - ck["expected_y0"])
        tol = 3 * sol.se_y0 + ck["y0_tolerance"]
        res.checks.append(Check("y0_vs_expected", err <= tol, err, tol, None))


def _run_compare(cfg, out, res):
    cp = cfg["compare"]
    paths = C.paths_of(cfg)
    basis = BasisSpec(degree=cfg["solver"]["degree"], family=cp["basis"], knots=int(cp["knots"]))
    batch = comparison_batch(int(cp["pairs"]), paths, seed=cfg["seed"], mixed_fraction=cp["mixed_fraction"],
                             basis=basis, trim=cp["trim"])
    write_csv(out / "pairs.csv", ["index", "kind", "min_difference", "tolerance", "passed", "description", "error"],
              [(o.index, o.kind, o.min_difference, o.tolerance, o.passed, o.description, o.error or "")
               for o in batch.outcomes])
    res.artifacts.append("pairs.csv")
    nv = len(batch.hard_violations)
    res.checks.append(Check("comparison_violations", nv == 0, nv, 0, 3))
    res.values.update({"pairs": len(batch.outcomes), "passed_pairs": batch.n_pass})


def _run_stability(cfg, out, res):
    st, ck = cfg["stability"], cfg["checks"]
    spec, term = C.generator_of(cfg), C.terminal_of(cfg)
    ns = [int(n) for n in st["ns"]]
    pert = [(spec, term.shifted(1.0 / n)) for n in ns]
    rep = stability_run(spec, term, pert, C.paths_of(cfg), float(st["p"]), C.solver_config(cfg),
                        scales=[1.0 / n for n in ns])
    write_csv(out / "stability.csv", ["n", "y_error", "z_error", "terminal_size", "driver_size", "ratio"],
              zip(ns, rep.y_errors, rep.z_errors, rep.terminal_sizes, rep.driver_sizes, rep.ratios))
    res.artifacts.append("stability.csv")
    res.checks.append(Check("fitted_order", rep.fitted_order >= ck["min_order"], rep.fitted_order,
                            ck["min_order"], 9))
    res.checks.append(Check("bounded_ratio", rep.bounded, float(np.max(rep.ratios)), 1e3, 9))


def _run_approx(cfg, out, res):
    ap, ck = cfg["approx"], cfg["checks"]
    cfg_s = C.solver_config(cfg)
    cfg_s = type(cfg_s)(**{**cfg_s.__dict__, "check_structure": False})
    rep = double_approximation_run(C.generator_of(cfg), C.terminal_of(cfg), C.paths_of(cfg),
                                   [tuple(int(v) for v in e) for e in ap["schedule"]],
                                   tuple(ap["m_levels"]), float(ap["p"]), cfg_s)
    rows = [(n, k, rep.y0[(n, k)], rep.se[(n, k)], rep.envelope_coverage.get((n, k), float("nan")))
            for (n, k) in rep.y0]
    write_csv(out / "approx.csv", ["n", "k", "y0", "se", "envelope_coverage"], rows)
    res.artifacts.append("approx.csv")
    cov = min(rep.envelope_coverage.values()) if rep.envelope_coverage else 0.0
    res.checks += [Check("monotone_in_n", rep.monotone_n, len(rep.monotone_violations), 0, 8),
                   Check("monotone_in_k", rep.monotone_k, len(rep.monotone_violations), 0, 8),
                   Check("envelope_coverage", cov >= ck["envelope_coverage"], cov, ck["envelope_coverage"], 8),
                   Check("cauchy", rep.cauchy_ok, rep.cauchy_differences[-1] if rep.cauchy_differences else 0.0,
                         0.0, 8),
                   Check("no_errors", not rep.errors, len(rep.errors), 0, 8)]
    res.values["log_envelope_constant"] = rep.log_envelope_constant


def _ito_levels(cfg, halvings):
    fine = C.paths_of(cfg)
    levels = [coarsen(fine, 2**j) for j in range(halvings, 0, -1)] + [fine]
    return [scenario_solution(cfg, P) for P in levels]


def _log_ratio(lhs: float, rhs: float) -> float:
    """``log(lhs / rhs)``, compared against a log-space constant."""
    if lhs <= 0:
        return -math.inf
    return math.log(lhs) - math.log(rhs) if rhs > 0 else math.inf


def _run_monitors(cfg, out, res):
    mo, ck = cfg["monitors"], cfg["checks"]
    spec = monitor_spec(cfg)
    sols = _ito_levels(cfg, int(mo["halvings"]))
    sol = sols[-1]
    _write_solution(sol, cfg, out, res)
    krows, worst_tight = [], math.inf
    for psi in builtin_psis(spec.f if spec.f.total_abs_mass > 0 else None):
        for m in mo["m_levels"]:
            r = krylov_check(sol, spec, psi, float(m))
            krows.append((r.psi, r.m, r.lhs, r.rhs, r.se, r.tau_m_hits, r.passed))
            worst_tight = min(worst_tight, r.tightness)
    write_csv(out / "krylov.csv", ["psi", "m", "lhs", "rhs", "se", "tau_m_hits", "passed"], krows)
    res.artifacts.append("krylov.csv")
    nk = sum(not r[-1] for r in krows)
    res.checks.append(Check("krylov", nk == 0, nk, 0, 4))
    if ck["krylov_tight_check"]:
        res.checks.append(Check("krylov_tightness", worst_tight <= ck["krylov_tight"], worst_tight,
                                ck["krylov_tight"], 4))
    irows = []
    for p in mo["p"]:
        meds = [ito_p_residual(s, float(p)).median_abs for s in sols]
        ratios = [a / b if b > 0 else math.inf for a, b in zip(meds[:-1], meds[1:])]
        irows.append([p] + meds + ratios)
        if max(meds) == 0.0:
            res.checks.append(Check(f"ito_p{p:g}_exact_zero", True, 0.0, 0.0, 5))
            continue
        worst = min(ratios)
        res.checks.append(Check(f"ito_p{p:g}", worst >= ck["ito_ratio"], worst, ck["ito_ratio"], 5))
    nlev = len(sols)
    write_csv(out / "ito.csv", ["p"] + [f"median_{j}" for j in range(nlev)] + [f"ratio_{j}" for j in range(nlev - 1)],
              irows)
    res.artifacts.append("ito.csv")
    if ck["local_time_check"]:
        L = float(estimate_local_time(sol, 0.0, float(mo["local_time_eps"])).mean())
        exact = math.sqrt(2 * sol.grid.T / math.pi)
        rel = abs(L / exact - 1)
        res.checks.append(Check("local_time", rel <= ck["local_time_rel"], rel, ck["local_time_rel"], 6))
        res.values["local_time_mean"] = L
    lrows = []
    for p in mo["lp"]:
        r = lp_moment_report(sol, spec, float(p))
        lrows.append((p, r.ystar_p, r.z_p, r.f_p, r.xi_alpha_p, r.y_alpha_p, r.log_c_first,
                      r.log_c_second if r.log_c_second is not None else float("nan"), r.first_holds,
                      r.second_holds if r.second_holds is not None else True))
        res.checks.append(Check(f"apriori_first_p{p:g}", r.first_holds, _log_ratio(r.z_p + r.f_p, r.y_alpha_p),
                                r.log_c_first, 7))
        if r.second_holds is not None:
            res.checks.append(Check(f"apriori_second_p{p:g}", r.second_holds,
                                    _log_ratio(r.ystar_p + r.z_p + r.f_p, r.xi_alpha_p), r.log_c_second, 7))
    write_csv(out / "moments.csv", ["p", "ystar_p", "z_p", "f_p", "xi_alpha_p", "y_alpha_p", "log_c_first",
                                    "log_c_second", "first_holds", "second_holds"], lrows)
    res.artifacts.append("moments.csv")
    ns = null_set_occupation(sol, (0.0,))
    res.checks.append(Check("null_set_occupation", ns.exact_hits == 0.0 and ns.shrinking, ns.exact_hits, 0.0, None))


def _run_feynman_kac(cfg, out, res):
    pd_, ck = cfg["pde"], cfg["checks"]
    model = C.model_of(cfg) or brownian_model()
    spec = C.generator_of(cfg)
    term = C.terminal_of(cfg)
    T = float(cfg["grid"]["T"])
    grid = padded_grid(model, T, pd_["x_lo"], pd_["x_hi"], int(pd_["nx"]), int(pd_["nt"]),
                       theta=float(pd_["theta"]), boundary=pd_["boundary"], z_scheme=pd_["z_scheme"])
    mc = McConfig(n_paths=int(cfg["grid"]["paths"]), n_steps=int(pd_["mc_steps"]), seed=int(cfg["seed"]),
                  t_points=tuple(pd_["t_points"]), x_points=tuple(pd_["x_points"]), solver=C.solver_config(cfg),
                  refine=bool(pd_["refine"]))
    rep = feynman_kac_compare(model, spec, term.g, grid, mc)
    rows = []
    for lvl_name, lvl in (("coarse", rep.coarse), ("fine", rep.fine)):
        if lvl is None:
            continue
        rows += [(lvl_name, t0, x0, u, y, s) for (t0, x0), u, y, s in zip(lvl.points, lvl.u_pde, lvl.y_mc, lvl.se)]
    write_csv(out / "feynman_kac.csv", ["level", "t", "x", "u_pde", "y_mc", "se"], rows)
    res.artifacts.append("feynman_kac.csv")
    res.checks.append(Check("fk_discrepancy", rep.passed, rep.coarse.max_abs, rep.tolerance, 10))
    if rep.fine is not None:
        ratio = rep.refinement_ratio
        res.checks.append(Check("fk_refinement", ratio >= ck["fk_ratio"], ratio, ck["fk_ratio"], 10))
    if pd_["closed_form"]:
        tol = ck["closed_form_tolerance"]
        res.checks.append(Check("fk_linear_max", rep.coarse.max_abs <= tol, rep.coarse.max_abs, tol, 10))
        r = float(pd_["closed_form_r"])
        exact = np.array([math.exp(-r * (T - t0)) * x0 for t0, x0 in rep.coarse.points])
        for side, vals in (("pde", rep.coarse.u_pde), ("mc", rep.coarse.y_mc)):
            e = float(np.max(np.abs(vals - exact)))
            tol = ck["closed_form_tolerance"]
            res.checks.append(Check(f"closed_form_{side}", e <= tol, e, tol, 10))


_RUNNERS = {"transforms": _run_transforms, "solve-pure": _run_solve_pure, "solve-bsde": _run_solve_bsde,
            "compare": _run_compare, "stability": _run_stability, "approx": _run_approx,
            "monitors": _run_monitors, "feynman-kac": _run_feynman_kac}


def run_scenario(cfg: dict, out_root) -> ScenarioResult:
    """Run one validated scenario into ``out_root/<name>``; errors become a failed result."""
    out = Path(out_root) / cfg["name"]
    out.mkdir(parents=True, exist_ok=True)
    res = ScenarioResult(cfg["name"], cfg["command"])
    try:
        _RUNNERS[cfg["command"]](cfg, out, res)
    except QbsdeError as exc:
        res.error = f"{type(exc).__name__}: {exc}"
    (out / "scenario.toml").write_text(C.dumps(cfg))
    summary = {"version": __version__, "defaults": C.DEFAULTS, "scenario": cfg, "passed": res.passed,
               "error": res.error, "checks": [asdict(c) for c in res.checks], "values": res.values,
               "artifacts": res.artifacts}
    (out / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    return res


def _summary_line(res: ScenarioResult, out_root) -> str:
    status = "PASS" if res.passed else "FAIL"
    n_ok = sum(c.passed for c in res.checks)
    extra = f" [{res.error}]" if res.error else ""
    return f"{res.name:<28} {res.command:<12} {status} ({n_ok}/{len(res.checks)} checks) -> " \
           f"{Path(out_root) / res.name / 'summary.json'}{extra}"


# --------------------------------------------------------------------------
# manifests

@dataclass
class AggregateReport:
    results: list
    rows: list

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)


def shipped_manifest() -> Path:
    return Path(str(resources.files("qbsde") / "scenarios" / "manifest.toml"))


def load_manifest(path) -> list:
    path = Path(path)
    doc = C.tomllib.loads(path.read_text())
    files = doc.get("scenarios", [])
    if not isinstance(files, list) or not all(isinstance(f, str) for f in files):
        raise ConfigError("expected a list of file names", key="scenarios")
    cfgs = [C.load(path.parent / f) for f in files]
    names = [c["name"] for c in cfgs]
    dup = {n for n in names if names.count(n) > 1}
    if dup:
        raise ConfigError(f"duplicate scenario names {sorted(dup)}", key="scenarios")
    return cfgs


def _run_pair(args):
    cfg, out_root = args
    return run_scenario(cfg, out_root)


def run_many(cfgs: list, out_root, parallel: int = 1) -> list:
    jobs = [(c, str(out_root)) for c in cfgs]
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as ex:
            return list(ex.map(_run_pair, jobs))
    return [_run_pair(j) for j in jobs]


def reproduce_all(manifest=None, out_root="qbsde-out", parallel: int = 1, overrides: dict | None = None,
                  echo=None) -> AggregateReport:
    """Run every scenario of a manifest and write ``acceptance.csv`` mapping checks to criteria."""
    cfgs = load_manifest(manifest or shipped_manifest())
    if overrides:
        cfgs = [C.apply_overrides(c, **overrides) for c in cfgs]
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    results = run_many(cfgs, out_root, parallel)
    rows = []
    for r in results:
        if echo:
            echo(_summary_line(r, out_root))
        if r.error is not None:
            rows.append((r.name, r.command, "", "error", "FAIL", float("nan"), float("nan")))
        for c in r.checks:
            rows.append((r.name, r.command, "" if c.criterion is None else c.criterion, c.name,
                         "PASS" if c.passed else "FAIL", c.value, c.threshold))
    write_csv(out_root / "acceptance.csv", ["scenario", "command", "criterion", "check", "status", "value",
                                            "threshold"], rows)
    return AggregateReport(results, rows)


# --------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qbsde", description="Quadratic BSDE solvers, monitors and checks.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, help=f"run a {name} scenario" if name != "reproduce" else "run a manifest")
        sp.add_argument("--config", help="scenario TOML (manifest TOML for reproduce)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--paths", type=int)
        sp.add_argument("--steps", type=int)
        sp.add_argument("--out", default="qbsde-out", help="output directory")
        sp.add_argument("--parallel", type=int, default=1, help="concurrent scenarios (reproduce)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {k: getattr(args, k) for k in ("seed", "paths", "steps") if getattr(args, k) is not None}
    try:
        if args.command == "reproduce":
            rep = reproduce_all(args.config, args.out, args.parallel, overrides, echo=print)
            status = "PASS" if rep.passed else "FAIL"
            print(f"acceptance table: {Path(args.out) / 'acceptance.csv'} ({status})")
            return 0 if rep.passed else 1
        if args.config:
            cfg = C.load(args.config)
        else:
            cfg = {"name": args.command, "command": args.command, "seed": 0}
        doc = dict(cfg)
        doc["command"] = args.command
        cfg = C.validate(doc)
        if overrides:
            cfg = C.apply_overrides(cfg, **overrides)
    except ConfigError as exc:
        print(f"qbsde: config error: {exc}", file=sys.stderr)
        return 2
    res = run_scenario(cfg, args.out)
    print(_summary_line(res, args.out))
    for c in res.checks:
        print(f"  {'PASS' if c.passed else 'FAIL'} {c.name}: {_fmt(c.value)} (threshold {_fmt(c.threshold)})")
    return 0 if res.passed else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
