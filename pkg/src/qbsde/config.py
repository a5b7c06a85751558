"""Scenario files: schema, defaults, canonical form and object construction.

A scenario is a TOML document::

    name = "golden_pure"
    command = "solve-pure"
    seed = 7
    criteria = [2]

    [grid]
    T = 1.0
    steps = 100
    paths = 20000

    [coefficient]            # f of the purely quadratic equation
    family = "indicator"
    c = 0.5
    a = 1.0

    [terminal]
    family = "linear"

    [[generator]]            # summed driver terms
    family = "linear"
    b = -0.5

Sections missing from a file are filled from :data:`DEFAULTS`; the
canonical form is the fully populated document with sorted keys.
"""

from __future__ import annotations

import copy
import sys
from pathlib import Path

import tomli_w

from .errors import ConfigError, QbsdeError
from .generators import GeneratorSpec, generator_from_config
from .grid import SdeModel, TimeGrid, sample_brownian, sde_from_config
from .pure import TerminalCondition, terminal_from_config
from .regression import BasisSpec
from .solver import SolverConfig
from .transforms import IntegrableCoefficient, coefficient_from_config

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

COMMANDS = ("solve-pure", "solve-bsde", "compare", "stability", "approx", "monitors", "feynman-kac", "transforms")

DEFAULTS: dict = {
    "grid": {"T": 1.0, "steps": 50, "paths": 20000, "stream": 0},
    "solver": {"scheme": "implicit", "precondition": "none", "basis": "hermite", "degree": 5, "knots": 8,
               "picard_iters": 5, "picard_tol": 1e-10, "z_clip_quantile": 0.999, "truncation_m": 0.0,
               "max_condition": 1e10},
    "export": {"paths": 50},
    "checks": {"y0_tolerance": 5e-3, "path_tolerance": 5e-3, "bound_violation": 1e-12,
               "roundtrip_tolerance": 1e-8, "ito_ratio": 1.3, "local_time_rel": 0.10, "krylov_tight": 50.0,
               "min_order": 0.9, "envelope_coverage": 0.99, "fk_ratio": 1.2, "closed_form_tolerance": 1e-2,
               "use_golden": False, "golden_y0": 0.0, "use_expected": False, "expected_y0": 0.0,
               "path_check": False, "local_time_check": False, "krylov_tight_check": False},
    "transforms": {"resolution": 2001, "points": 10000, "include_v": True},
    "compare": {"pairs": 20, "mixed_fraction": 0.5, "trim": 0.005, "basis": "spline", "knots": 8},
    "stability": {"ns": [1, 2, 4, 8, 16], "p": 2.0},
    "approx": {"schedule": [[1, 1], [2, 1], [2, 2], [4, 2], [4, 4], [8, 8]], "p": 2.0,
               "m_levels": [1.0, 2.0, 4.0]},
    "monitors": {"p": [1.5, 2.0, 3.0], "lp": [1.5, 2.0, 4.0], "m_levels": [0.5, 1.0, 2.0],
                 "local_time_eps": 0.05, "halvings": 2},
    "pde": {"nx": 401, "nt": 200, "x_lo": -1.0, "x_hi": 1.0, "theta": 1.0, "boundary": "dirichlet",
            "z_scheme": "central", "t_points": [0.0, 0.5], "x_points": [-1.0, -0.5, 0.0, 0.5, 1.0],
            "mc_steps": 50, "refine": True, "closed_form": False, "closed_form_r": 0.0},
}

_TOP_KEYS = {"name": str, "command": str, "seed": int, "criteria": list, "description": str}
_FAMILY_SECTIONS = ("coefficient", "terminal", "sde")


def _type_ok(value, proto) -> bool:
    if isinstance(proto, bool):
        return isinstance(value, bool)
    if isinstance(proto, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(proto, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(proto, list):
        return isinstance(value, list)
    return isinstance(value, type(proto))


def _normalize(value, proto):
    if isinstance(proto, float) and not isinstance(proto, bool):
        return float(value)
    return value


def validate(doc: dict) -> dict:
    """Check ``doc`` against the schema and return its canonical, defaults-filled form.

    Raises
    ------
    ConfigError
        With ``key`` set to the dotted path of the offending entry.
    """
    if not isinstance(doc, dict):
        raise ConfigError("scenario must be a table")
    out: dict = {}
    for key in ("name", "command", "seed"):
        if key not in doc:
            raise ConfigError("required key missing", key=key)
    for key, value in doc.items():
        if key in _TOP_KEYS:
            if not isinstance(value, _TOP_KEYS[key]) or isinstance(value, bool):
                raise ConfigError(f"expected {_TOP_KEYS[key].__name__}", key=key)
            out[key] = value
        elif key in DEFAULTS:
            if not isinstance(value, dict):
                raise ConfigError("expected a table", key=key)
            for sub, v in value.items():
                if sub not in DEFAULTS[key]:
                    raise ConfigError("unknown key", key=f"{key}.{sub}")
                if not _type_ok(v, DEFAULTS[key][sub]):
                    raise ConfigError(f"expected {type(DEFAULTS[key][sub]).__name__}", key=f"{key}.{sub}")
        elif key in _FAMILY_SECTIONS:
            if not isinstance(value, dict) or not isinstance(value.get("family"), str):
                raise ConfigError("expected a table with a string 'family'", key=f"{key}.family")
        elif key == "generator":
            if not isinstance(value, list) or not all(isinstance(t, dict) for t in value):
                raise ConfigError("expected an array of tables", key="generator")
            for i, t in enumerate(value):
                if not isinstance(t.get("family"), str):
                    raise ConfigError("missing family", key=f"generator[{i}].family")
        else:
            raise ConfigError("unknown key", key=key)
    if out["command"] not in COMMANDS:
        raise ConfigError(f"unknown command {out['command']!r}", key="command")
    if not all(isinstance(c, int) and not isinstance(c, bool) for c in doc.get("criteria", [])):
        raise ConfigError("criteria must be integers", key="criteria")
    out.setdefault("criteria", [])
    out.setdefault("description", "")
    for sec, defaults in DEFAULTS.items():
        given = doc.get(sec, {})
        out[sec] = {k: _normalize(given.get(k, v), v) for k, v in defaults.items()}
    for sec in _FAMILY_SECTIONS:
        if sec in doc:
            out[sec] = copy.deepcopy(doc[sec])
    out["generator"] = copy.deepcopy(doc.get("generator", []))
    if out["seed"] < 0:
        raise ConfigError("seed must be nonnegative", key="seed")
    g = out["grid"]
    if g["steps"] < 1:
        raise ConfigError("need at least one step", key="grid.steps")
    if g["paths"] < 2:
        raise ConfigError("need at least two paths", key="grid.paths")
    if g["T"] <= 0:
        raise ConfigError("horizon must be positive", key="grid.T")
    _check_objects(out)
    return _sorted(out)


def _sorted(obj):
    if isinstance(obj, dict):
        return {k: _sorted(obj[k]) for k in sorted(obj)}
    if isinstance(obj, list):
        return [_sorted(v) for v in obj]
    return obj


def _check_objects(cfg: dict) -> None:
    """Build the mathematical objects once so that bad family parameters fail at load time."""
    for sec, build in (("coefficient", coefficient_from_config), ("sde", sde_from_config)):
        if sec in cfg:
            try:
                build(cfg[sec])
            except (QbsdeError, TypeError, ValueError) as exc:
                raise ConfigError(str(exc), key=f"{sec}.family") from exc
    try:
        generator_from_config(cfg["generator"])
    except (QbsdeError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc), key="generator") from exc
    if "terminal" in cfg:
        try:
            terminal_from_config(cfg["terminal"], model_of(cfg))
        except (QbsdeError, TypeError, ValueError) as exc:
            raise ConfigError(str(exc), key="terminal.family") from exc
    try:
        solver_config(cfg)
    except QbsdeError as exc:
        raise ConfigError(str(exc), key="solver") from exc


def loads(text: str) -> dict:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    return validate(doc)


def load(path) -> dict:
    return loads(Path(path).read_text())


def dumps(cfg: dict) -> str:
    """Canonical TOML text of a validated scenario."""
    return tomli_w.dumps(_sorted(cfg))


def apply_overrides(cfg: dict, seed: int | None = None, paths: int | None = None,
                    steps: int | None = None) -> dict:
    doc = copy.deepcopy(cfg)
    if seed is not None:
        doc["seed"] = seed
    if paths is not None:
        doc["grid"]["paths"] = paths
    if steps is not None:
        doc["grid"]["steps"] = steps
    return validate(doc)


# --------------------------------------------------------------------------
# object construction

def coefficient_of(cfg: dict) -> IntegrableCoefficient:
    return coefficient_from_config(cfg.get("coefficient", {"family": "zero"}))


def model_of(cfg: dict) -> SdeModel | None:
    return sde_from_config(cfg["sde"]) if "sde" in cfg else None


def terminal_of(cfg: dict) -> TerminalCondition:
    return terminal_from_config(cfg.get("terminal", {"family": "linear"}), model_of(cfg))


def generator_of(cfg: dict) -> GeneratorSpec:
    return generator_from_config(cfg["generator"])


def basis_of(section: dict) -> BasisSpec:
    return BasisSpec(degree=int(section.get("degree", 5)), family=section.get("basis", "hermite"),
                     max_condition=float(section.get("max_condition", 1e10)), knots=int(section.get("knots", 8)))


def solver_config(cfg: dict) -> SolverConfig:
    s = cfg["solver"]
    return SolverConfig(scheme=s["scheme"], picard_iters=int(s["picard_iters"]), picard_tol=float(s["picard_tol"]),
                        basis=basis_of(s), precondition=s["precondition"],
                        truncation_m=float(s["truncation_m"]) or None,
                        z_clip_quantile=float(s["z_clip_quantile"]) if s["z_clip_quantile"] < 1 else None)


def grid_of(cfg: dict, steps: int | None = None) -> TimeGrid:
    g = cfg["grid"]
    return TimeGrid.uniform(float(g["T"]), int(steps or g["steps"]))


def paths_of(cfg: dict, steps: int | None = None, stream: int | None = None):
    g = cfg["grid"]
    return sample_brownian(grid_of(cfg, steps), int(g["paths"]), seed=int(cfg["seed"]),
                           stream_id=int(g["stream"] if stream is None else stream))
