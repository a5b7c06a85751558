"""Randomised ordered pairs for comparison experiments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import QbsdeError
from .generators import GeneratorSpec, combine, constant_driver, convex_exp, linear, quadratic
from .grid import PathBundle
from .pure import TerminalCondition, brownian_terminal, compare_pure
from .regression import BasisSpec
from .solver import SolverConfig, comparison_run
from .transforms import IntegrableCoefficient, gaussian, indicator, piecewise_constant


def random_nonnegative_coefficient(rng: np.random.Generator) -> IntegrableCoefficient:
    kind = rng.integers(3)
    if kind == 0:
        return indicator(float(rng.uniform(0.1, 1.0)), float(rng.uniform(0.5, 2.0)))
    if kind == 1:
        return gaussian(float(rng.uniform(0.1, 1.0)), float(rng.uniform(0.3, 1.0)))
    a = float(rng.uniform(0.2, 1.0))
    return piecewise_constant([-2 * a, 0.0, a], [float(rng.uniform(0.1, 1.0)), float(rng.uniform(0.1, 1.0))])


_BASE_TERMINALS = ("linear", "abs", "sin", "tanh", "call")


def random_terminal_pair(rng: np.random.Generator):
    """``(xi, xi')`` of Brownian terminals with ``xi <= xi'`` pointwise."""
    fam = _BASE_TERMINALS[rng.integers(len(_BASE_TERMINALS))]
    a = float(rng.uniform(-1.0, 1.0))
    strike = float(rng.uniform(-0.5, 0.5))
    base = {
        "linear": lambda x: a * x,
        "abs": lambda x: a * np.abs(x),
        "sin": lambda x: a * np.sin(x),
        "tanh": lambda x: a * np.tanh(x),
        "call": lambda x: np.maximum(x - strike, 0.0),
    }[fam]
    kinks = {"abs": (0.0,), "call": (strike,)}.get(fam, ())
    shift = 0.0 if rng.random() < 0.25 else float(rng.uniform(0.0, 0.3))
    extra = float(rng.uniform(0.0, 0.3)) if rng.random() < 0.5 else 0.0
    k2 = float(rng.uniform(-0.5, 0.5))
    xi = brownian_terminal(base, fam, {"a": a}, kinks)
    xi_p = brownian_terminal(lambda x: base(x) + shift + extra * np.maximum(x - k2, 0.0), f"{fam}+",
                             {"a": a, "shift": shift, "extra": extra}, kinks + ((k2,) if extra else ()))
    return xi, xi_p


@dataclass
class PairOutcome:
    index: int
    kind: str
    description: str
    min_difference: float
    tolerance: float
    passed: bool
    error: str | None = None


@dataclass
class PairBatch:
    outcomes: list = field(default_factory=list)

    @property
    def n_pass(self) -> int:
        return sum(o.passed for o in self.outcomes)

    @property
    def hard_violations(self) -> list:
        return [o for o in self.outcomes if not o.passed]

    @property
    def passed(self) -> bool:
        return bool(self.outcomes) and not self.hard_violations


def random_pure_pair(rng: np.random.Generator):
    h = random_nonnegative_coefficient(rng)
    k1, k2 = np.sort(rng.uniform(-1.0, 1.0, 2))
    return h.scaled(float(k1)), h.scaled(float(k2))


def random_mixed_pair(rng: np.random.Generator):
    """``F_A`` linear plus a convex term; ``F_B = F_A + delta + q(y)|z|^2`` with ``q >= 0``."""
    A = combine(linear(float(rng.uniform(-0.3, 0.3)), float(rng.uniform(-1.0, 0.5)),
                       float(rng.uniform(-0.5, 0.5))),
                convex_exp(float(rng.uniform(0.0, 0.8)), float(rng.uniform(0.5, 2.0))))
    delta = 0.0 if rng.random() < 0.3 else float(rng.uniform(0.0, 0.2))
    q = random_nonnegative_coefficient(rng).scaled(float(rng.uniform(0.2, 1.0)))
    B = combine(A, constant_driver(delta), quadratic(q))
    return A, B


def comparison_batch(n_pairs: int, paths: PathBundle, seed: int = 0, mixed_fraction: float = 0.5,
                     basis: BasisSpec = BasisSpec(), trim: float = 0.0) -> PairBatch:
    """Run ``n_pairs`` random ordered comparisons on shared noise."""
    rng = np.random.default_rng(seed)
    batch = PairBatch()
    cfg = SolverConfig(basis=basis)
    for i in range(n_pairs):
        mixed = rng.random() < mixed_fraction
        xi, xi_p = random_terminal_pair(rng)
        try:
            if mixed:
                A, B = random_mixed_pair(rng)
                rep = comparison_run(A, B, xi, xi_p, paths, cfg, trim=trim)
                desc = f"{A.name} | {B.name} | {xi.name}"
            else:
                f, g = random_pure_pair(rng)
                rep = compare_pure(f, g, xi, xi_p, paths, basis, trim=trim)
                desc = f"{f.name} | {g.name} | {xi.name}"
            batch.outcomes.append(PairOutcome(i, "mixed" if mixed else "pure", desc, rep.min_difference,
                                              rep.tolerance, rep.passed))
        except QbsdeError as exc:
            batch.outcomes.append(PairOutcome(i, "mixed" if mixed else "pure", "", float("nan"), float("nan"),
                                              False, f"{type(exc).__name__}: {exc}"))
    return batch
