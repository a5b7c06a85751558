"""Generators F = F1 + F2 with their structure constants.

Rules have the signature ``F(t, x, y, z)`` with ``y`` of shape ``(n,)``,
``z`` of shape ``(n, d)`` and ``x`` the forward state ``(n, m)`` or
``None``; they return ``(n,)``. The structure data (alpha, beta, gamma, phi,
f) feed the sampled validators and the a priori constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import PreconditionError
from .transforms import (IntegrableCoefficient, TransformTable, build_u, coefficient_from_config,
                         invert_u, zero)

VALIDATION_TOL = 1e-9


def _zero_rule(t, x, y, z):
    return np.zeros_like(y)


def _sq(z):
    return np.einsum("nd,nd->n", z, z)


def _norm(z):
    return np.sqrt(_sq(z))


@dataclass
class GeneratorSpec:
    """``F = F1 + F2`` with the constants of the growth/monotonicity conditions.

    Attributes
    ----------
    alpha : float or callable
        Deterministic ``alpha_t``; a callable receives ``t``.
    f : IntegrableCoefficient
        Structure coefficient, always used as ``f(|y|)``.
    quadratic : IntegrableCoefficient or None
        If set, ``F = G + quadratic(y) |z|^2`` with ``G = F - quadratic(y)|z|^2``
        available as :meth:`G`; this is what the u-transform absorbs.
    """

    F1: Callable = _zero_rule
    F2: Callable = _zero_rule
    alpha: float | Callable = 0.0
    beta1: float = 0.0
    beta2: float = 0.0
    gamma1: float = 0.0
    gamma2: float = 0.0
    phi: Callable = field(default=lambda r: np.zeros_like(r))
    f: IntegrableCoefficient = field(default_factory=zero)
    convex_F2: bool = False
    quadratic: IntegrableCoefficient | None = None
    autonomous: bool = True
    name: str = "custom"
    params: list = field(default_factory=list)

    def __call__(self, t, x, y, z):
        return self.F1(t, x, y, z) + self.F2(t, x, y, z)

    def G(self, t, x, y, z):
        """Generator without its absorbed quadratic part."""
        out = self(t, x, y, z)
        if self.quadratic is not None:
            out = out - self.quadratic(y) * _sq(z)
        return out

    @property
    def beta(self) -> float:
        return self.beta1 + self.beta2

    @property
    def gamma(self) -> float:
        return self.gamma1 + self.gamma2

    def alpha_at(self, t) -> float:
        return float(self.alpha(t)) if callable(self.alpha) else float(self.alpha)

    def alpha_integral(self, times: np.ndarray) -> np.ndarray:
        """``|alpha|_t = int_0^t alpha_s ds`` on ``times`` (trapezoid for callables)."""
        times = np.asarray(times, dtype=float)
        if not callable(self.alpha):
            return float(self.alpha) * (times - times[0])
        a = np.array([self.alpha_at(t) for t in times])
        out = np.zeros_like(times)
        out[1:] = np.cumsum(0.5 * (a[1:] + a[:-1]) * np.diff(times))
        return out

    def __add__(self, other: "GeneratorSpec") -> "GeneratorSpec":
        return combine(self, other)


def combine(*parts: GeneratorSpec) -> GeneratorSpec:
    """Sum of generators; structure constants add up."""
    quads = [p.quadratic for p in parts if p.quadratic is not None]
    if len(quads) > 1:
        raise PreconditionError("at most one absorbed quadratic part is supported")
    fs = [p.f for p in parts if p.f.total_abs_mass > 0]
    if len(fs) > 1:
        raise PreconditionError("at most one part may carry a structure coefficient f")
    F1s = [p.F1 for p in parts]
    F2s = [p.F2 for p in parts]
    phis = [p.phi for p in parts]
    alphas = [p.alpha for p in parts]
    has_F2 = [p for p in parts if p.F2 is not _zero_rule]

    def alpha(t):
        return sum(float(a(t)) if callable(a) else float(a) for a in alphas)

    const_alpha = all(not callable(a) for a in alphas)
    return GeneratorSpec(
        F1=lambda t, x, y, z: sum(F(t, x, y, z) for F in F1s),
        F2=(lambda t, x, y, z: sum(F(t, x, y, z) for F in F2s)) if has_F2 else _zero_rule,
        alpha=sum(float(a) for a in alphas) if const_alpha else alpha,
        beta1=sum(p.beta1 for p in parts),
        beta2=sum(p.beta2 for p in parts),
        gamma1=sum(p.gamma1 for p in parts),
        gamma2=sum(p.gamma2 for p in parts),
        phi=lambda r: sum(ph(r) for ph in phis),
        f=fs[0] if fs else zero(),
        convex_F2=all(p.convex_F2 for p in has_F2),
        quadratic=quads[0] if quads else None,
        autonomous=all(p.autonomous for p in parts),
        name="+".join(p.name for p in parts),
        params=[q for p in parts for q in p.params],
    )


# --------------------------------------------------------------------------
# built-in families

def constant_driver(a: float) -> GeneratorSpec:
    return GeneratorSpec(F1=lambda t, x, y, z: np.full_like(y, a), alpha=abs(a), name=f"const({a:g})",
                         params=[{"family": "constant", "a": a}])


def linear(a: float = 0.0, b: float = 0.0, c=0.0) -> GeneratorSpec:
    """``F1 = a + b y + c . z``."""
    c_vec = np.atleast_1d(np.asarray(c, dtype=float))

    def F1(t, x, y, z):
        return a + b * y + z @ np.broadcast_to(c_vec, (z.shape[1],))

    return GeneratorSpec(F1=F1, alpha=abs(a), beta1=max(b, 0.0), gamma1=float(np.linalg.norm(c_vec)),
                         phi=lambda r: abs(b) * np.asarray(r), name="linear",
                         params=[{"family": "linear", "a": a, "b": b, "c": c_vec.tolist()}])


def monotone_polynomial(kappa: float = 1.0, power: int = 3, a: float = 0.0) -> GeneratorSpec:
    """``F1 = a - kappa y |y|^(power-1)``: decreasing in ``y``, superlinear growth."""
    if kappa < 0 or power < 1:
        raise PreconditionError("monotone polynomial needs kappa >= 0 and power >= 1")
    return GeneratorSpec(F1=lambda t, x, y, z: a - kappa * y * np.abs(y) ** (power - 1), alpha=abs(a),
                         phi=lambda r: kappa * np.asarray(r) ** power, name="monotone_poly",
                         params=[{"family": "monotone_polynomial", "kappa": kappa, "power": power, "a": a}])


def z_lipschitz(gamma: float = 1.0, a: float = 0.0) -> GeneratorSpec:
    """``F1 = a + gamma |z|``."""
    return GeneratorSpec(F1=lambda t, x, y, z: a + gamma * _norm(z), alpha=abs(a), gamma1=abs(gamma),
                         name="zlip", params=[{"family": "z_lipschitz", "gamma": gamma, "a": a}])


def _structure_of(q: IntegrableCoefficient) -> IntegrableCoefficient:
    """Smallest even majorant ``r -> max(|q(r)|, |q(-r)|)`` of ``|q|``."""
    qf = q.func
    symmetric = q.params.get("family") in ("zero", "indicator", "gaussian")
    return IntegrableCoefficient(
        func=lambda x: np.maximum(np.abs(qf(np.asarray(x))), np.abs(qf(-np.asarray(x)))),
        support_radius=q.support_radius,
        total_abs_mass=q.total_abs_mass if symmetric else 2 * q.total_abs_mass,
        positive_mass=q.positive_mass if symmetric else q.total_abs_mass,
        compact_bound=q.compact_bound,
        breakpoints=tuple(sorted({abs(b) for b in q.breakpoints} | {-abs(b) for b in q.breakpoints})),
        effective_radius=q.effective_radius,
        name=f"|{q.name}|",
        params={"structure_of": q.params},
    )


def quadratic(q: IntegrableCoefficient) -> GeneratorSpec:
    """``F2 = q(y) |z|^2`` with structure coefficient the even majorant of ``|q|``."""
    return GeneratorSpec(F2=lambda t, x, y, z: q(y) * _sq(z), f=_structure_of(q), quadratic=q,
                         convex_F2=q.total_abs_mass == 0, name=f"quad[{q.name}]",
                         params=[{"family": "quadratic", "coefficient": q.params}])


def convex_exp(kappa: float = 1.0, lam: float = 1.0) -> GeneratorSpec:
    """``F2 = kappa (log(1 + exp(lam z_1)) - log 2) / lam``.

    Convex in ``(y, z)``, ``kappa``-Lipschitz in ``z``, zero at ``z = 0``.
    """
    if kappa < 0 or lam <= 0:
        raise PreconditionError("convex_exp needs kappa >= 0 and lam > 0")

    def F2(t, x, y, z):
        return kappa * (np.logaddexp(0.0, lam * z[:, 0]) - math.log(2.0)) / lam

    return GeneratorSpec(F2=F2, gamma2=kappa, convex_F2=True, name="convex_exp",
                         params=[{"family": "convex_exp", "kappa": kappa, "lam": lam}])


def markovian_linear_in_x(a: float = 1.0) -> GeneratorSpec:
    """``F1 = a sin(x)``: bounded forcing through the forward state."""
    def F1(t, x, y, z):
        return a * np.sin(x[:, 0]) if x is not None else np.zeros_like(y)

    return GeneratorSpec(F1=F1, alpha=abs(a), autonomous=False, name="sin_x",
                         params=[{"family": "sin_x", "a": a}])


_FAMILIES = {
    "constant": lambda c: constant_driver(float(c.get("a", 0.0))),
    "linear": lambda c: linear(float(c.get("a", 0.0)), float(c.get("b", 0.0)), c.get("c", 0.0)),
    "monotone_polynomial": lambda c: monotone_polynomial(float(c.get("kappa", 1.0)), int(c.get("power", 3)),
                                                         float(c.get("a", 0.0))),
    "z_lipschitz": lambda c: z_lipschitz(float(c.get("gamma", 1.0)), float(c.get("a", 0.0))),
    "quadratic": lambda c: quadratic(coefficient_from_config(c.get("coefficient", {"family": "zero"}))),
    "convex_exp": lambda c: convex_exp(float(c.get("kappa", 1.0)), float(c.get("lam", 1.0))),
    "sin_x": lambda c: markovian_linear_in_x(float(c.get("a", 1.0))),
}


def generator_from_config(terms: list) -> GeneratorSpec:
    """Sum of named families, e.g. ``[{"family": "linear", "b": -1}, ...]``."""
    if not terms:
        return GeneratorSpec(name="zero", params=[])
    parts = []
    for i, t in enumerate(terms):
        fam = t.get("family")
        if fam not in _FAMILIES:
            raise PreconditionError(f"terms[{i}].family: unknown generator family {fam!r}")
        parts.append(_FAMILIES[fam](t))
    return parts[0] if len(parts) == 1 else combine(*parts)


# --------------------------------------------------------------------------
# structure validation

@dataclass
class ValidationReport:
    margins: dict
    worst_points: dict
    passed: bool

    def failed(self) -> list:
        return [k for k, v in self.margins.items() if v < -VALIDATION_TOL]


def structure_margins(spec: GeneratorSpec, t, x, y, z) -> dict:
    """Pointwise ``rhs - lhs`` of each growth/monotonicity condition (negative = violated)."""
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float).reshape(len(y), -1)
    a = spec.alpha_at(t)
    fy = spec.f(np.abs(y))
    zn = _norm(z)
    F = spec(t, x, y, z)
    F2 = spec.F2(t, x, y, z)
    quad = fy * zn**2
    return {
        "growth_sign": a + spec.beta * np.abs(y) + spec.gamma * zn + quad - np.sign(y) * F,
        "growth_abs": a + spec.phi(np.abs(y)) + spec.gamma * zn + quad - np.abs(F),
        "F2_sign": spec.beta2 * np.abs(y) + spec.gamma2 * zn + quad - np.sign(y) * F2,
    }


def validate_structure(spec: GeneratorSpec, sample_size: int = 20000, seed: int = 0, T: float = 1.0,
                       y_scale: float = 5.0, z_scale: float = 5.0, d: int = 1,
                       require_convex: bool = False) -> ValidationReport:
    """Sampled checks; PASS iff every worst margin is >= -1e-9.

    Joint convexity of ``F2`` (midpoint-type check on random pairs, relative
    to ``1 + |F2|``) runs when ``spec.convex_F2`` is set or ``require_convex``
    is given; ordered-pair comparisons of general drivers need it.
    """
    rng = np.random.default_rng(seed)
    n = sample_size
    t = float(rng.uniform(0, T))
    y = np.concatenate([rng.uniform(-y_scale, y_scale, n // 2), rng.normal(0, 1, n - n // 2)])
    z = np.concatenate([rng.uniform(-z_scale, z_scale, (n // 2, d)), rng.normal(0, 1, (n - n // 2, d))])
    x = None if spec.autonomous else rng.normal(0, 2, (n, 1))
    margins, worst = {}, {}

    def record(name, values, where):
        i = int(np.argmin(values))
        margins[name] = float(values[i])
        worst[name] = {k: (v[i].tolist() if isinstance(v, np.ndarray) else v) for k, v in where.items()}

    pts = {"t": t, "y": y, "z": z}
    for name, vals in structure_margins(spec, t, x, y, z).items():
        record(name, vals, pts)
    y2 = rng.permutation(y)
    z2 = rng.permutation(z)
    dy = spec.F1(t, x, y, z) - spec.F1(t, x, y2, z)
    record("F1_monotone_y", spec.beta1 * np.abs(y - y2) - np.sign(y - y2) * dy, {"y": y, "y2": y2, "z": z})
    dz = np.abs(spec.F1(t, x, y, z) - spec.F1(t, x, y, z2))
    record("F1_lipschitz_z", spec.gamma1 * _norm(z - z2) - dz, {"y": y, "z": z, "z2": z2})
    if spec.convex_F2 or require_convex:
        lam = rng.uniform(0, 1, n)
        ym, zm = lam * y + (1 - lam) * y2, lam[:, None] * z + (1 - lam[:, None]) * z2
        conv = lam * spec.F2(t, x, y, z) + (1 - lam) * spec.F2(t, x, y2, z2) - spec.F2(t, x, ym, zm)
        scale = 1.0 + np.abs(spec.F2(t, x, ym, zm))
        record("F2_convex", conv / scale, {"y": y, "z": z, "y2": y2, "z2": z2, "lam": lam})
    passed = all(v >= -VALIDATION_TOL for v in margins.values())
    return ValidationReport(margins, worst, passed)


def dominates(spec_low: GeneratorSpec, spec_high: GeneratorSpec, sample_size: int = 20000, seed: int = 1,
              T: float = 1.0, y_scale: float = 5.0, z_scale: float = 5.0, d: int = 1) -> float:
    """Worst sampled ``F_high - F_low`` (>= 0 when the order holds)."""
    rng = np.random.default_rng(seed)
    t = rng.uniform(0, T, 8)
    y = rng.uniform(-y_scale, y_scale, sample_size)
    z = rng.uniform(-z_scale, z_scale, (sample_size, d))
    x = rng.normal(0, 2, (sample_size, 1))
    return float(min(np.min(spec_high(s, x, y, z) - spec_low(s, x, y, z)) for s in t))


# --------------------------------------------------------------------------
# approximation operators

def truncate_rho(y, m: float):
    """``rho(y) = y`` on ``[-m, m]`` and ``m sgn(y)`` outside."""
    if m <= 0:
        raise PreconditionError("truncation level must be positive")
    return np.clip(y, -m, m)


@dataclass(frozen=True)
class Lattice:
    y: np.ndarray
    z: np.ndarray

    @classmethod
    def uniform(cls, lo: float = -10.0, hi: float = 10.0, points: int = 401) -> "Lattice":
        g = np.linspace(lo, hi, points)
        return cls(g, g.copy())


def _l1_transform_1d(H: np.ndarray, h: float, n: float, axis: int) -> np.ndarray:
    """Exact ``min_j H_j + n h |i - j|`` along ``axis`` (two sweeps)."""
    D = np.moveaxis(H.copy(), axis, 0)
    step = n * h
    for i in range(1, D.shape[0]):
        np.minimum(D[i], D[i - 1] + step, out=D[i])
    for i in range(D.shape[0] - 2, -1, -1):
        np.minimum(D[i], D[i + 1] + step, out=D[i])
    return np.moveaxis(D, 0, axis)


class InfConvolution:
    """Discrete ``inf_{(y',z') in lattice} H(y',z') + n(|y - y'| + |z - z'|)``.

    Off the lattice the value is the minimum over the four corners of the
    enclosing (clamped) cell, which is exact for the L1 penalty.
    """

    def __init__(self, H: np.ndarray, lattice: Lattice, n: float):
        if lattice.y.size == 0 or lattice.z.size == 0:
            raise PreconditionError("empty lattice")
        hy = np.diff(lattice.y)
        hz = np.diff(lattice.z)
        if not (np.allclose(hy, hy[0]) and np.allclose(hz, hz[0])):
            raise PreconditionError("lattice must be uniform")
        self.lattice, self.n = lattice, float(n)
        D = _l1_transform_1d(H, hy[0], n, 0)
        self.values = _l1_transform_1d(D, hz[0], n, 1)

    def __call__(self, y, z):
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float).reshape(y.shape)
        ly, lz = self.lattice.y, self.lattice.z
        iy = np.clip(np.searchsorted(ly, y) - 1, 0, len(ly) - 2)
        iz = np.clip(np.searchsorted(lz, z) - 1, 0, len(lz) - 2)
        best = np.full(y.shape, np.inf)
        for dy in (0, 1):
            for dz in (0, 1):
                cy, cz = iy + dy, iz + dz
                cand = self.values[cy, cz] + self.n * (np.abs(y - ly[cy]) + np.abs(z - lz[cz]))
                np.minimum(best, cand, out=best)
        return best


def inf_convolution(F: Callable, n: float, lattice: Lattice | None = None) -> InfConvolution:
    """Inf-convolution of an autonomous rule ``F(y, z)`` (scalar ``z``) over a lattice."""
    lattice = lattice or Lattice.uniform()
    Yg, Zg = np.meshgrid(lattice.y, lattice.z, indexing="ij")
    H = np.asarray(F(Yg.ravel(), Zg.ravel()), dtype=float).reshape(Yg.shape)
    if not np.all(np.isfinite(H)):
        raise PreconditionError("rule must be finite on the lattice")
    return InfConvolution(H, lattice, n)


def alpha_level_time(spec: GeneratorSpec, times: np.ndarray, level: float) -> float:
    """``sigma = inf{t : |alpha|_t >= level}`` on the grid (``T`` if never)."""
    a = spec.alpha_integral(times)
    hit = np.nonzero(a >= level)[0]
    return float(times[hit[0]]) if hit.size else float(times[-1])


def approximating_generator(spec: GeneratorSpec, n: int, k: int, times: np.ndarray,
                            lattice: Lattice | None = None) -> GeneratorSpec:
    """``F^{n,k} = 1{t <= sigma_n} (F+)_n - 1{t <= sigma_k} (F-)_k`` for an autonomous scalar-z generator."""
    if n < 1 or k < 1:
        raise PreconditionError("approximation indices must be >= 1")
    if not spec.autonomous:
        raise PreconditionError("the approximation operator needs an autonomous generator")

    def F(y, z):
        return spec(0.0, None, y, z[:, None])

    plus = inf_convolution(lambda y, z: np.maximum(F(y, z), 0.0), n, lattice)
    minus = inf_convolution(lambda y, z: np.maximum(-F(y, z), 0.0), k, lattice)
    s_n, s_k = alpha_level_time(spec, times, n), alpha_level_time(spec, times, k)
    if s_n >= times[-1]:
        s_n = math.inf
    if s_k >= times[-1]:
        s_k = math.inf

    def F1(t, x, y, z):
        return (t <= s_n) * plus(y, z[:, 0]) - (t <= s_k) * minus(y, z[:, 0])

    return GeneratorSpec(F1=F1, alpha=spec.alpha, beta1=n, gamma1=n, phi=spec.phi, f=spec.f,
                         name=f"{spec.name}^[{n},{k}]", params=spec.params)


# --------------------------------------------------------------------------
# u-transform of a generator

def transform_generator(G: Callable, f: IntegrableCoefficient, table: TransformTable | None = None) -> Callable:
    """``Ftilde(t,x,y,z) = u'(u^{-1} y) G(t, x, u^{-1} y, z / u'(u^{-1} y))``.

    Solving ``(Ftilde, u(xi))`` and mapping back through ``u^{-1}`` solves
    ``(G + f(y)|z|^2, xi)``.
    """
    if f.total_abs_mass == 0:
        return G
    table = table or build_u(f)

    def Ft(t, x, y, z):
        x_ = invert_u(table, y)
        d = table.deriv(x_)
        return d * G(t, x, x_, z / d[:, None])

    Ft.table = table
    return Ft


def untransform_generator(Ft: Callable, f: IntegrableCoefficient, table: TransformTable | None = None) -> Callable:
    """Inverse of :func:`transform_generator`: ``G(t,x,y,z) = Ftilde(t,x,u(y),u'(y) z) / u'(y)``."""
    if f.total_abs_mass == 0:
        return Ft
    table = table or build_u(f)

    def G(t, x, y, z):
        v, d = table.evaluate(y)
        return Ft(t, x, v, z * d[:, None]) / d

    return G
