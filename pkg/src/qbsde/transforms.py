"""Class-I coefficients and the exponential transforms built from them.

For an integrable, locally bounded coefficient ``f`` the u-transform

    u(x) = int_0^x exp(2 int_0^y f(s) ds) dy

is a C^1 increasing bijection of the real line with ``u'' = 2 f u'`` almost
everywhere, and the v-transform

    v(x) = int_0^|x| u^{-f}(y) exp(2 int_0^y f(s) ds) dy

is an even C^1 function with ``v'' - 2 f(|x|) |v'| = 1`` almost everywhere.
Both are tabulated on a grid (nodes snapped to the discontinuities of ``f``)
and interpolated with cubic Hermite polynomials using the exact derivatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicHermiteSpline

from .errors import CoefficientEvaluationError, PreconditionError

_INNER_EPS = 1e-12
_GL_ORDER = 16
_GL_X, _GL_W = np.polynomial.legendre.leggauss(_GL_ORDER)


@dataclass(frozen=True)
class IntegrableCoefficient:
    """A function of class I with the data needed by the transforms.

    Parameters
    ----------
    func : callable
        Vectorised evaluation rule ``x -> f(x)``.
    support_radius : float
        ``f`` vanishes outside ``[-R, R]``; ``inf`` for full support.
    total_abs_mass : float
        ``int_R |f|``.
    positive_mass : float
        ``int_0^inf |f|``, needed for ``M`` of ``f(|.|)``.
    compact_bound : callable
        ``r -> sup_{|x| <= r} |f(x)|``.
    breakpoints : tuple of float
        Points where ``f`` may jump.
    effective_radius : float
        Radius beyond which ``|f|`` is negligible (equals ``support_radius``
        when that is finite).
    """

    func: Callable[[np.ndarray], np.ndarray]
    support_radius: float
    total_abs_mass: float
    positive_mass: float
    compact_bound: Callable[[float], float]
    breakpoints: tuple = ()
    effective_radius: float = 0.0
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __call__(self, x):
        return np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)

    @property
    def mass_constant(self) -> float:
        """``M^f = exp(2 int |f|)``."""
        return math.exp(2.0 * self.total_abs_mass)

    @property
    def radius(self) -> float:
        if math.isfinite(self.support_radius):
            return self.support_radius
        return self.effective_radius

    def scaled(self, k: float) -> "IntegrableCoefficient":
        """The coefficient ``k * f``."""
        f = self.func
        bound = self.compact_bound
        return IntegrableCoefficient(
            func=lambda x: k * f(x),
            support_radius=self.support_radius,
            total_abs_mass=abs(k) * self.total_abs_mass,
            positive_mass=abs(k) * self.positive_mass,
            compact_bound=lambda r: abs(k) * bound(r),
            breakpoints=self.breakpoints,
            effective_radius=self.effective_radius,
            name=f"{k:g}*{self.name}",
            params={"scale": k, "base": self.params},
        )

    def symmetrized(self) -> "IntegrableCoefficient":
        """The even coefficient ``x -> f(|x|)``."""
        f = self.func
        bps = sorted({abs(b) for b in self.breakpoints if b >= 0} | {-b for b in self.breakpoints if b > 0})
        return IntegrableCoefficient(
            func=lambda x: f(np.abs(x)),
            support_radius=self.support_radius,
            total_abs_mass=2.0 * self.positive_mass,
            positive_mass=self.positive_mass,
            compact_bound=self.compact_bound,
            breakpoints=tuple(bps),
            effective_radius=self.effective_radius,
            name=f"{self.name}(|.|)",
            params={"symmetrized": self.params},
        )


def zero() -> IntegrableCoefficient:
    return IntegrableCoefficient(
        func=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        support_radius=0.0,
        total_abs_mass=0.0,
        positive_mass=0.0,
        compact_bound=lambda r: 0.0,
        name="zero",
        params={"family": "zero"},
    )


def piecewise_constant(edges: Sequence[float], values: Sequence[float]) -> IntegrableCoefficient:
    """``f = values[i]`` on ``[edges[i], edges[i+1])`` and zero elsewhere."""
    edges = np.asarray(edges, dtype=float)
    values = np.asarray(values, dtype=float)
    if edges.ndim != 1 or len(edges) != len(values) + 1 or np.any(np.diff(edges) <= 0):
        raise PreconditionError("edges must be strictly increasing with len(values) + 1 entries")
    widths = np.diff(edges)
    pos_widths = np.clip(edges[1:], 0, None) - np.clip(edges[:-1], 0, None)

    def func(x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(edges, x, side="right") - 1
        inside = (idx >= 0) & (idx < len(values))
        out = np.zeros_like(x)
        out[inside] = values[idx[inside]]
        return out

    def bound(r):
        hit = (edges[:-1] <= r) & (edges[1:] >= -r)
        return float(np.max(np.abs(values[hit]))) if np.any(hit) else 0.0

    return IntegrableCoefficient(
        func=func,
        support_radius=float(np.max(np.abs(edges))),
        total_abs_mass=float(np.sum(np.abs(values) * widths)),
        positive_mass=float(np.sum(np.abs(values) * pos_widths)),
        compact_bound=bound,
        breakpoints=tuple(float(e) for e in edges),
        name="piecewise_constant",
        params={"family": "piecewise_constant", "edges": edges.tolist(), "values": values.tolist()},
    )


def indicator(c: float, a: float) -> IntegrableCoefficient:
    """``c * 1_{[-a, a]}``."""
    if a <= 0:
        raise PreconditionError("indicator half-width must be positive")
    coeff = piecewise_constant([-a, a], [c])
    return IntegrableCoefficient(
        func=coeff.func,
        support_radius=a,
        total_abs_mass=2 * a * abs(c),
        positive_mass=a * abs(c),
        compact_bound=lambda r: abs(c),
        breakpoints=(-a, a),
        name=f"{c:g}*1[-{a:g},{a:g}]",
        params={"family": "indicator", "c": c, "a": a},
    )


def gaussian(c: float, s: float) -> IntegrableCoefficient:
    """``c * exp(-x^2 / (2 s^2))``; full support, explicit mass."""
    if s <= 0:
        raise PreconditionError("gaussian width must be positive")
    mass = abs(c) * s * math.sqrt(2 * math.pi)
    return IntegrableCoefficient(
        func=lambda x: c * np.exp(-0.5 * (np.asarray(x, dtype=float) / s) ** 2),
        support_radius=math.inf,
        total_abs_mass=mass,
        positive_mass=mass / 2,
        compact_bound=lambda r: abs(c),
        effective_radius=9.0 * s,
        name=f"{c:g}*gauss({s:g})",
        params={"family": "gaussian", "c": c, "s": s},
    )


def from_function(func, support_radius: float, breakpoints=(), name="custom") -> IntegrableCoefficient:
    """Wrap a compactly supported rule, computing masses by adaptive quadrature."""
    R = float(support_radius)
    if not math.isfinite(R):
        raise PreconditionError("from_function needs a finite support radius")
    pts = sorted({-R, 0.0, R} | {float(b) for b in breakpoints if -R < b < R})
    absf = lambda x: abs(float(func(np.asarray(x))))  # noqa: E731
    pieces = [integrate.quad(absf, a, b, epsabs=_INNER_EPS, limit=200)[0] for a, b in zip(pts[:-1], pts[1:])]
    pos = sum(p for (a, _), p in zip(zip(pts[:-1], pts[1:]), pieces) if a >= 0)

    def bound(r):
        xs = np.linspace(-min(r, R), min(r, R), 2001)
        return float(np.max(np.abs(func(xs))))

    return IntegrableCoefficient(
        func=func,
        support_radius=R,
        total_abs_mass=float(sum(pieces)),
        positive_mass=float(pos),
        compact_bound=bound,
        breakpoints=tuple(pts[1:-1]),
        name=name,
        params={"family": "custom"},
    )


def coefficient_from_config(cfg: dict) -> IntegrableCoefficient:
    """Build a coefficient from a ``{"family": ..., ...}`` mapping."""
    fam = cfg.get("family", "zero")
    if fam == "zero":
        return zero()
    if fam == "indicator":
        return indicator(float(cfg["c"]), float(cfg["a"]))
    if fam == "piecewise_constant":
        return piecewise_constant(cfg["edges"], cfg["values"])
    if fam == "gaussian":
        return gaussian(float(cfg["c"]), float(cfg["s"]))
    raise PreconditionError(f"unknown coefficient family {fam!r}")


# --------------------------------------------------------------------------
# tables

@dataclass(frozen=True)
class TransformTable:
    """Tabulated u- or v-transform with cubic Hermite interpolation.

    Outside ``[nodes[0], nodes[-1]]`` a u-table is continued linearly and a
    v-table quadratically with unit curvature; both are exact when ``f``
    vanishes beyond the table.
    """

    kind: str
    source: IntegrableCoefficient
    nodes: np.ndarray
    values: np.ndarray
    derivs: np.ndarray
    mass_constant: float
    _spline: CubicHermiteSpline = field(repr=False, compare=False, default=None)

    _inverse_spline: CubicHermiteSpline = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        if self._spline is None:
            object.__setattr__(self, "_spline", CubicHermiteSpline(self.nodes, self.values, self.derivs))
        if self.kind == "u" and self._inverse_spline is None:
            # starting guesses for inversion
            object.__setattr__(self, "_inverse_spline",
                               CubicHermiteSpline(self.values, self.nodes, 1.0 / self.derivs))

    @property
    def domain(self):
        return float(self.nodes[0]), float(self.nodes[-1])

    def evaluate(self, x):
        """Return ``(value, deriv)`` at ``x`` (any shape)."""
        x = np.asarray(x, dtype=float)
        lo, hi = self.domain
        value = np.empty_like(x)
        deriv = np.empty_like(x)
        inside = (x >= lo) & (x <= hi)
        if np.any(inside):
            xi = x[inside]
            value[inside] = self._spline(xi)
            deriv[inside] = self._spline(xi, 1)
        for mask, k in ((x < lo, 0), (x > hi, -1)):
            if np.any(mask):
                dx = x[mask] - self.nodes[k]
                if self.kind == "u":
                    value[mask] = self.values[k] + self.derivs[k] * dx
                    deriv[mask] = self.derivs[k]
                else:
                    value[mask] = self.values[k] + self.derivs[k] * dx + 0.5 * dx**2
                    deriv[mask] = self.derivs[k] + dx
        return value, deriv

    def __call__(self, x):
        return self.evaluate(x)[0]

    def deriv(self, x):
        return self.evaluate(x)[1]

    def inverse(self, y):
        return invert_u(self, y)

    def to_csv(self, path) -> None:
        data = np.column_stack([self.nodes, self.values, self.derivs])
        np.savetxt(path, data, delimiter=",", header="x,value,deriv", comments="", fmt="%.17g")


def _grid_nodes(lo, hi, resolution, breakpoints):
    base = np.linspace(lo, hi, resolution)
    extra = [b for b in breakpoints if lo < b < hi]
    nodes = np.unique(np.concatenate([base, [0.0], extra]))
    # merge nodes closer than a rounding-level gap so cells never degenerate
    keep = np.concatenate([[True], np.diff(nodes) > 1e-12 * max(1.0, hi - lo)])
    return nodes[keep]


def _checked(f, x):
    y = f(x)
    if not np.all(np.isfinite(y)):
        bad = np.asarray(x)[~np.isfinite(y)]
        raise CoefficientEvaluationError(f"coefficient {f.name} is not finite at x={bad.ravel()[0]!r}")
    return y


def _cell_integrals(f, nodes):
    """``int_{x_k}^{x_{k+1}} f`` per cell, adaptive Gauss-Kronrod."""
    _checked(f, nodes)
    scalar = lambda s: float(f(np.array([s]))[0])  # noqa: E731
    out = np.empty(len(nodes) - 1)
    for k, (a, b) in enumerate(zip(nodes[:-1], nodes[1:])):
        out[k] = integrate.quad(scalar, a, b, epsabs=_INNER_EPS, epsrel=_INNER_EPS, limit=100)[0]
    return out


def _primitive_at_nodes(cells, zero_index):
    """Cumulative integral from the node at ``zero_index`` (which sits at 0)."""
    F = np.zeros(len(cells) + 1)
    F[zero_index + 1:] = np.cumsum(cells[zero_index:])
    F[:zero_index] = -np.cumsum(cells[:zero_index][::-1])[::-1]
    return F


def _gl_on(a, b):
    """Gauss-Legendre nodes/weights mapped onto each ``[a_i, b_i]``; shapes (..., q)."""
    a = np.asarray(a)[..., None]
    b = np.asarray(b)[..., None]
    half = 0.5 * (b - a)
    return a + half * (_GL_X + 1.0), half * _GL_W


def _exp_increments(f, nodes, F, sign=1.0):
    """``int_{x_k}^{x_{k+1}} exp(2 sign (F_k + int_{x_k}^y f)) dy`` per cell."""
    a, b = nodes[:-1], nodes[1:]
    y, wy = _gl_on(a, b)  # (K, q)
    s, ws = _gl_on(np.broadcast_to(a[:, None], y.shape), y)  # (K, q, q)
    inner = np.sum(ws * _checked(f, s), axis=-1)
    return np.sum(wy * np.exp(2.0 * sign * (F[:-1, None] + inner)), axis=-1)


def _default_domain(f, pad=10.0):
    R = f.radius
    return (-R - pad, R + pad)


def build_u(f: IntegrableCoefficient, domain=None, resolution: int = 2001) -> TransformTable:
    """Tabulate ``u^f`` on ``domain`` (must contain 0)."""
    lo, hi = domain if domain is not None else _default_domain(f)
    if resolution < 2:
        raise PreconditionError("resolution must be at least 2")
    if not lo <= 0.0 <= hi or lo == hi:
        raise PreconditionError(f"domain {lo, hi} must contain 0")
    nodes = _grid_nodes(lo, hi, resolution, f.breakpoints)
    z = int(np.searchsorted(nodes, 0.0))
    F = _primitive_at_nodes(_cell_integrals(f, nodes), z)
    derivs = np.exp(2.0 * F)
    inc = _exp_increments(f, nodes, F)
    values = _primitive_at_nodes(inc, z)
    return TransformTable("u", f, nodes, values, derivs, math.exp(2.0 * f.total_abs_mass))


def build_v(f_abs: IntegrableCoefficient, domain=None, resolution: int = 2001) -> TransformTable:
    """Tabulate ``v^f`` for the coefficient ``f`` used as ``f(|.|)``.

    Only ``f`` on ``[0, inf)`` matters. The table is even; ``mass_constant``
    is ``M^{f(|.|)} = exp(4 int_0^inf |f|)``.
    """
    lo, hi = domain if domain is not None else _default_domain(f_abs)
    if resolution < 2:
        raise PreconditionError("resolution must be at least 2")
    if not lo <= 0.0 <= hi or lo == hi:
        raise PreconditionError(f"domain {lo, hi} must contain 0")
    R = max(-lo, hi)
    half = _grid_nodes(0.0, R, max(2, resolution // 2 + 1), [b for b in f_abs.breakpoints if b > 0])
    F = _primitive_at_nodes(_cell_integrals(f_abs, half), 0)
    w = _primitive_at_nodes(_exp_increments(f_abs, half, F, sign=-1.0), 0)  # u^{-f} at nodes
    # v increments: int u^{-f}(y) e^{2F(y)} dy with u^{-f}(y) = w_k + int_{x_k}^y e^{-2F}
    a, b = half[:-1], half[1:]
    y, wy = _gl_on(a, b)
    s, ws = _gl_on(np.broadcast_to(a[:, None], y.shape), y)
    Fs = F[:-1, None] + np.sum(ws * _checked(f_abs, s), axis=-1)  # F at y
    r, wr = _gl_on(np.broadcast_to(a[:, None, None], s.shape), s)
    Fr = F[:-1, None, None] + np.sum(wr * _checked(f_abs, r), axis=-1)  # F at s
    u_neg = w[:-1, None] + np.sum(ws * np.exp(-2.0 * Fr), axis=-1)
    inc = np.sum(wy * u_neg * np.exp(2.0 * Fs), axis=-1)
    v_half = _primitive_at_nodes(inc, 0)
    d_half = w * np.exp(2.0 * F)
    nodes = np.concatenate([-half[:0:-1], half])
    values = np.concatenate([v_half[:0:-1], v_half])
    derivs = np.concatenate([-d_half[:0:-1], d_half])
    keep = (nodes >= lo - 1e-12) & (nodes <= hi + 1e-12)
    return TransformTable(
        "v", f_abs, nodes[keep], values[keep], derivs[keep], math.exp(4.0 * f_abs.positive_mass)
    )


def eval_transform(t: TransformTable, x):
    """``(value, deriv)`` of a table at ``x``."""
    return t.evaluate(x)


def invert_u(t: TransformTable, y, tol: float = 1e-12, max_iter: int = 100):
    """Solve ``u(x) = y`` by bracketing on the node values plus safeguarded Newton."""
    if t.kind != "u":
        raise PreconditionError("invert_u needs a u-table")
    y = np.asarray(y, dtype=float)
    scalar = y.ndim == 0
    shape = y.shape
    y = y.ravel()
    x = np.empty_like(y)
    vals, nodes, ders = t.values, t.nodes, t.derivs
    low = y < vals[0]
    high = y > vals[-1]
    x[low] = nodes[0] + (y[low] - vals[0]) / ders[0]
    x[high] = nodes[-1] + (y[high] - vals[-1]) / ders[-1]
    mid = np.nonzero(~(low | high))[0]
    if mid.size:
        ym = y[mid]
        k = np.clip(np.searchsorted(vals, ym, side="right") - 1, 0, len(nodes) - 2)
        a = nodes[k]
        b = nodes[k + 1]
        c = t._spline.c[:, k]  # cubic coefficients per cell, highest power first
        xm = np.clip(t._inverse_spline(ym), a, b)
        thresh = tol * np.maximum(1.0, np.abs(ym))
        act = np.arange(len(ym))
        eps = 4 * np.finfo(float).eps
        for _ in range(max_iter):
            if act.size == 0:
                break
            xa, ca, aa, ba = xm[act], c[:, act], a[act], b[act]
            h = xa - nodes[k[act]]
            r = ((ca[0] * h + ca[1]) * h + ca[2]) * h + ca[3] - ym[act]
            der = (3 * ca[0] * h + 2 * ca[1]) * h + ca[2]
            todo = np.abs(r) > thresh[act]
            up = r > 0
            ba = np.where(up, xa, ba)
            aa = np.where(up, aa, xa)
            with np.errstate(divide="ignore", invalid="ignore"):
                newton = xa - r / der
            ok = (der > 0) & (newton > aa) & (newton < ba)
            step = np.where(ok, newton, 0.5 * (aa + ba))
            xm[act] = np.where(todo, step, xa)
            a[act], b[act] = aa, ba
            keep = todo & ((ba - aa) > eps * np.maximum(1.0, np.abs(step)))
            act = act[keep]
        x[mid] = xm
    return float(x[0]) if scalar else x.reshape(shape)


def fritsch_carlson_ok(t: TransformTable, side: str = "both") -> bool:
    """Check the Fritsch-Carlson monotonicity condition cell by cell.

    For v-tables only cells on one side of 0 are monotone; pass
    ``side="positive"`` or ``"negative"``.
    """
    h = np.diff(t.nodes)
    sec = np.diff(t.values) / h
    d0, d1 = t.derivs[:-1], t.derivs[1:]
    mask = np.ones_like(sec, dtype=bool)
    if side == "positive":
        mask = t.nodes[:-1] >= 0
    elif side == "negative":
        mask = t.nodes[1:] <= 0
    sec, d0, d1 = sec[mask], d0[mask], d1[mask]
    flat = sec == 0
    if np.any(flat & ((d0 != 0) | (d1 != 0))):
        return False
    s = np.where(flat, 1.0, sec)
    al, be = d0 / s, d1 / s
    return bool(np.all(flat | ((al >= 0) & (be >= 0) & (al**2 + be**2 <= 9.0))))
