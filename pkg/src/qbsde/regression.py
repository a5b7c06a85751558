"""Least-squares conditional expectations and batch standard errors."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np
from numpy.polynomial import hermite_e
from scipy.linalg import cho_factor, cho_solve

from .errors import IllConditionedBasisError, PreconditionError

N_BATCHES = 30


@dataclass(frozen=True)
class BasisSpec:
    """Polynomial basis in the standardised state.

    ``family`` is ``"hermite"`` (probabilists' Hermite, better conditioned)
    or ``"monomial"``. Multivariate states use all products of total degree
    at most ``degree``. ``"spline"`` is a natural cubic spline in a scalar
    state with ``knots`` knots at sample quantiles; it is linear beyond the
    outer knots, so it does not oscillate where paths are sparse.
    """

    degree: int = 5
    family: str = "hermite"
    max_condition: float = 1e10
    knots: int = 8

    def __post_init__(self):
        if self.degree < 0:
            raise PreconditionError("basis degree must be >= 0")
        if self.knots < 2:
            raise PreconditionError("a spline basis needs at least 2 knots")
        if self.family not in ("hermite", "monomial", "spline"):
            raise PreconditionError(f"unknown basis family {self.family!r}")


def _univariate(x, degree, family):
    if family == "monomial":
        return np.vander(x, degree + 1, increasing=True)
    return hermite_e.hermevander(x, degree)


def _natural_spline(x: np.ndarray, n_knots: int) -> np.ndarray:
    """Truncated-power natural cubic spline basis with knots at quantiles of ``x``."""
    xi = np.quantile(x, np.linspace(0.02, 0.98, n_knots))
    xi = np.unique(xi)
    if len(xi) < 2:
        return np.column_stack([np.ones_like(x), x])

    def d(j):
        return (np.maximum(x - xi[j], 0.0) ** 3 - np.maximum(x - xi[-1], 0.0) ** 3) / (xi[-1] - xi[j])

    last = d(len(xi) - 2)
    return np.column_stack([np.ones_like(x), x] + [d(j) - last for j in range(len(xi) - 2)])


def design_matrix(state: np.ndarray, basis: BasisSpec) -> np.ndarray:
    """Basis functions of ``state`` (shape ``(n,)`` or ``(n, m)``), standardised per column.

    Columns with no spread contribute only the constant.
    """
    s = np.asarray(state, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    n, m = s.shape
    mu = s.mean(axis=0)
    sd = s.std(axis=0)
    live = sd > 1e-12 * np.maximum(1.0, np.abs(mu))
    if basis.degree == 0 or not np.any(live):
        return np.ones((n, 1))
    s = (s[:, live] - mu[live]) / sd[live]
    if basis.family == "spline":
        if s.shape[1] != 1:
            raise PreconditionError("the spline basis needs a scalar state")
        return _natural_spline(s[:, 0], basis.knots)
    uni = [_univariate(s[:, j], basis.degree, basis.family) for j in range(s.shape[1])]
    cols = [np.ones(n)]
    for deg in range(1, basis.degree + 1):
        for combo in combinations_with_replacement(range(s.shape[1]), deg):
            powers = np.bincount(combo, minlength=s.shape[1])
            col = np.ones(n)
            for j, pw in enumerate(powers):
                if pw:
                    col = col * uni[j][:, pw]
            cols.append(col)
    return np.column_stack(cols)


class Projector:
    """Least-squares projection onto basis functions of the state at one step.

    With ``dW`` given, the span is enlarged by ``phi_j(state) * dW_i /
    sqrt(dt)`` so that a single fit splits ``Y_{k+1}`` into a state part and
    a martingale-increment part. Constant targets are reproduced exactly.
    """

    def __init__(self, state: np.ndarray, basis: BasisSpec, step: int | None = None,
                 dW: np.ndarray | None = None, dt: float | None = None):
        A = design_matrix(state, basis)
        self.n, self.p = A.shape
        self.d = 0 if dW is None else dW.shape[1]
        if dW is not None:
            scale = 1.0 / np.sqrt(dt)
            A = np.hstack([A] + [A * (dW[:, [i]] * scale) for i in range(self.d)])
            self._zscale = scale
        self.A = A
        cols = A.shape[1]
        if cols > self.n:
            raise IllConditionedBasisError(
                f"{cols} regression columns for {self.n} paths", condition_number=float("inf"), step=step)
        G = A.T @ A / self.n
        ev = np.linalg.eigvalsh(G)
        self.condition_number = float(np.sqrt(ev[-1] / ev[0])) if ev[0] > 0 else float("inf")
        if not self.condition_number <= basis.max_condition:
            raise IllConditionedBasisError(
                f"regression basis condition number {self.condition_number:.3g} exceeds "
                f"{basis.max_condition:.3g}", condition_number=self.condition_number, step=step)
        self._chol = cho_factor(G)

    def coef(self, target: np.ndarray) -> np.ndarray:
        flat = np.asarray(target, dtype=float).reshape(self.n, -1)
        return cho_solve(self._chol, self.A.T @ flat / self.n)

    def project(self, target: np.ndarray) -> np.ndarray:
        B = np.asarray(target, dtype=float)
        flat = B.reshape(self.n, -1)
        out = self.A @ self.coef(flat)
        const = np.all(flat == flat[:1], axis=0)
        if np.any(const):
            out[:, const] = flat[:1, const]
        return out.reshape(B.shape)

    def split(self, target: np.ndarray):
        """``(state part, Z)`` of a scalar target; needs the ``dW`` columns."""
        y = np.asarray(target, dtype=float)
        if y[0] == y[-1] and np.all(y == y[0]):
            return np.full(self.n, y[0]), np.zeros((self.n, self.d))
        c = self.coef(y)[:, 0]
        base = self.A[:, : self.p]
        y_part = base @ c[: self.p]
        z = np.column_stack([base @ c[self.p * (i + 1): self.p * (i + 2)] for i in range(self.d)])
        return y_part, z * self._zscale


@dataclass
class StepEstimate:
    y: np.ndarray          # E[Y_{k+1} | state_k]
    z: np.ndarray          # (n, d)
    target: np.ndarray     # pathwise Y_{k+1} - Z dW; its mean is Y at a deterministic start
    residual_rms: float


def backward_step(proj: Projector, y_next: np.ndarray, dW: np.ndarray) -> StepEstimate:
    """Joint fit ``Y_{k+1} ~ a(X_k) + b(X_k) dW``; returns ``Y = a``, ``Z = b``.

    In the large-sample limit ``b = E[Y_{k+1} dW | X_k] / dt`` and
    ``a = E[Y_{k+1} | X_k]``, the usual regression estimates, but the
    martingale part is removed from the residual, which keeps the tails of
    ``Z`` from picking up the noise of ``dW^2``.
    """
    y, z = proj.split(y_next)
    target = y_next - np.einsum("nd,nd->n", z, dW)
    return StepEstimate(y, z, target, float(np.sqrt(np.mean((target - y) ** 2))))


def prediction_se(proj: Projector, target: np.ndarray) -> np.ndarray:
    """Pointwise standard error of the state part of the fit of ``target``.

    ``sqrt(s^2 a_i' (A'A)^{-1} a_i)`` with ``a_i`` the state-basis row of
    path ``i`` (martingale columns zeroed) and ``s^2`` the residual
    variance. It grows with the leverage of sparse, extreme states.
    """
    y = np.asarray(target, dtype=float)
    if np.all(y == y[0]):
        return np.zeros(proj.n)
    c = proj.coef(y)[:, 0]
    resid = y - proj.A @ c
    dof = max(proj.n - proj.A.shape[1], 1)
    s2 = float(resid @ resid) / dof
    rows = np.zeros_like(proj.A)
    rows[:, : proj.p] = proj.A[:, : proj.p]
    # G = A'A / n is factored; (A'A)^{-1} = G^{-1} / n
    sol = cho_solve(proj._chol, rows.T)
    lev = np.einsum("ij,ji->i", rows, sol) / proj.n
    return np.sqrt(s2 * np.maximum(lev, 0.0))


def batch_se(values: np.ndarray, n_batches: int = N_BATCHES) -> float:
    """Standard error of the mean from ``n_batches`` contiguous path batches."""
    v = np.asarray(values, dtype=float).ravel()
    nb = min(n_batches, len(v))
    if nb < 2:
        return float("nan")
    means = np.array([b.mean() for b in np.array_split(v, nb)])
    return float(means.std(ddof=1) / np.sqrt(nb))
