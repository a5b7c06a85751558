"""Explicit constants of the two a priori L^p estimates.

Every constant is carried as a natural logarithm because the Gronwall
factor ``c4 exp(c4 T)`` overflows double precision for moderate inputs.
``M`` is ``M^{f(|.|)} = exp(2 int_R f(|x|) dx)``.

First estimate (``p >= 1``)::

    E[(int |Z|^2)^{p/2}] + E[(int f(|Y|)|Z|^2)^p] <= c6 E[(Y*)^p + |alpha|_T^p]

Second estimate (``p > 1``)::

    E[(Y*)^p] + E[(int |Z|^2)^{p/2}] + E[(int f(|Y|)|Z|^2)^p] <= c7 E[|xi|^p + |alpha|_T^p]
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError

LOG_BDG_ONE = math.log(3.0)


def _lse(*logs: float) -> float:
    """``log(sum(exp(l)))`` tolerant of ``-inf`` entries."""
    arr = np.array(logs, dtype=float)
    m = np.max(arr)
    if m == -math.inf:
        return -math.inf
    return float(m + math.log(np.sum(np.exp(arr - m))))


def _log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def bdg_constant(r: float) -> float:
    """``C_r`` with ``E[sup |M|^r] <= C_r E[<M>_T^{r/2}]``.

    ``r < 2``: the Lenglart-domination constant ``(4 - r)/(2 - r)``;
    ``r >= 2``: Doob's inequality combined with Ito's formula for ``|M|^r``,
    ``(r/(r-1))^r (r(r-1)/2)^{r/2}``.
    """
    if r <= 0:
        raise PreconditionError("BDG exponent must be positive")
    if r < 2:
        return (4.0 - r) / (2.0 - r)
    return (r / (r - 1.0)) ** r * (r * (r - 1.0) / 2.0) ** (r / 2.0)


@dataclass
class FirstEstimate:
    """Chain of the Z-estimate and the f-weighted estimate; fields are logs."""

    p: float
    c1: float
    A: float
    c2: float
    bdg: float
    cZ: float
    bdg_p: float
    cf: float
    c: float

    def as_floats(self) -> dict:
        return {k: (math.exp(v) if k != "p" and v < 700 else (v if k == "p" else math.inf))
                for k, v in self.__dict__.items()}


def first_estimate(T: float, M: float, beta: float, gamma: float, p: float) -> FirstEstimate:
    """Constant of the first a priori estimate.

    Z-part::

        c1 = 2 M^2 (1 v beta v gamma)
        A  = 3 c1 + 2 c1 T + c1^2 T
        c2 = 3^{p/2} (A v 4)^{p/2}
        cZ = c2^2 C_{p/2}^2 M^{2p} + 2 c2

    f-part, from Ito's formula for ``K(x) = U(|x|) - |x|`` with
    ``U = u^{2f(|.|)}`` (so ``K'' - 2f|K'| >= 4f`` and ``|K'| <= M - 1``)::

        cf = 5^{p-1} 2^{-p} (M-1)^p [(1 + |beta|^p T^p) + (gamma^p T^{p/2} + C_p) cZ]

    and ``c = cZ + cf``.
    """
    if p < 1 or T <= 0 or M < 1 or gamma < 0:
        raise PreconditionError("need p >= 1, T > 0, M >= 1, gamma >= 0")
    lM = math.log(M)
    lc1 = math.log(2.0) + 2 * lM + math.log(max(1.0, beta, gamma))
    lA = _lse(math.log(3.0) + lc1, math.log(2.0 * T) + lc1, 2 * lc1 + math.log(T))
    lc2 = 0.5 * p * (math.log(3.0) + max(lA, math.log(4.0)))
    lbdg = math.log(bdg_constant(p / 2.0))
    lcZ = _lse(2 * lc2 + 2 * lbdg + 2 * p * lM, math.log(2.0) + lc2)
    lbdg_p = math.log(bdg_constant(p))
    inner = _lse(_log(1.0 + abs(beta) ** p * T**p),
                 _lse(p * _log(gamma) + 0.5 * p * math.log(T), lbdg_p) + lcZ)
    lcf = (p - 1) * math.log(5.0) - p * math.log(2.0) + p * _log(M - 1.0) + inner
    return FirstEstimate(p, lc1, lA, lc2, lbdg, lcZ, lbdg_p, lcf, _lse(lcZ, lcf))


@dataclass
class SecondEstimate:
    """Chain of the Y-estimate and the combined constant; fields are logs."""

    p: float
    c1: float
    c2: float
    c3: float
    young: float
    c4: float
    cY: float
    first: FirstEstimate = field(repr=False)
    c: float = 0.0


def second_estimate(T: float, M: float, beta: float, gamma: float, p: float) -> SecondEstimate:
    """Constant of the second a priori estimate::

        c1 = p (p-1) / (2 M^p)
        c2 = M^p v (M^p |beta| + M^{2p} gamma^2 / (2 c1))
        c3 = 2 c2 (1 + 2 C_1^2 M^{2p} / c1)             C_1 = 3
        K  = (c3^p / p) (2/q)^{p-1}                      q = p/(p-1)
        c4 = 2 (c3 v K)
        cY = c4 exp(c4 T)                                E[(Y*)^p] <= cY E[|xi|^p + |alpha|^p]
        c  = cY + c_first (cY + 1)
    """
    if p <= 1:
        raise PreconditionError("the second estimate needs p > 1")
    first = first_estimate(T, M, beta, gamma, p)
    lM = math.log(M)
    lc1 = math.log(p * (p - 1) / 2.0) - p * lM
    lc2 = max(p * lM, _lse(p * lM + _log(abs(beta)), 2 * p * lM + 2 * _log(gamma) - math.log(2.0) - lc1))
    lc3 = math.log(2.0) + lc2 + _lse(0.0, math.log(2.0) + 2 * LOG_BDG_ONE + 2 * p * lM - lc1)
    q = p / (p - 1.0)
    lK = p * lc3 - math.log(p) + (p - 1) * (math.log(2.0) - math.log(q))
    lc4 = math.log(2.0) + max(lc3, lK)
    c4 = math.exp(lc4) if lc4 < 700 else math.inf
    lcY = lc4 + c4 * T
    lc = _lse(lcY, first.c + _lse(lcY, 0.0))
    return SecondEstimate(p, lc1, lc2, lc3, lK, lc4, lcY, first, lc)


def log_mass_constant(f_structure) -> float:
    """``log M^{f(|.|)} = 4 int_0^inf |f|``."""
    return 4.0 * f_structure.positive_mass
