"""Closed-form mean-square stability quantities and an empirical classifier.

Linear quantities refer to the scalar test equation
``dX = aX dt + bX dW + cX dN`` with jump intensity ``lam``; the exact
solution is mean-square stable iff ``linear_l(a, b, c, lam) < 0``.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, NotApplicableError, SingularParameterError

__all__ = [
    "LinearStabilityInputs",
    "MeanSquareClass",
    "MeanSquareClassification",
    "NonlinearStabilityInputs",
    "TamedCertificate",
    "backward_euler_rate_beta1",
    "classify_mean_square",
    "compensated_backward_euler_rate_beta2",
    "cstm_amplification",
    "cstm_max_stable_dt",
    "linear_l",
    "nonlinear_alpha",
    "semi_tamed_amplification",
    "semi_tamed_linear_max_dt",
    "semi_tamed_nonlinear_max_dt",
    "stm_amplification",
    "tamed_linear_max_dt",
    "tamed_nonlinear_max_dt",
    "tamed_upper_factor",
]


@dataclass(frozen=True)
class LinearStabilityInputs:
    a: float
    b: float
    c: float
    lam: float
    theta: float | None = None
    dt: float | None = None

    def __post_init__(self):
        if self.dt is not None and not self.dt > 0:
            raise InvalidParameterError(f"dt must be > 0, got {self.dt}")


@dataclass(frozen=True)
class NonlinearStabilityInputs:
    """Structural constants of the coefficients.

    ``mu``, ``sigma``, ``gamma``: one-sided Lipschitz constant of ``f`` and
    squared Lipschitz constants of ``g`` and ``h``. The remaining fields
    describe a split drift ``u + v``: ``rho`` (dissipativity of ``u``),
    ``K`` (Lipschitz constant of ``u``), ``beta`` and ``beta_bar``
    (dissipativity and growth of ``v`` with exponent ``a_exp``), ``theta_g``
    and ``C`` (Lipschitz constants of ``g`` and ``h``).
    """

    mu: float = 0.0
    sigma: float = 0.0
    gamma: float = 0.0
    lam: float = 0.0
    rho: float = 0.0
    beta: float = 0.0
    beta_bar: float = 0.0
    theta_g: float = 0.0
    K: float = 0.0
    C: float = 0.0
    a_exp: float = 2.0

    def __post_init__(self):
        for name in ("sigma", "gamma", "beta", "beta_bar", "K", "C", "lam"):
            if getattr(self, name) < 0:
                raise InvalidParameterError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not self.a_exp > 1:
            raise InvalidParameterError(f"a_exp must be > 1, got {self.a_exp}")


# -- linear test equation ------------------------------------------------------

def linear_l(a: float, b: float, c: float, lam: float) -> float:
    return 2 * a + b * b + lam * c * (2 + c)


def cstm_amplification(a: float, b: float, c: float, lam: float, theta: float, dt: float) -> float:
    """One-step mean-square factor of the compensated theta method."""
    A = a + lam * c
    denom = 1.0 - theta * dt * A
    if denom == 0.0:
        raise SingularParameterError("1 - theta*dt*(a + lam*c) vanishes")
    num = 1.0 + (2 * (1 - theta) * A + b * b + c * c * lam) * dt + ((1 - theta) * A * dt) ** 2
    return num / denom**2


def cstm_max_stable_dt(a: float, b: float, c: float, lam: float, theta: float) -> float:
    """Supremum of stable step sizes; ``inf`` for theta >= 1/2."""
    l = linear_l(a, b, c, lam)
    if l >= 0:
        raise NotApplicableError(f"l = {l:g} >= 0: the exact solution is not mean-square stable")
    if theta >= 0.5:
        return math.inf
    A = a + lam * c
    if A == 0.0:
        return math.inf
    return -l / ((1 - 2 * theta) * A * A)


def stm_amplification(a: float, b: float, c: float, lam: float, theta: float, dt: float) -> float:
    """One-step mean-square factor of the (uncompensated) stochastic theta method."""
    denom = 1.0 - theta * a * dt
    if denom == 0.0:
        raise SingularParameterError("1 - theta*dt*a vanishes")
    r = 1.0 + (1 - theta) * a * dt
    num = r * r + b * b * dt + c * c * (lam * dt + (lam * dt) ** 2) + 2 * c * lam * dt * r
    return num / denom**2


def semi_tamed_amplification(a: float, b: float, c: float, lam: float, dt: float) -> float:
    """One-step factor of the semi-tamed scheme with split ``u = ax``, ``v = 0``."""
    A = a + lam * c
    return 1.0 + (A * dt) ** 2 + (b * b + lam * c * c + 2 * a + 2 * lam * c) * dt


def semi_tamed_linear_max_dt(a: float, b: float, c: float, lam: float) -> float:
    l = linear_l(a, b, c, lam)
    if l >= 0:
        raise NotApplicableError(f"l = {l:g} >= 0: the exact solution is not mean-square stable")
    A = a + lam * c
    if A == 0.0:
        return math.inf
    return -l / (A * A)


@dataclass(frozen=True)
class TamedCertificate:
    max_dt: float
    case: int | None
    diagnostic: str = ""


def tamed_upper_factor(a: float, b: float, c: float, lam: float, dt: float) -> tuple[float, int]:
    """Upper bound on the tamed one-step factor, and which sign case produced it."""
    l = linear_l(a, b, c, lam)
    if a * (1 + lam * c * dt) <= 0:
        return 1.0 + (a * a + (lam * c) ** 2) * dt * dt + (b * b + lam * c * (2 + c)) * dt, 1
    return 1.0 + ((a + lam * c) * dt) ** 2 + l * dt, 2


def tamed_linear_max_dt(a: float, b: float, c: float, lam: float) -> TamedCertificate:
    """Largest ``T`` such that every step size in ``(0, T)`` is certified stable.

    The sign ``a(1 + lam c dt)`` can flip once, at ``dt = -1/(lam c)``; the
    two sufficient conditions are checked piecewise from ``dt = 0`` upwards.
    """
    l = linear_l(a, b, c, lam)
    if l >= 0:
        raise NotApplicableError(f"l = {l:g} >= 0: the exact solution is not mean-square stable")
    bound1 = (2 * a - l) / (a * a + (lam * c) ** 2) if 2 * a - l > 0 else 0.0
    A = a + lam * c
    bound2 = math.inf if A == 0.0 else -l / (A * A)

    lc = lam * c
    breaks = [0.0]
    if lc < 0 and a != 0.0:
        breaks.append(-1.0 / lc)
    breaks.append(math.inf)

    best, case = 0.0, None
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        probe = lo + 1e-12 if math.isinf(hi) else 0.5 * (lo + hi)
        which = 1 if a * (1 + lc * probe) <= 0 else 2
        bound = bound1 if which == 1 else bound2
        if bound <= lo:
            break
        best, case = min(bound, hi), which
        if bound < hi:
            break
    if case is None:
        return TamedCertificate(0.0, None, "neither sufficient condition certifies any dt > 0")
    return TamedCertificate(best, case)


# -- nonlinear bounds ------------------------------------------------------------

def nonlinear_alpha(mu: float, sigma: float, gamma: float, lam: float) -> float:
    if sigma < 0 or gamma < 0:
        raise InvalidParameterError("sigma and gamma must be >= 0")
    sg = math.sqrt(gamma)
    return 2 * mu + sigma + lam * sg * (sg + 2)


def backward_euler_rate_beta1(mu: float, sigma: float, gamma: float, lam: float, dt: float) -> float:
    """Decay exponent of backward Euler (theta = 1, uncompensated jumps)."""
    alpha = nonlinear_alpha(mu, sigma, gamma, lam)
    if alpha >= 0:
        raise NotApplicableError(f"alpha = {alpha:g} >= 0")
    if not dt > 0:
        raise InvalidParameterError(f"dt must be > 0, got {dt}")
    if lam * lam * gamma > 0 and not dt < -alpha / (lam * lam * gamma):
        raise NotApplicableError(f"dt = {dt:g} is not below -alpha/(lam^2 gamma) = {-alpha / (lam * lam * gamma):g}")
    denom = 1 - 2 * mu * dt
    if denom <= 0:
        raise NotApplicableError("1 - 2 mu dt must be positive")
    sg = math.sqrt(gamma)
    num_excess = (sigma + lam * gamma + 2 * lam * sg) * dt + lam * lam * gamma * dt * dt
    # log1p keeps the dt -> 0 limit accurate
    return (math.log1p(num_excess) - math.log1p(-2 * mu * dt)) / dt


def compensated_backward_euler_rate_beta2(mu: float, sigma: float, gamma: float, lam: float, dt: float) -> float:
    """Decay exponent of compensated backward Euler; negative for every dt when alpha < 0."""
    alpha = nonlinear_alpha(mu, sigma, gamma, lam)
    if alpha >= 0:
        raise NotApplicableError(f"alpha = {alpha:g} >= 0")
    if not dt > 0:
        raise InvalidParameterError(f"dt must be > 0, got {dt}")
    sg = math.sqrt(gamma)
    return (math.log1p((sigma + lam * gamma) * dt) - math.log1p(-2 * (mu + lam * sg) * dt)) / dt


def semi_tamed_nonlinear_max_dt(inputs: NonlinearStabilityInputs) -> float:
    p = inputs
    alpha1 = -2 * p.rho + p.theta_g**2 + p.lam * p.C * (2 + p.C)
    if alpha1 >= 0:
        raise NotApplicableError(f"alpha1 = {alpha1:g} must be negative")
    if not 2 * p.beta - p.beta_bar > 0:
        raise NotApplicableError("hypothesis 2*beta - beta_bar > 0 fails")
    k = p.K + p.lam * p.C
    bounds = [
        -alpha1 / k**2 if k > 0 else math.inf,
        2 * p.beta / ((2 * k + p.beta_bar) * p.beta_bar) if p.beta_bar > 0 else math.inf,
        (2 * p.beta - p.beta_bar) / (2 * k * p.beta_bar) if k * p.beta_bar > 0 else math.inf,
    ]
    return min(bounds)


def tamed_nonlinear_max_dt(inputs: NonlinearStabilityInputs) -> float:
    p = inputs
    if not p.beta - p.C * p.beta_bar > 0:
        raise NotApplicableError("hypothesis beta - C*beta_bar > 0 fails")
    if not p.beta_bar * (1 + 2 * p.C) - 2 * p.beta < 0:
        raise NotApplicableError("hypothesis beta_bar*(1 + 2C) - 2*beta < 0 fails")
    q = p.K + p.theta_g**2 + p.lam * p.C**2 - 2 * p.mu * p.lam + 2 * p.lam * p.C * p.K
    if not q < 0:
        raise NotApplicableError("hypothesis K + theta^2 + lam C^2 - 2 mu lam + 2 lam C K < 0 fails")
    denom = 2 * p.K**2 + (p.lam * p.C) ** 2
    bound1 = -q / denom if denom > 0 else math.inf
    bound2 = (p.beta - p.C * p.beta_bar) / p.beta_bar**2 if p.beta_bar > 0 else math.inf
    return min(bound1, bound2)


# -- empirical classification ------------------------------------------------------

class MeanSquareClass(str, enum.Enum):
    STABLE = "Stable"
    UNSTABLE = "Unstable"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class MeanSquareClassification:
    label: MeanSquareClass
    rate: float


def classify_mean_square(times: Sequence[float], values: Sequence[float],
                         epsilon: float = 1e-3) -> MeanSquareClassification:
    """Classify a mean-square trajectory from the log-slope over its second half.

    A series that has decayed to exactly zero (underflow of every path) is
    stable; its rate is fitted on the positive part of the second half, or
    reported as ``-inf`` when nothing positive remains there.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.shape != v.shape or t.ndim != 1:
        raise InvalidParameterError("times and values must be 1-D and of equal length")
    if len(v) < 8:
        raise InvalidParameterError(f"need at least 8 points, got {len(v)}")
    if not np.all(np.isfinite(v)):
        return MeanSquareClassification(MeanSquareClass.UNSTABLE, math.inf)
    half = len(v) // 2
    t, v = t[half:], v[half:]
    if np.any(v <= 0):
        pos = v > 0
        rate = -math.inf
        if pos.sum() >= 2 and np.ptp(t[pos]) > 0:
            rate = float(np.polyfit(t[pos], np.log(v[pos]), 1)[0])
        return MeanSquareClassification(MeanSquareClass.STABLE, rate)
    rate = float(np.polyfit(t, np.log(v), 1)[0])
    if rate < -epsilon:
        label = MeanSquareClass.STABLE
    elif rate > epsilon:
        label = MeanSquareClass.UNSTABLE
    else:
        label = MeanSquareClass.INCONCLUSIVE
    return MeanSquareClassification(label, rate)
