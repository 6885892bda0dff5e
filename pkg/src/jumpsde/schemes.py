"""One-step maps and path integration for jump-diffusion schemes.

All steppers broadcast over leading axes, so ``y`` may be a single state of
shape ``(d,)`` or a block of states ``(P, d)`` with matching ``dW`` of shape
``(P, m)`` and jump increments of shape ``(P,)``.

Compensated schemes are written against the compensated increment
``dN - lam*dt``. When integrating from raw counts the identity
``(1-theta) dt f_lam(y) + h(y) (dN - lam dt) = (1-theta) dt f(y) + h(y) (dN - theta lam dt)``
is used, which makes the compensated and plain theta maps share the same
floating-point operations at ``theta = 0``.
"""

from __future__ import annotations

import enum
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError, SingularParameterError, SolverDivergenceError
from .increments import IncrementGrid, coarsen
from .models import DriftSplit, JumpSdeProblem, compensated_drift

__all__ = [
    "ImplicitMethod",
    "ImplicitSolveConfig",
    "SchemeKind",
    "SchemeSpec",
    "Stepper",
    "Trajectory",
    "integrate_block",
    "integrate_path",
    "make_stepper",
    "step_compensated_semi_tamed",
    "step_compensated_tamed",
    "step_cstm",
    "step_explicit_euler",
    "step_semi_tamed",
    "step_stm",
    "step_tamed",
    "tamed_increment",
]


class SchemeKind(str, enum.Enum):
    EXPLICIT_EULER = "explicit-euler"
    STM = "stm"
    CSTM = "cstm"
    TAMED = "tamed"
    COMPENSATED_TAMED = "compensated-tamed"
    SEMI_TAMED = "semi-tamed"
    COMPENSATED_SEMI_TAMED = "compensated-semi-tamed"

    @property
    def uses_theta(self) -> bool:
        return self in (SchemeKind.STM, SchemeKind.CSTM)

    @property
    def uses_split(self) -> bool:
        return self in (SchemeKind.SEMI_TAMED, SchemeKind.COMPENSATED_SEMI_TAMED)


class ImplicitMethod(str, enum.Enum):
    FIXED_POINT = "fixed-point"
    NEWTON = "newton"


@dataclass(frozen=True)
class ImplicitSolveConfig:
    """Settings of the implicit stage for theta > 0.

    ``tolerance`` bounds the residual norm relative to ``max(1, |rhs|)``.
    With ``FIXED_POINT`` the damped Newton iteration is still used as a
    fallback when the contraction fails.
    """

    tolerance: float = 1e-12
    max_iterations: int = 100
    method: ImplicitMethod = ImplicitMethod.FIXED_POINT

    def __post_init__(self):
        if not self.tolerance > 0:
            raise InvalidParameterError(f"tolerance must be > 0, got {self.tolerance}")
        if self.max_iterations < 1:
            raise InvalidParameterError(f"max_iterations must be >= 1, got {self.max_iterations}")
        object.__setattr__(self, "method", ImplicitMethod(self.method))


@dataclass(frozen=True)
class SchemeSpec:
    kind: SchemeKind
    theta: float = 0.5
    split: DriftSplit | None = None
    implicit: ImplicitSolveConfig = field(default_factory=ImplicitSolveConfig)

    def __post_init__(self):
        object.__setattr__(self, "kind", SchemeKind(self.kind))
        if not 0.0 <= self.theta <= 1.0:
            raise InvalidParameterError(f"theta must lie in [0, 1], got {self.theta}")

    @property
    def label(self) -> str:
        if self.kind.uses_theta:
            return f"{self.kind.value}(theta={self.theta:g})"
        return self.kind.value


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    diverged_at: int | None = None


# -- building blocks -----------------------------------------------------------

def _norm(x: np.ndarray) -> np.ndarray:
    """Euclidean norm over the last axis, overflow-safe, keeping the axis."""
    return np.hypot.reduce(np.abs(x), axis=-1, keepdims=True)


def _as_state(y) -> np.ndarray:
    return np.atleast_1d(np.asarray(y, dtype=float))


def _noise(problem: JumpSdeProblem, y: np.ndarray, dW, jump) -> np.ndarray:
    dW = np.asarray(dW, dtype=float)
    if dW.ndim == 0:
        dW = dW[None]
    jump = np.asarray(jump, dtype=float)
    diffusion = np.einsum("...ij,...j->...i", problem.diffusion(y), dW)
    return diffusion + problem.jump(y) * jump[..., None]


def tamed_increment(drift_value: np.ndarray, dt: float) -> np.ndarray:
    """``dt F / (1 + dt |F|)``; always of norm below one."""
    return dt * drift_value / (1.0 + dt * _norm(drift_value))


def _check_dt(dt: float) -> None:
    if not dt > 0:
        raise InvalidParameterError(f"dt must be > 0, got {dt}")


# -- implicit stage ------------------------------------------------------------

def _fixed_point(F, rhs, theta_dt, z, cfg, scale):
    """Iterate ``z <- rhs + theta_dt F(z)``; returns (z, converged mask)."""
    done = np.zeros(rhs.shape[:-1], dtype=bool)
    out = z.copy()
    with np.errstate(all="ignore"):
        for _ in range(cfg.max_iterations):
            z_next = rhs + theta_dt * F(z)
            # z - theta_dt F(z) - rhs == z - z_next
            res = _norm(z - z_next)[..., 0]
            newly = ~done & (res <= cfg.tolerance * scale)
            out[newly] = z[newly]
            done |= newly
            if done.all():
                break
            z = np.where(np.isfinite(z_next), z_next, z)
    return out, done


def _newton(F, rhs, theta_dt, z, cfg, scale):
    """Damped Newton on ``G(z) = z - theta_dt F(z) - rhs`` with a forward-difference Jacobian."""
    d = rhs.shape[-1]
    eye = np.eye(d)

    def residual(v):
        return v - theta_dt * F(v) - rhs

    g = residual(z)
    res = _norm(g)[..., 0]
    with np.errstate(all="ignore"):
        for _ in range(cfg.max_iterations):
            if np.all(res <= cfg.tolerance * scale):
                break
            h = 1e-7 * (1.0 + _norm(z))
            jac = np.empty(z.shape + (d,))
            for j in range(d):
                jac[..., :, j] = (residual(z + h * eye[j]) - g) / h
            step = np.linalg.solve(jac, -g[..., None])[..., 0]
            alpha = np.ones(res.shape)
            trial = z + alpha[..., None] * step
            g_trial = residual(trial)
            res_trial = _norm(g_trial)[..., 0]
            for _ in range(30):
                worse = ~(res_trial <= (1.0 - 1e-4 * alpha) * res) & (res > cfg.tolerance * scale)
                if not worse.any():
                    break
                alpha = np.where(worse, 0.5 * alpha, alpha)
                trial = z + alpha[..., None] * step
                g_trial = residual(trial)
                res_trial = _norm(g_trial)[..., 0]
            z, g, res = trial, g_trial, res_trial
    return z, res


def _solve_implicit(F, rhs, theta_dt, predictor, cfg: ImplicitSolveConfig):
    flat_rhs = rhs.reshape(-1, rhs.shape[-1])
    flat_pred = predictor.reshape(flat_rhs.shape)
    out = np.full_like(flat_rhs, np.nan)
    live = np.isfinite(flat_rhs).all(axis=-1)
    if not live.any():
        return out.reshape(rhs.shape)

    def F_flat(v):
        return F(v)

    r, z0 = flat_rhs[live], flat_pred[live]
    z0 = np.where(np.isfinite(z0), z0, r)
    scale = np.maximum(1.0, _norm(r)[..., 0])
    if cfg.method is ImplicitMethod.FIXED_POINT:
        z, done = _fixed_point(F_flat, r, theta_dt, z0, cfg, scale)
    else:
        z, done = z0.copy(), np.zeros(r.shape[0], dtype=bool)
    if not done.all():
        idx = ~done
        zn, res = _newton(F_flat, r[idx], theta_dt, z0[idx], cfg, scale[idx])
        bad = ~(res <= cfg.tolerance * scale[idx])
        if bad.any():
            worst = np.nanmax(np.where(np.isfinite(res[bad]), res[bad] / scale[idx][bad], np.inf))
            raise SolverDivergenceError(
                f"implicit stage did not converge in {cfg.max_iterations} iterations", float(worst)
            )
        z[idx] = zn
    out[live] = z
    return out.reshape(rhs.shape)


def _theta_map(problem, theta, y, dW, jump, dt, implicit, compensated):
    """``Z - theta dt F(Z) = y + (1-theta) dt f(y) + g(y) dW + h(y) jump``.

    ``F`` is ``f`` or ``f_lam``; ``jump`` is already the effective jump
    increment (``dN`` for STM, ``dN - theta lam dt`` for CSTM).
    """
    rhs = y + ((1.0 - theta) * dt) * problem.drift(y) + _noise(problem, y, dW, jump)
    if theta == 0.0:
        return rhs
    theta_dt = theta * dt
    linear = problem.linear
    if linear is not None:
        coeff = linear.a + linear.lam * linear.c if compensated else linear.a
        denom = 1.0 - theta_dt * coeff
        if denom == 0.0:
            raise SingularParameterError("1 - theta*dt*A vanishes for this step size")
        return rhs / denom
    if compensated:
        def F(v):
            return compensated_drift(problem, v)
    else:
        F = problem.drift
    with np.errstate(all="ignore"):
        predictor = rhs + theta_dt * F(y)
    return _solve_implicit(F, rhs, theta_dt, predictor, implicit)


# -- public steppers -----------------------------------------------------------

def step_stm(problem: JumpSdeProblem, theta: float, y, dW, dN, dt: float,
             implicit: ImplicitSolveConfig | None = None) -> np.ndarray:
    """Stochastic theta step with the raw Poisson increment ``dN``."""
    _check_dt(dt)
    return _theta_map(problem, theta, _as_state(y), dW, dN, dt, implicit or ImplicitSolveConfig(), False)


def step_cstm(problem: JumpSdeProblem, theta: float, y, dW, dNbar, dt: float,
              implicit: ImplicitSolveConfig | None = None) -> np.ndarray:
    """Compensated stochastic theta step; ``dNbar = dN - lam*dt``."""
    _check_dt(dt)
    jump = np.asarray(dNbar, dtype=float) + (1.0 - theta) * problem.lam * dt
    return _theta_map(problem, theta, _as_state(y), dW, jump, dt, implicit or ImplicitSolveConfig(), True)


def step_explicit_euler(problem: JumpSdeProblem, y, dW, dN, dt: float) -> np.ndarray:
    return step_stm(problem, 0.0, y, dW, dN, dt)


def step_tamed(problem: JumpSdeProblem, y, dW, dN, dt: float) -> np.ndarray:
    _check_dt(dt)
    y = _as_state(y)
    return y + tamed_increment(problem.drift(y), dt) + _noise(problem, y, dW, dN)


def step_compensated_tamed(problem: JumpSdeProblem, y, dW, dNbar, dt: float) -> np.ndarray:
    _check_dt(dt)
    y = _as_state(y)
    return y + tamed_increment(compensated_drift(problem, y), dt) + _noise(problem, y, dW, dNbar)


def _semi_tamed(problem, split, y, dW, dN, dt):
    return y + split.u(y) * dt + tamed_increment(split.v(y), dt) + _noise(problem, y, dW, dN)


def step_semi_tamed(problem: JumpSdeProblem, split: DriftSplit | None, y, dW, dN, dt: float) -> np.ndarray:
    """Lipschitz part ``u`` stepped explicitly, superlinear part ``v`` tamed."""
    _check_dt(dt)
    return _semi_tamed(problem, _resolve_split(problem, split), _as_state(y), dW, dN, dt)


def step_compensated_semi_tamed(problem: JumpSdeProblem, split: DriftSplit | None, y, dW, dNbar,
                                dt: float) -> np.ndarray:
    """Compensated form; the same map as :func:`step_semi_tamed` with ``dN = dNbar + lam*dt``."""
    _check_dt(dt)
    dN = np.asarray(dNbar, dtype=float) + problem.lam * dt
    return _semi_tamed(problem, _resolve_split(problem, split), _as_state(y), dW, dN, dt)


def _resolve_split(problem: JumpSdeProblem, split: DriftSplit | None) -> DriftSplit:
    split = split or problem.split
    if split is None:
        raise InvalidParameterError(f"semi-tamed scheme needs a drift split; problem {problem.name!r} has none")
    return split


# -- path integration ------------------------------------------------------------

Stepper = Callable[[np.ndarray, np.ndarray, np.ndarray, float], np.ndarray]


def make_stepper(problem: JumpSdeProblem, scheme: SchemeSpec) -> Stepper:
    """Return ``step(y, dW, counts, dt)`` for ``scheme``, driven by raw Poisson counts."""
    kind, theta, cfg, lam = scheme.kind, scheme.theta, scheme.implicit, problem.lam

    if kind is SchemeKind.EXPLICIT_EULER:
        return lambda y, dW, dN, dt: _theta_map(problem, 0.0, y, dW, dN, dt, cfg, False)
    if kind is SchemeKind.STM:
        return lambda y, dW, dN, dt: _theta_map(problem, theta, y, dW, dN, dt, cfg, False)
    if kind is SchemeKind.CSTM:
        return lambda y, dW, dN, dt: _theta_map(problem, theta, y, dW, dN - (theta * lam) * dt, dt, cfg, True)
    if kind is SchemeKind.TAMED:
        return lambda y, dW, dN, dt: step_tamed(problem, y, dW, dN, dt)
    if kind is SchemeKind.COMPENSATED_TAMED:
        return lambda y, dW, dN, dt: step_compensated_tamed(problem, y, dW, dN - lam * dt, dt)
    split = _resolve_split(problem, scheme.split)
    # both semi-tamed forms collapse onto one kernel driven by raw counts
    return lambda y, dW, dN, dt: _semi_tamed(problem, split, y, dW, dN, dt)


def integrate_block(problem: JumpSdeProblem, stepper: Stepper, dW: np.ndarray, dN: np.ndarray,
                    dt: float, y0: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Advance a block of paths through all steps of ``dW`` ``(P, n, m)`` / ``dN`` ``(P, n)``.

    Returns the end states ``(P, d)`` (NaN for diverged paths) and the index
    of the first non-finite step per path (-1 when the path stayed finite).
    """
    n_paths, n_steps = dN.shape
    y = np.broadcast_to(problem.x0 if y0 is None else y0, (n_paths, problem.d)).astype(float)
    diverged_at = np.full(n_paths, -1, dtype=np.int64)
    counts = dN.astype(float)
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n_steps):
            y = stepper(y, dW[:, i], counts[:, i], dt)
            bad = ~np.isfinite(y).all(axis=-1)
            fresh = bad & (diverged_at < 0)
            if fresh.any():
                diverged_at[fresh] = i + 1
                y[bad] = np.nan
    return y, diverged_at


def integrate_path(problem: JumpSdeProblem, scheme: SchemeSpec, grid: IncrementGrid,
                   ratio: int = 1) -> Trajectory:
    """Integrate one path on ``grid`` coarsened by ``ratio``, starting from ``x0``."""
    if grid.poisson.ndim != 1:
        raise InvalidParameterError("integrate_path expects a single-path grid")
    coarse = coarsen(grid, ratio)
    dt = coarse.dt_fine
    stepper = make_stepper(problem, scheme)
    n = coarse.n_steps
    states = np.empty((n + 1, problem.d))
    states[0] = problem.x0
    y = problem.x0[None, :]
    counts = coarse.poisson.astype(float)
    diverged_at = None
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n):
            y = stepper(y, coarse.brownian[i][None, :], counts[i : i + 1], dt)
            if not np.isfinite(y).all():
                diverged_at = i + 1
                break
            states[i + 1] = y[0]
    stop = n + 1 if diverged_at is None else diverged_at
    return Trajectory(times=np.arange(stop) * dt, states=states[:stop], diverged_at=diverged_at)
