"""Jump-diffusion problems ``dX = f dt + g dW + h dN`` and the built-in catalog.

Coefficient callables are vectorised over leading axes: given states of shape
``(..., d)`` the drift and jump return ``(..., d)`` and the diffusion returns
``(..., d, m)``.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import InvalidParameterError

__all__ = [
    "DriftSplit",
    "JumpSdeProblem",
    "LinearJumpSde",
    "as_problem",
    "builtin_problems",
    "compensated_drift",
    "exact_linear_second_moment",
    "exact_linear_solution",
    "get_problem",
]

VectorField = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class DriftSplit:
    """Drift written as ``u + v``: a globally Lipschitz part and a superlinear part."""

    u: VectorField
    v: VectorField


@dataclass(frozen=True)
class LinearJumpSde:
    """Scalar test equation ``dX = aX dt + bX dW + cX dN``."""

    a: float
    b: float
    c: float
    lam: float
    x0: float = 1.0

    def __post_init__(self):
        if not self.lam >= 0:
            raise InvalidParameterError(f"lambda must be >= 0, got {self.lam}")

    @property
    def l(self) -> float:  # noqa: E743
        """Mean-square growth rate ``2a + b^2 + lam*c*(2+c)`` of the exact solution."""
        return 2 * self.a + self.b**2 + self.lam * self.c * (2 + self.c)


@dataclass(frozen=True)
class JumpSdeProblem:
    """An autonomous jump-diffusion SDE with a scalar Poisson driver.

    ``split`` is only needed by the semi-tamed scheme. ``linear`` is set when
    the problem came from :func:`as_problem`; implicit schemes then use the
    closed-form solve of the implicit stage.
    """

    d: int
    m: int
    drift: VectorField
    diffusion: VectorField
    jump: VectorField
    lam: float
    x0: np.ndarray
    name: str = "custom"
    split: DriftSplit | None = None
    linear: LinearJumpSde | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.lam >= 0:
            raise InvalidParameterError(f"lambda must be >= 0, got {self.lam}")
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if x0.shape != (self.d,):
            raise InvalidParameterError(f"x0 must have shape ({self.d},), got {x0.shape}")
        object.__setattr__(self, "x0", x0)

    def with_split(self, split: DriftSplit | None) -> JumpSdeProblem:
        return JumpSdeProblem(
            self.d, self.m, self.drift, self.diffusion, self.jump,
            self.lam, self.x0, self.name, split, self.linear,
        )


def compensated_drift(problem: JumpSdeProblem, x) -> np.ndarray:
    """Return ``f(x) + lam * h(x)``."""
    x = np.asarray(x, dtype=float)
    if problem.lam == 0.0:
        return problem.drift(x)
    return problem.drift(x) + problem.lam * problem.jump(x)


def as_problem(linear: LinearJumpSde) -> JumpSdeProblem:
    a, b, c = float(linear.a), float(linear.b), float(linear.c)
    return JumpSdeProblem(
        d=1,
        m=1,
        drift=lambda x: a * x,
        diffusion=lambda x: b * x[..., None],
        jump=lambda x: c * x,
        lam=float(linear.lam),
        x0=np.array([linear.x0], dtype=float),
        name="linear",
        split=DriftSplit(u=lambda x: a * x, v=np.zeros_like),
        linear=linear,
    )


def exact_linear_solution(linear: LinearJumpSde, t: float, W_t, N_t) -> np.ndarray | float:
    """Pathwise solution ``x0 exp((a - b^2/2) t + b W_t) (1 + c)^N_t``.

    ``W_t`` and ``N_t`` may be arrays (one entry per path).
    """
    if not linear.c > -1:
        raise InvalidParameterError(f"exact solution needs c > -1, got c={linear.c}")
    if t < 0:
        raise InvalidParameterError(f"t must be >= 0, got {t}")
    a, b = linear.a, linear.b
    exponent = (a - 0.5 * b * b) * t + b * np.asarray(W_t, dtype=float) + math.log1p(linear.c) * np.asarray(N_t, dtype=float)
    out = linear.x0 * np.exp(exponent)
    return float(out) if np.ndim(out) == 0 else out


def exact_linear_second_moment(linear: LinearJumpSde, t: float) -> float:
    if t < 0:
        raise InvalidParameterError(f"t must be >= 0, got {t}")
    return linear.x0**2 * math.exp(linear.l * t)


# -- catalog -----------------------------------------------------------------

def _linear(a: float = 1.0, b: float = 1.0, c: float = 0.5, lam: float = 1.0, x0: float = 1.0) -> JumpSdeProblem:
    return as_problem(LinearJumpSde(a, b, c, lam, x0))


def _identity_jump(x):
    return x


def _identity_diffusion(x):
    return x[..., None]


def _quartic(lam: float = 1.0, x0: float = 1.0) -> JumpSdeProblem:
    return JumpSdeProblem(
        d=1, m=1,
        drift=lambda x: -(x**4),
        diffusion=_identity_diffusion,
        jump=_identity_jump,
        lam=lam, x0=x0, name="quartic",
    )


def _cubic_split(lam: float = 1.0, x0: float = 1.0) -> JumpSdeProblem:
    split = DriftSplit(u=lambda x: -4.0 * x, v=lambda x: -(x**3))
    return JumpSdeProblem(
        d=1, m=1,
        drift=lambda x: -4.0 * x - x**3,
        diffusion=_identity_diffusion,
        jump=_identity_jump,
        lam=lam, x0=x0, name="cubic_split", split=split,
    )


_CATALOG: dict[str, Callable[..., JumpSdeProblem]] = {
    "linear": _linear,
    "quartic": _quartic,
    "cubic_split": _cubic_split,
}


def builtin_problems() -> dict[str, Callable[..., JumpSdeProblem]]:
    """Name to factory mapping; factories take keyword parameters (``lam`` for the intensity)."""
    return dict(_CATALOG)


def get_problem(name: str, params: Mapping[str, Any] | None = None) -> JumpSdeProblem:
    """Build a catalog problem, accepting ``lambda`` as an alias for ``lam``."""
    try:
        factory = _CATALOG[name]
    except KeyError:
        raise LookupError(f"unknown problem {name!r}; known: {sorted(_CATALOG)}") from None
    kwargs = {("lam" if k == "lambda" else k): v for k, v in (params or {}).items()}
    try:
        return factory(**kwargs)
    except TypeError as exc:
        raise InvalidParameterError(f"bad parameters for problem {name!r}: {exc}") from None
