"""Monte Carlo protocols: strong-error convergence and mean-square stability.

Paths are processed in fixed blocks of :data:`PATH_BLOCK` consecutive path
indices. Blocks are the unit of parallel work; their results are reduced in
block order, so reports are bitwise identical for any worker count.
"""

from __future__ import annotations

import enum
import math
import os
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TypeVar

import numpy as np

from .errors import InsufficientDataError, InvalidParameterError, NotApplicableError
from .increments import RandomSource, block_grid, coarsen, generate_brownian, generate_poisson, iter_block_chunks
from .models import JumpSdeProblem, LinearJumpSde, as_problem, exact_linear_solution
from .schemes import SchemeKind, SchemeSpec, integrate_block, make_stepper
from .stability import (
    MeanSquareClass,
    classify_mean_square,
    cstm_amplification,
    semi_tamed_amplification,
    stm_amplification,
)

__all__ = [
    "PATH_BLOCK",
    "AmplificationRecord",
    "ConvergenceConfig",
    "ConvergenceReport",
    "ConvergenceRow",
    "OrderFit",
    "Reference",
    "StabilityReport",
    "StabilityRow",
    "fit_order",
    "resolve_threads",
    "run_amplification_validation",
    "run_convergence",
    "run_stability_sweep",
]

PATH_BLOCK = 500
_BATCHES = 10
_MAX_DIVERGED = 0.01

T = TypeVar("T")


def resolve_threads(threads: int | str | None) -> int:
    if threads in (None, "auto"):
        return os.cpu_count() or 1
    threads = int(threads)
    if threads < 1:
        raise InvalidParameterError(f"threads must be >= 1, got {threads}")
    return threads


def _map_blocks(fn: Callable[[range], T], n_paths: int, threads: int | str | None) -> list[T]:
    blocks = [range(i, min(i + PATH_BLOCK, n_paths)) for i in range(0, n_paths, PATH_BLOCK)]
    workers = min(resolve_threads(threads), len(blocks))
    if workers <= 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, blocks))


# -- order fit ---------------------------------------------------------------------

@dataclass(frozen=True)
class OrderFit:
    slope: float
    intercept: float
    residual: float


def fit_order(points: Sequence[tuple[float, float]]) -> OrderFit:
    """Least squares of ``ln rmse`` against ``ln dt``; ``residual`` is the RMS log misfit."""
    pts = sorted((float(dt), float(err)) for dt, err in points
                 if math.isfinite(err) and err > 0 and dt > 0)
    if len(pts) < 3:
        raise InsufficientDataError(f"need at least 3 finite positive points, got {len(pts)}")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    return OrderFit(float(slope), float(intercept), float(np.sqrt(np.mean(resid**2))))


# -- strong convergence ---------------------------------------------------------------

class Reference(str, enum.Enum):
    EXACT_LINEAR = "exact"
    FINE_NUMERICAL = "fine"


@dataclass(frozen=True)
class ConvergenceConfig:
    """Strong-error experiment on ``[0, horizon]``.

    The fine grid has ``2**fine_exponent`` steps; each entry of ``ratios`` is
    a coarse step measured in fine steps. With a fine-numerical reference,
    coarse grids close to the reference bias the fitted order upward, so the
    default ratios start at 4.
    """

    problem: JumpSdeProblem
    scheme: SchemeSpec
    fine_exponent: int = 12
    ratios: tuple[int, ...] | None = None
    paths: int = 2000
    horizon: float = 1.0
    reference: Reference = Reference.EXACT_LINEAR
    reference_scheme: SchemeSpec | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "reference", Reference(self.reference))
        if self.ratios is None:
            start = 0 if self.reference is Reference.EXACT_LINEAR else 2
            object.__setattr__(self, "ratios", tuple(2**p for p in range(start, start + 5)))
        object.__setattr__(self, "ratios", tuple(int(r) for r in self.ratios))
        n = 2**self.fine_exponent
        if self.fine_exponent < 0:
            raise InvalidParameterError("fine_exponent must be >= 0")
        for r in self.ratios:
            if r < 1 or n % r:
                raise InvalidParameterError(f"ratio {r} does not divide 2**{self.fine_exponent}")
        if self.paths < 100:
            raise InvalidParameterError(f"paths must be >= 100, got {self.paths}")
        if not self.horizon > 0:
            raise InvalidParameterError(f"horizon must be > 0, got {self.horizon}")
        if self.reference is Reference.EXACT_LINEAR:
            lin = self.problem.linear
            if lin is None:
                raise InvalidParameterError("exact reference needs a linear problem")
            if not lin.c > -1:
                raise InvalidParameterError(f"exact reference needs c > -1, got {lin.c}")

    @property
    def n_fine(self) -> int:
        return 2**self.fine_exponent

    @property
    def dt_fine(self) -> float:
        return self.horizon / self.n_fine


@dataclass(frozen=True)
class ConvergenceRow:
    dt: float
    rmse: float
    mc_stderr: float
    diverged_fraction: float
    valid: bool


@dataclass(frozen=True)
class ConvergenceReport:
    scheme: SchemeSpec
    rows: list[ConvergenceRow]
    fitted_order: float
    fit_intercept: float
    fit_residual: float
    reference_diverged_fraction: float = 0.0
    flags: list[str] = field(default_factory=list)


def _convergence_block(config: ConvergenceConfig, paths: range):
    problem = config.problem
    dt = config.dt_fine
    grid = block_grid(config.seed, paths, config.n_fine, problem.m, dt, problem.lam)
    if config.reference is Reference.EXACT_LINEAR:
        w_T = grid.brownian.sum(axis=1)[:, 0]
        n_T = grid.poisson.sum(axis=1)
        ref = np.asarray(exact_linear_solution(problem.linear, config.horizon, w_T, n_T))[:, None]
        ref_bad = ~np.isfinite(ref[:, 0])
    else:
        ref_stepper = make_stepper(problem, config.reference_scheme or config.scheme)
        ref, ref_div = integrate_block(problem, ref_stepper, grid.brownian, grid.poisson, dt)
        ref_bad = ref_div >= 0
    stepper = make_stepper(problem, config.scheme)
    err2 = np.empty((len(paths), len(config.ratios)))
    diverged = np.empty_like(err2, dtype=bool)
    for j, ratio in enumerate(config.ratios):
        coarse = coarsen(grid, ratio)
        end, div = integrate_block(problem, stepper, coarse.brownian, coarse.poisson, coarse.dt_fine)
        diverged[:, j] = div >= 0
        with np.errstate(over="ignore", invalid="ignore"):
            err2[:, j] = np.sum((end - ref) ** 2, axis=-1)
    return err2, diverged, ref_bad


def _batch_stderr(err2: np.ndarray, rmse: float) -> float:
    if rmse == 0.0 or len(err2) < 2 * _BATCHES:
        return 0.0
    batch_mse = np.array([b.mean() for b in np.array_split(err2, _BATCHES)])
    with np.errstate(over="ignore", invalid="ignore"):
        # near-divergent paths can push the spread past float range; inf is the honest answer
        se_mse = batch_mse.std(ddof=1) / math.sqrt(_BATCHES)
    return float(se_mse / (2.0 * rmse))


def run_convergence(config: ConvergenceConfig, threads: int | str | None = 1) -> ConvergenceReport:
    """Endpoint RMSE against the reference for each coarse step size, with the fitted order."""
    parts = _map_blocks(lambda b: _convergence_block(config, b), config.paths, threads)
    err2 = np.concatenate([p[0] for p in parts])
    diverged = np.concatenate([p[1] for p in parts])
    ref_bad = np.concatenate([p[2] for p in parts])
    flags: list[str] = []
    if ref_bad.any():
        flags.append(f"reference diverged on {ref_bad.mean():.2%} of paths; those paths are excluded")

    rows = []
    for j, ratio in enumerate(config.ratios):
        dt = config.dt_fine * ratio
        div_frac = float(diverged[:, j].mean())
        keep = ~diverged[:, j] & ~ref_bad & np.isfinite(err2[:, j])
        if not keep.any():
            rows.append(ConvergenceRow(dt, math.inf, math.nan, div_frac, False))
            flags.append(f"dt={dt:g}: every path diverged")
            continue
        e = err2[keep, j]
        rmse = float(math.sqrt(e.mean()))
        valid = div_frac <= _MAX_DIVERGED and rmse > 0
        if div_frac > _MAX_DIVERGED:
            flags.append(f"dt={dt:g}: {div_frac:.2%} of paths diverged; row excluded from the fit")
        rows.append(ConvergenceRow(dt, rmse, _batch_stderr(e, rmse), div_frac, valid))
    rows.sort(key=lambda r: r.dt)

    try:
        fit = fit_order([(r.dt, r.rmse) for r in rows if r.valid])
    except InsufficientDataError as exc:
        flags.append(f"order not fitted: {exc}")
        fit = OrderFit(math.nan, math.nan, math.nan)
    return ConvergenceReport(
        scheme=config.scheme,
        rows=rows,
        fitted_order=fit.slope,
        fit_intercept=fit.intercept,
        fit_residual=fit.residual,
        reference_diverged_fraction=float(ref_bad.mean()),
        flags=flags,
    )


# -- mean-square stability ------------------------------------------------------------

@dataclass(frozen=True)
class StabilityRow:
    dt: float
    n_steps: int
    times: np.ndarray
    mean_square: np.ndarray
    classification: MeanSquareClass
    rate: float
    diverged_fraction: float


@dataclass(frozen=True)
class StabilityReport:
    scheme: SchemeSpec
    horizon: float
    paths: int
    rows: list[StabilityRow]


def _zero_is_absorbing(problem: JumpSdeProblem, scheme: SchemeSpec) -> bool:
    zero = np.zeros((1, problem.d))
    fields = [problem.drift(zero), problem.diffusion(zero), problem.jump(zero)]
    split = scheme.split or problem.split
    if scheme.kind.uses_split and split is not None:
        fields += [split.u(zero), split.v(zero)]
    return all(np.all(np.asarray(f) == 0) for f in fields)


def _record_steps(n_steps: int, max_points: int) -> np.ndarray:
    stride = max(1, -(-n_steps // max_points))
    return np.arange(0, n_steps + 1, stride)


def _stability_block(problem, scheme, stepper, dt, n_steps, record, seed, absorbing, paths: range):
    """Per-record-point sums of |Y|^2 over the block, plus the diverged count."""
    sums = np.zeros(len(record))
    y = np.broadcast_to(problem.x0, (len(paths), problem.d)).astype(float)
    sums[0] = float(np.sum(np.sum(y * y, axis=-1)))
    diverged = np.zeros(len(paths), dtype=bool)
    next_rec = 1
    step = 0
    done = False
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        for dW, dN in iter_block_chunks(seed, paths, n_steps, problem.m, dt, problem.lam):
            counts = dN.astype(float)
            for i in range(dN.shape[1]):
                y = stepper(y, dW[:, i], counts[:, i], dt)
                step += 1
                bad = ~np.isfinite(y).all(axis=-1)
                if bad.any():
                    diverged |= bad
                    y[bad] = np.nan
                if next_rec < len(record) and step == record[next_rec]:
                    sq = np.sum(y * y, axis=-1)
                    sums[next_rec] = math.inf if diverged.any() else float(np.sum(sq))
                    next_rec += 1
                    if absorbing and not diverged.any() and not np.any(y):
                        # exact zeros stay zero; the remaining sums are 0
                        done = True
                        break
            if done:
                break
    return sums, int(diverged.sum())


def run_stability_sweep(problem: JumpSdeProblem, scheme: SchemeSpec, dts: Sequence[float], horizon: float,
                        paths: int, seed: int = 0, threads: int | str | None = 1,
                        max_points: int = 2000, epsilon: float = 1e-3) -> StabilityReport:
    """Simulate ``paths`` paths per step size and classify ``E|Y_n|^2``.

    Each step size uses ``floor(horizon/dt)`` steps, so the simulated horizon
    may fall short of ``horizon`` by less than one step.
    """
    if not horizon > 0 or paths < 1:
        raise InvalidParameterError("horizon must be > 0 and paths >= 1")
    stepper = make_stepper(problem, scheme)
    absorbing = _zero_is_absorbing(problem, scheme)
    rows = []
    for dt in dts:
        if not dt > 0:
            raise InvalidParameterError(f"dt must be > 0, got {dt}")
        n_steps = int(math.floor(horizon / dt * (1 + 1e-12)))
        if n_steps < 1:
            raise InvalidParameterError(f"dt={dt:g} exceeds the horizon {horizon:g}")
        record = _record_steps(n_steps, max_points)
        parts = _map_blocks(
            lambda b: _stability_block(problem, scheme, stepper, dt, n_steps, record, seed, absorbing, b),
            paths, threads,
        )
        total = np.zeros(len(record))
        n_div = 0
        for sums, nd in parts:
            total = total + sums
            n_div += nd
        ms = total / paths
        times = record * dt
        cls = classify_mean_square(times, ms, epsilon) if len(record) >= 8 else None
        rows.append(StabilityRow(
            dt=float(dt),
            n_steps=n_steps,
            times=times,
            mean_square=ms,
            classification=cls.label if cls else MeanSquareClass.INCONCLUSIVE,
            rate=cls.rate if cls else math.nan,
            diverged_fraction=n_div / paths,
        ))
    return StabilityReport(scheme=scheme, horizon=horizon, paths=paths, rows=rows)


# -- one-step amplification ------------------------------------------------------------

@dataclass(frozen=True)
class AmplificationRecord:
    scheme: str
    theta: float | None
    dt: float
    samples: int
    empirical: float
    closed_form: float
    stderr: float
    z: float


def _closed_form_factor(kind: SchemeKind, a, b, c, lam, theta, dt) -> float:
    if kind is SchemeKind.STM:
        return stm_amplification(a, b, c, lam, theta, dt)
    if kind is SchemeKind.EXPLICIT_EULER:
        return stm_amplification(a, b, c, lam, 0.0, dt)
    if kind is SchemeKind.CSTM:
        return cstm_amplification(a, b, c, lam, theta, dt)
    if kind.uses_split:
        return semi_tamed_amplification(a, b, c, lam, dt)
    raise NotApplicableError(f"no closed-form one-step factor for {kind.value}")


def run_amplification_validation(a: float, b: float, c: float, lam: float, theta: float, dt: float,
                                 samples: int, scheme: SchemeKind | str = SchemeKind.CSTM,
                                 seed: int = 0) -> AmplificationRecord:
    """Compare the empirical one-step ratio ``E|Y_1|^2 / |Y_0|^2`` with the closed form.

    Samples are one-step realisations from ``Y_0 = 1`` drawn from a single
    stream; the semi-tamed scheme uses the split ``u = ax``, ``v = 0``.
    """
    kind = SchemeKind(scheme)
    if samples < 100_000:
        raise InvalidParameterError(f"samples must be >= 1e5, got {samples}")
    closed = _closed_form_factor(kind, a, b, c, lam, theta, dt)
    problem = as_problem(LinearJumpSde(a, b, c, lam, 1.0))
    spec = SchemeSpec(kind, theta if kind.uses_theta else 0.5)
    source = RandomSource(seed, 0)
    dW = generate_brownian(source, samples, 1, dt)
    dN = generate_poisson(source, samples, lam, dt).astype(float)
    y1 = make_stepper(problem, spec)(np.ones((samples, 1)), dW, dN, dt)
    ratio = y1[:, 0] ** 2
    empirical = float(ratio.mean())
    stderr = float(ratio.std(ddof=1) / math.sqrt(samples))
    if stderr > 1e-12 * abs(empirical):
        z = (empirical - closed) / stderr
    else:
        # degenerate noise: the one-step map is deterministic
        z = 0.0 if math.isclose(empirical, closed, rel_tol=1e-12, abs_tol=1e-300) else math.inf
    return AmplificationRecord(
        scheme=kind.value,
        theta=theta if kind.uses_theta else None,
        dt=dt,
        samples=samples,
        empirical=empirical,
        closed_form=closed,
        stderr=stderr,
        z=float(z),
    )
