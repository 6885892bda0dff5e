"""Reproducible Brownian and Poisson increments on a uniform fine grid.

Every path owns a counter-based Philox stream keyed by ``(seed, stream_id)``,
so the noise of a path never depends on how many other paths are simulated or
in which order. Streams are consumed in fixed-size chunks; chunk ``k`` of a
path is an independent sub-stream selected through the high word of the
Philox counter, which lets long runs draw noise lazily without changing a
single bit of the result.
"""

from __future__ import annotations

import csv
import math
from collections.abc import Iterator
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidParameterError

__all__ = [
    "CHUNK_STEPS",
    "IncrementGrid",
    "RandomSource",
    "block_grid",
    "coarsen",
    "compensate",
    "generate_brownian",
    "generate_poisson",
    "iter_block_chunks",
    "path_grid",
    "write_grid_csv",
]

CHUNK_STEPS = 4096
"""Steps drawn per sub-stream; part of the stream layout, never tune per run."""

# lambda*dt above which sequential-search inversion is replaced by numpy's
# transformed-rejection sampler, and the hard upper limit.
_INVERSION_MAX_MEAN = 10.0
_POISSON_MAX_MEAN = 1e6

_U64 = 1 << 64
_BROWNIAN, _POISSON = 0, 1


@dataclass(frozen=True)
class RandomSource:
    """Identity of one random stream: a global seed plus a path index."""

    seed: int = 0
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            value = getattr(self, name)
            if not 0 <= int(value) < _U64:
                raise InvalidParameterError(f"{name} must be an unsigned 64-bit integer, got {value}")

    def generator(self, kind: int, chunk: int = 0) -> np.random.Generator:
        key = (int(self.seed) << 64) | int(self.stream_id)
        counter = ((2 * int(chunk) + kind) % _U64) << 192
        return np.random.Generator(np.random.Philox(key=key, counter=counter))


def _check_dt(dt: float) -> None:
    if not dt > 0 or not math.isfinite(dt):
        raise InvalidParameterError(f"dt must be > 0, got {dt}")


def _check_lambda(lam: float, dt: float) -> None:
    if not lam >= 0 or not math.isfinite(lam):
        raise InvalidParameterError(f"lambda must be >= 0, got {lam}")
    if lam * dt > _POISSON_MAX_MEAN:
        raise InvalidParameterError(
            f"lambda*dt = {lam * dt:g} exceeds {_POISSON_MAX_MEAN:g}; refine the grid"
        )


def _normal_chunk(source: RandomSource, chunk: int, m: int, dt: float) -> np.ndarray:
    z = source.generator(_BROWNIAN, chunk).standard_normal((CHUNK_STEPS, m))
    return math.sqrt(dt) * z


def _poisson_by_inversion(u: np.ndarray, mean: float) -> np.ndarray:
    """Sequential-search inversion of the Poisson CDF, vectorised over ``u``."""
    counts = np.zeros(u.shape, dtype=np.int64)
    p = math.exp(-mean)
    cdf = p
    active = u > cdf
    k = 0
    # the cap guards against a CDF that saturates just below 1 in floating point
    k_max = int(mean + 40.0 * math.sqrt(mean) + 40)
    while active.any() and k < k_max:
        k += 1
        p *= mean / k
        cdf += p
        counts[active] += 1
        active &= u > cdf
    return counts


def _poisson_chunk(source: RandomSource, chunk: int, mean: float) -> np.ndarray:
    if mean == 0.0:
        return np.zeros(CHUNK_STEPS, dtype=np.int64)
    gen = source.generator(_POISSON, chunk)
    if mean <= _INVERSION_MAX_MEAN:
        return _poisson_by_inversion(gen.random(CHUNK_STEPS), mean)
    return gen.poisson(mean, CHUNK_STEPS).astype(np.int64)


def generate_brownian(source: RandomSource, n_steps: int, m: int, dt: float) -> np.ndarray:
    """Draw an ``(n_steps, m)`` matrix of independent Normal(0, dt) increments.

    The result depends only on ``source`` and the arguments; calling twice
    returns the same matrix.
    """
    _check_dt(dt)
    if n_steps < 0 or m < 1:
        raise InvalidParameterError(f"need n_steps >= 0 and m >= 1, got {n_steps}, {m}")
    n_chunks = -(-n_steps // CHUNK_STEPS)
    if n_chunks == 0:
        return np.zeros((0, m))
    parts = [_normal_chunk(source, k, m, dt) for k in range(n_chunks)]
    return np.concatenate(parts)[:n_steps]


def generate_poisson(source: RandomSource, n_steps: int, lam: float, dt: float) -> np.ndarray:
    """Draw ``n_steps`` independent Poisson(lam*dt) event counts."""
    _check_dt(dt)
    _check_lambda(lam, dt)
    if n_steps < 0:
        raise InvalidParameterError(f"need n_steps >= 0, got {n_steps}")
    n_chunks = -(-n_steps // CHUNK_STEPS)
    if n_chunks == 0:
        return np.zeros(0, dtype=np.int64)
    parts = [_poisson_chunk(source, k, lam * dt) for k in range(n_chunks)]
    return np.concatenate(parts)[:n_steps]


def compensate(counts, lam: float, dt: float) -> np.ndarray:
    """Subtract the mean ``lam*dt`` from Poisson counts."""
    return np.asarray(counts, dtype=float) - lam * dt


@dataclass(frozen=True)
class IncrementGrid:
    """Noise increments of one path (or a block of paths) on a uniform grid.

    ``brownian`` has shape ``(..., n_steps, m)`` and ``poisson`` has shape
    ``(..., n_steps)``; leading axes, when present, index paths.
    """

    dt_fine: float
    brownian: np.ndarray
    poisson: np.ndarray
    lam: float

    def __post_init__(self):
        _check_dt(self.dt_fine)
        if self.brownian.shape[:-1] != self.poisson.shape:
            raise InvalidParameterError(
                f"brownian shape {self.brownian.shape} does not match poisson shape {self.poisson.shape}"
            )

    @property
    def n_steps(self) -> int:
        return self.poisson.shape[-1]

    @property
    def m(self) -> int:
        return self.brownian.shape[-1]

    @property
    def horizon(self) -> float:
        return self.n_steps * self.dt_fine

    def compensated(self) -> np.ndarray:
        return compensate(self.poisson, self.lam, self.dt_fine)


def coarsen(grid: IncrementGrid, ratio: int) -> IncrementGrid:
    """Sum consecutive blocks of ``ratio`` fine increments into one coarse step."""
    ratio = int(ratio)
    if ratio < 1 or grid.n_steps % ratio:
        raise InvalidParameterError(f"ratio {ratio} does not divide n_steps={grid.n_steps}")
    if ratio == 1:
        return grid
    lead = grid.poisson.shape[:-1]
    n_coarse = grid.n_steps // ratio
    dw = grid.brownian.reshape(*lead, n_coarse, ratio, grid.m).sum(axis=-2)
    dn = grid.poisson.reshape(*lead, n_coarse, ratio).sum(axis=-1)
    return IncrementGrid(grid.dt_fine * ratio, dw, dn, grid.lam)


def path_grid(seed: int, path: int, n_steps: int, m: int, dt: float, lam: float) -> IncrementGrid:
    """Fine grid of a single path."""
    source = RandomSource(seed, path)
    return IncrementGrid(
        dt,
        generate_brownian(source, n_steps, m, dt),
        generate_poisson(source, n_steps, lam, dt),
        lam,
    )


def block_grid(seed: int, paths: range, n_steps: int, m: int, dt: float, lam: float) -> IncrementGrid:
    """Fine grids of consecutive paths stacked along a leading axis."""
    _check_lambda(lam, dt)
    grids = [path_grid(seed, p, n_steps, m, dt, lam) for p in paths]
    return IncrementGrid(
        dt,
        np.stack([g.brownian for g in grids]) if grids else np.zeros((0, n_steps, m)),
        np.stack([g.poisson for g in grids]) if grids else np.zeros((0, n_steps), dtype=np.int64),
        lam,
    )


def iter_block_chunks(
    seed: int, paths: range, n_steps: int, m: int, dt: float, lam: float
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(dW, dN)`` for a block of paths, one chunk of steps at a time.

    Concatenating the yielded chunks reproduces :func:`block_grid` exactly,
    without holding the whole horizon in memory.
    """
    _check_dt(dt)
    _check_lambda(lam, dt)
    sources = [RandomSource(seed, p) for p in paths]
    n_chunks = -(-n_steps // CHUNK_STEPS)
    for k in range(n_chunks):
        take = min(CHUNK_STEPS, n_steps - k * CHUNK_STEPS)
        dw = np.stack([_normal_chunk(s, k, m, dt)[:take] for s in sources])
        if lam == 0.0:
            dn = np.zeros((len(sources), take), dtype=np.int64)
        else:
            dn = np.stack([_poisson_chunk(s, k, lam * dt)[:take] for s in sources])
        yield dw, dn


def write_grid_csv(grid: IncrementGrid, path: str | Path) -> None:
    """Dump a single-path grid as ``step,dW_1..dW_m,dN``."""
    if grid.poisson.ndim != 1:
        raise InvalidParameterError("write_grid_csv expects a single-path grid")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", *(f"dW_{j + 1}" for j in range(grid.m)), "dN"])
        for i in range(grid.n_steps):
            writer.writerow([i, *(repr(float(v)) for v in grid.brownian[i]), int(grid.poisson[i])])
