import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jumpsde.errors import InvalidParameterError
from jumpsde.increments import (
    CHUNK_STEPS,
    IncrementGrid,
    RandomSource,
    block_grid,
    coarsen,
    compensate,
    generate_brownian,
    generate_poisson,
    iter_block_chunks,
    path_grid,
    write_grid_csv,
)


class TestRandomSource:
    def test_rejects_out_of_range_ids(self):
        with pytest.raises(InvalidParameterError):
            RandomSource(-1, 0)
        with pytest.raises(InvalidParameterError):
            RandomSource(0, 2**64)

    def test_max_ids_accepted(self):
        src = RandomSource(2**64 - 1, 2**64 - 1)
        assert generate_brownian(src, 4, 1, 1.0).shape == (4, 1)

    def test_distinct_streams_differ(self):
        a = generate_brownian(RandomSource(1, 0), 1000, 1, 1.0)
        b = generate_brownian(RandomSource(1, 1), 1000, 1, 1.0)
        c = generate_brownian(RandomSource(2, 0), 1000, 1, 1.0)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_distinct_streams_uncorrelated(self):
        n = 200_000
        a = generate_brownian(RandomSource(3, 0), n, 1, 1.0)[:, 0]
        b = generate_brownian(RandomSource(3, 1), n, 1, 1.0)[:, 0]
        assert abs(np.corrcoef(a, b)[0, 1]) < 4 / math.sqrt(n)

    def test_brownian_and_poisson_substreams_independent(self):
        n = 200_000
        src = RandomSource(5, 0)
        w = generate_brownian(src, n, 1, 1.0)[:, 0]
        dn = generate_poisson(src, n, 1.0, 1.0)
        assert abs(np.corrcoef(w, dn)[0, 1]) < 4 / math.sqrt(n)


class TestBrownian:
    def test_rejects_zero_dt(self):
        with pytest.raises(InvalidParameterError):
            generate_brownian(RandomSource(0, 0), 3, 1, 0.0)

    def test_rejects_bad_shape(self):
        with pytest.raises(InvalidParameterError):
            generate_brownian(RandomSource(0, 0), 3, 0, 0.1)

    def test_deterministic(self):
        a = generate_brownian(RandomSource(42, 0), 5000, 2, 0.01)
        b = generate_brownian(RandomSource(42, 0), 5000, 2, 0.01)
        assert np.array_equal(a, b)

    def test_prefix_stable_across_chunks(self):
        src = RandomSource(9, 4)
        long = generate_brownian(src, 3 * CHUNK_STEPS + 7, 1, 0.5)
        short = generate_brownian(src, CHUNK_STEPS + 1, 1, 0.5)
        assert np.array_equal(long[: CHUNK_STEPS + 1], short)

    def test_moments(self):
        n, dt = 10**6, 2.0**-10
        w = generate_brownian(RandomSource(42, 0), n, 1, dt)[:, 0]
        assert abs(w.mean()) < 4 * math.sqrt(dt / n)
        assert abs(w.var() / dt - 1) < 0.01


def _poisson_pmf(k, mean):
    return math.exp(-mean + k * math.log(mean) - math.lgamma(k + 1))


class TestPoisson:
    def test_zero_intensity(self):
        assert not generate_poisson(RandomSource(0, 0), 1000, 0.0, 0.1).any()

    def test_negative_intensity_rejected(self):
        with pytest.raises(InvalidParameterError):
            generate_poisson(RandomSource(0, 0), 10, -1.0, 0.1)

    def test_huge_mean_rejected(self):
        with pytest.raises(InvalidParameterError):
            generate_poisson(RandomSource(0, 0), 10, 1e7, 1.0)

    def test_deterministic(self):
        a = generate_poisson(RandomSource(42, 3), 5000, 2.0, 0.1)
        b = generate_poisson(RandomSource(42, 3), 5000, 2.0, 0.1)
        assert np.array_equal(a, b)
        assert a.dtype.kind == "i" and (a >= 0).all()

    def test_small_mean(self):
        n, lam, dt = 10**6, 1.0, 2.0**-14
        counts = generate_poisson(RandomSource(42, 0), n, lam, dt)
        assert abs(counts.mean() - lam * dt) < 4 * math.sqrt(lam * dt / n)

    @pytest.mark.parametrize("mean", [0.3, 4.0, 25.0])
    def test_distribution_goodness_of_fit(self, mean):
        n = 200_000
        counts = generate_poisson(RandomSource(11, 0), n, mean, 1.0)
        lo, hi = max(0, int(mean - 4 * math.sqrt(mean))), int(mean + 4 * math.sqrt(mean)) + 1
        observed = np.array([(counts <= lo).sum()] + [(counts == k).sum() for k in range(lo + 1, hi)]
                            + [(counts >= hi).sum()], dtype=float)
        probs = [sum(_poisson_pmf(k, mean) for k in range(lo + 1))]
        probs += [_poisson_pmf(k, mean) for k in range(lo + 1, hi)]
        probs.append(1 - sum(probs))
        expected = n * np.array(probs)
        keep = expected > 5
        chi2 = float(((observed[keep] - expected[keep]) ** 2 / expected[keep]).sum())
        dof = int(keep.sum()) - 1
        # normal approximation to the chi-square upper tail, far out
        assert chi2 < dof + 6 * math.sqrt(2 * dof)


class TestCompensate:
    def test_examples(self):
        assert compensate([0, 0], 1.0, 0.5).tolist() == [-0.5, -0.5]
        assert compensate([2], 1.0, 1.0).tolist() == [1.0]

    def test_martingale_moments(self):
        n, lam, dt = 10**6, 1.0, 1.0
        nbar = compensate(generate_poisson(RandomSource(8, 0), n, lam, dt), lam, dt)
        assert abs(nbar.mean()) < 4 * math.sqrt(lam * dt / n)
        assert abs(nbar.var() / (lam * dt) - 1) < 0.01


class TestCoarsen:
    def _grid(self, dw, dn, dt=0.25, lam=1.0):
        return IncrementGrid(dt, np.asarray(dw, dtype=float).reshape(-1, 1), np.asarray(dn), lam)

    def test_identity(self):
        g = path_grid(0, 0, 16, 2, 0.1, 1.0)
        c = coarsen(g, 1)
        assert np.array_equal(c.brownian, g.brownian) and np.array_equal(c.poisson, g.poisson)

    def test_block_sums(self):
        g = self._grid([0.1, -0.2, 0.3, 0.4], [0, 1, 2, 0])
        c = coarsen(g, 2)
        assert np.allclose(c.brownian[:, 0], [-0.1, 0.7], rtol=0, atol=1e-15)
        assert c.poisson.tolist() == [1, 2]
        assert c.dt_fine == 0.5 and c.n_steps == 2

    def test_non_divisor_rejected(self):
        with pytest.raises(InvalidParameterError):
            coarsen(path_grid(0, 0, 10, 1, 0.1, 1.0), 3)

    def test_batched(self):
        g = block_grid(4, range(3), 8, 1, 0.125, 2.0)
        c = coarsen(g, 4)
        for p in range(3):
            single = coarsen(path_grid(4, p, 8, 1, 0.125, 2.0), 4)
            assert np.array_equal(c.brownian[p], single.brownian)
            assert np.array_equal(c.poisson[p], single.poisson)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 6), st.integers(0, 6), st.integers(0, 2**32))
    def test_telescoping(self, p1, p2, seed):
        n = 2**12
        g = path_grid(seed, 0, n, 1, 1.0 / n, 3.0)
        r1, r2 = 2**p1, 2**p2
        two = coarsen(coarsen(g, r1), r2)
        one = coarsen(g, r1 * r2)
        assert np.array_equal(two.poisson, one.poisson)
        assert np.allclose(two.brownian, one.brownian, rtol=0, atol=1e-13)
        assert np.isclose(one.brownian.sum(), g.brownian.sum(), rtol=0, atol=1e-12)
        assert one.poisson.sum() == g.poisson.sum()
        assert math.isclose(one.horizon, g.horizon, rel_tol=1e-15)


class TestParallelLayout:
    def test_block_matches_per_path(self):
        g = block_grid(12, range(5, 9), 100, 2, 0.01, 3.0)
        for i, p in enumerate(range(5, 9)):
            single = path_grid(12, p, 100, 2, 0.01, 3.0)
            assert np.array_equal(g.brownian[i], single.brownian)
            assert np.array_equal(g.poisson[i], single.poisson)

    def test_chunks_reassemble(self):
        n = 2 * CHUNK_STEPS + 100
        chunks = list(iter_block_chunks(3, range(2), n, 1, 0.001, 5.0))
        dw = np.concatenate([c[0] for c in chunks], axis=1)
        dn = np.concatenate([c[1] for c in chunks], axis=1)
        g = block_grid(3, range(2), n, 1, 0.001, 5.0)
        assert np.array_equal(dw, g.brownian) and np.array_equal(dn, g.poisson)

    def test_grid_csv(self, tmp_path):
        g = path_grid(1, 2, 5, 2, 0.1, 1.0)
        out = tmp_path / "grid.csv"
        write_grid_csv(g, out)
        lines = out.read_text().splitlines()
        assert lines[0] == "step,dW_1,dW_2,dN"
        assert len(lines) == 6
        first = lines[1].split(",")
        assert int(first[0]) == 0
        assert float(first[1]) == g.brownian[0, 0] and int(first[3]) == g.poisson[0]
