import numpy as np
import pytest

from robustmdp.simplex import (
    Distribution,
    EmptyGridError,
    InfiniteDivergenceError,
    build_simplex_grid,
    kl_divergence,
    multinomial_sample,
)

import oracles


class TestDistribution:
    def test_valid(self):
        d = Distribution(np.array([0.25, 0.75]))
        assert d.support_size == 2

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            Distribution(np.array([-0.1, 1.1]))

    def test_bad_sum_rejected(self):
        with pytest.raises(ValueError):
            Distribution(np.array([0.5, 0.4]))

    def test_counts_ratio_passes_tolerance(self):
        counts = np.array([18, 18, 19])
        Distribution(counts / counts.sum())

    def test_restricted_drops_zero_atoms(self):
        d = Distribution(np.array([0.0, 1.0, 0.0]))
        idx, r = d.restricted()
        assert list(idx) == [1]
        assert r.probs.tolist() == [1.0]

    def test_immutable(self):
        d = Distribution(np.array([0.5, 0.5]))
        with pytest.raises(ValueError):
            d.probs[0] = 0.3


class TestKlDivergence:
    def test_identity_is_zero(self):
        d = Distribution(np.array([0.5, 0.5]))
        assert kl_divergence(d, d) == 0.0

    def test_hand_value(self):
        q = Distribution(np.array([0.5, 0.5]))
        p = Distribution(np.array([0.25, 0.75]))
        expected = oracles.kl_direct([0.5, 0.5], [0.25, 0.75])
        got = kl_divergence(q, p)
        assert got == pytest.approx(expected, abs=1e-15)
        assert got == pytest.approx(0.1438, abs=1e-4)

    def test_zero_times_log_zero_convention(self):
        q = Distribution(np.array([1.0, 0.0]))
        p = Distribution(np.array([0.5, 0.5]))
        assert kl_divergence(q, p) == pytest.approx(np.log(2.0), abs=1e-15)

    def test_mismatched_sizes(self):
        q = Distribution(np.array([1.0]))
        p = Distribution(np.array([0.5, 0.5]))
        with pytest.raises(ValueError):
            kl_divergence(q, p)

    def test_infinite_divergence_signalled(self):
        q = Distribution(np.array([0.5, 0.5]))
        p = Distribution(np.array([1.0, 0.0]))
        with pytest.raises(InfiniteDivergenceError):
            kl_divergence(q, p)

    def test_zero_iff_equal_on_grid(self):
        grid = build_simplex_grid(3, 0.1)
        for a in grid.points[:12]:
            for b in grid.points[:12]:
                kl = kl_divergence(a, b)
                if np.allclose(a.probs, b.probs):
                    assert kl <= 1e-12
                else:
                    assert kl > 1e-6

    def test_joint_convexity(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            dim = rng.integers(2, 5)
            q1, q2, p1, p2 = (
                Distribution(rng.dirichlet(np.ones(dim)) * 0.98 + 0.02 / dim)
                for _ in range(4)
            )
            t = rng.random()
            mix_q = Distribution(t * q1.probs + (1 - t) * q2.probs)
            mix_p = Distribution(t * p1.probs + (1 - t) * p2.probs)
            lhs = kl_divergence(mix_q, mix_p)
            rhs = t * kl_divergence(q1, p1) + (1 - t) * kl_divergence(q2, p2)
            assert lhs <= rhs + 1e-10

    def test_nonnegative(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            dim = rng.integers(2, 6)
            q = Distribution(rng.dirichlet(np.ones(dim)))
            p = Distribution(rng.dirichlet(np.ones(dim)) * 0.9 + 0.1 / dim)
            assert kl_divergence(q, p) >= 0.0


class TestSimplexGrid:
    def test_interior_count_dim3(self):
        grid = build_simplex_grid(3, 0.1)
        assert len(grid.points) == 36

    def test_single_point_dim2(self):
        grid = build_simplex_grid(2, 0.5)
        assert len(grid.points) == 1
        assert grid.points[0].probs.tolist() == [0.5, 0.5]

    def test_empty_interior_is_error(self):
        with pytest.raises(EmptyGridError):
            build_simplex_grid(3, 0.5)

    def test_points_interior_and_on_lattice(self):
        grid = build_simplex_grid(4, 0.2)
        for point in grid.points:
            assert np.all(point.probs >= grid.increment - 1e-12)
            multiples = point.probs / grid.increment
            assert np.allclose(multiples, np.round(multiples), atol=1e-12)
            assert point.probs.sum() == pytest.approx(1.0, abs=1e-12)

    def test_counts_match_compositions(self):
        # positive compositions of 1/increment into dim parts
        from math import comb

        for dim, inc in [(2, 0.1), (3, 0.2), (4, 0.25)]:
            n = round(1 / inc)
            grid = build_simplex_grid(dim, inc)
            assert len(grid.points) == comb(n - 1, dim - 1)

    def test_rejects_bad_increments(self):
        for inc in [0.0, 1.0, -0.1, 0.3]:
            with pytest.raises(ValueError):
                build_simplex_grid(3, inc)

    def test_rejects_dim_one(self):
        with pytest.raises(ValueError):
            build_simplex_grid(1, 0.5)


class TestMultinomialSample:
    def test_degenerate(self):
        p = Distribution(np.array([1.0, 0.0, 0.0]))
        counts = multinomial_sample(p, 55, seed=3)
        assert counts.tolist() == [55, 0, 0]

    def test_counts_sum(self):
        p = Distribution(np.array([0.2, 0.3, 0.5]))
        assert multinomial_sample(p, 999, seed=1).sum() == 999

    def test_three_sigma_band(self):
        p = Distribution(np.ones(3) / 3)
        n = 3_000_000
        counts = multinomial_sample(p, n, seed=42)
        sigma = np.sqrt(n * (1 / 3) * (2 / 3))
        assert np.all(np.abs(counts - n / 3) <= 3 * sigma)

    def test_deterministic_given_seed(self):
        p = Distribution(np.array([0.4, 0.6]))
        a = multinomial_sample(p, 1000, seed=9)
        b = multinomial_sample(p, 1000, seed=9)
        assert np.array_equal(a, b)

    def test_rejects_zero_draws(self):
        p = Distribution(np.array([0.4, 0.6]))
        with pytest.raises(ValueError):
            multinomial_sample(p, 0, seed=1)
