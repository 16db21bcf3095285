import numpy as np
import pytest

from gradquant.levels import bingrad_b_levels, orq_levels
from gradquant.oracle import (
    brute_force_binary_det,
    brute_force_rr_levels,
    rr_mse_3level,
)


class TestRrOracle:
    def test_symmetric_five_points(self):
        res = brute_force_rr_levels([-2.0, -1.0, 0.0, 1.0, 2.0])
        assert np.array_equal(res.best_levels, [-2.0, 0.0, 2.0])
        assert res.best_mse == pytest.approx(0.4)
        assert res.evaluations > 0

    def test_two_distinct_values_degenerate_interior(self):
        res = brute_force_rr_levels([0.0, 0.0, 1.0])
        # only {0, 1} exist; the interior collapses onto an endpoint
        assert res.best_mse == 0.0
        assert res.best_levels[0] == 0.0 and res.best_levels[-1] == 1.0

    def test_uniform_grid_interior_near_midpoint(self):
        grid = np.linspace(0.0, 1.0, 33)
        res = brute_force_rr_levels(grid)
        assert abs(res.best_levels[1] - 0.5) <= 1.0 / 32 + 1e-12

    def test_best_dominates_every_candidate(self):
        rng = np.random.default_rng(1)
        v = rng.laplace(0, 1, 48)
        res = brute_force_rr_levels(v)
        lo, hi = v.min(), v.max()
        for c in np.unique(v):
            assert res.best_mse <= rr_mse_3level(v, lo, c, hi) + 1e-15

    def test_size_limits(self):
        with pytest.raises(ValueError):
            brute_force_rr_levels(np.zeros(65))
        with pytest.raises(ValueError):
            brute_force_rr_levels([1.0, 2.0], s=5)

    def test_orq3_within_one_grid_step_of_oracle(self):
        # the count-form solve and the exact-error sweep may disagree by
        # at most one position among the distinct data values
        rng = np.random.default_rng(2)
        for _ in range(40):
            v = rng.normal(0, 1, int(rng.integers(4, 64)))
            res = brute_force_rr_levels(v)
            got = orq_levels(v, K=1)
            cand = np.unique(v)
            pos_oracle = int(np.searchsorted(cand, res.best_levels[1]))
            pos_solver = int(np.searchsorted(cand, got.levels[1]))
            assert abs(pos_oracle - pos_solver) <= 1
            # oracle is optimal by construction
            assert rr_mse_3level(v, v.min(), got.levels[1], v.max()) >= res.best_mse - 1e-15


class TestBinaryOracle:
    def test_two_point_clusters(self):
        res = brute_force_binary_det([0.0, 0.0, 4.0, 4.0])
        assert np.array_equal(res.best_levels, [0.0, 4.0])
        assert res.best_mse == 0.0

    def test_three_points_exact(self):
        res = brute_force_binary_det([-3.0, -1.0, 2.0])
        assert np.array_equal(res.best_levels, [-2.0, 2.0])
        assert res.best_mse == pytest.approx(2.0 / 3.0)
        assert res.evaluations == 2

    def test_oracle_dominates_mean_split(self):
        # the exhaustive split can never lose to the one-shot mean split
        rng = np.random.default_rng(3)
        for _ in range(30):
            v = rng.normal(0, 1, 200)
            res = brute_force_binary_det(v)
            bl = bingrad_b_levels(v)
            deq = np.where(v < bl.b_mid, bl.b_neg, bl.b_pos)
            assert res.best_mse <= np.mean((v - deq) ** 2) + 1e-12

    def test_refined_solver_near_oracle_on_unimodal(self):
        rng = np.random.default_rng(4)
        makers = [
            lambda n: rng.normal(0, 1, n),
            lambda n: rng.laplace(0, 1, n),
            lambda n: rng.uniform(-1, 1, n),
            lambda n: rng.exponential(1, n),
        ]
        for make in makers:
            for _ in range(5):
                v = make(800)
                res = brute_force_binary_det(v)
                bl = bingrad_b_levels(v, refine_iters=100)
                deq = np.where(v < bl.b_mid, bl.b_neg, bl.b_pos)
                mse = float(np.mean((v - deq) ** 2))
                assert mse <= 1.05 * res.best_mse

    def test_single_element(self):
        res = brute_force_binary_det([3.0])
        assert res.best_mse == 0.0

    def test_size_limit(self):
        with pytest.raises(ValueError):
            brute_force_binary_det(np.zeros(10_001))
