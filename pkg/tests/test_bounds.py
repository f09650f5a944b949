import math

import numpy as np
import pytest

from src.srblab.bounds import (
    BatteryConfig,
    perturbed_frame,
    random_frame,
    random_operator,
    verify_john_sandwich,
    verify_section2_bounds,
    verify_volume_axioms,
)
from src.srblab.space import NormedSpace


class TestBatteryConfig:
    """Case generation for the seeded batteries."""

    def test_cases_cycle_spaces_and_dimensions(self):
        """Test that cases walk through every (space, k) pair in order."""
        cfg = BatteryConfig(n_cases=7, spaces=("lp:1:3", "lp:2:3"), max_k=3, seed=1)
        cases = cfg.cases()
        assert [(spec, k) for spec, k, _ in cases] == [
            ("lp:1:3", 1), ("lp:1:3", 2), ("lp:1:3", 3),
            ("lp:2:3", 1), ("lp:2:3", 2), ("lp:2:3", 3),
            ("lp:1:3", 1),
        ]

    def test_cases_are_seeded(self):
        """Test that the case list depends only on the master seed."""
        assert BatteryConfig(n_cases=4, seed=9).cases() == BatteryConfig(n_cases=4, seed=9).cases()
        assert BatteryConfig(n_cases=4, seed=9).cases() != BatteryConfig(n_cases=4, seed=10).cases()


class TestGenerators:
    """Random frames, operators and perturbations."""

    def test_random_frame_is_unit_and_conditioned(self, space3, rng):
        """Test that random frames have unit columns and bounded condition number."""
        frame = random_frame(space3, 2, rng)
        np.testing.assert_allclose(frame.column_norms(), 1.0)
        assert np.linalg.cond(frame.basis) < 1e3

    def test_random_operator_singular_values(self, rng):
        """Test that singular values lie in the requested range."""
        s = np.linalg.svd(random_operator(4, rng, 0.5, 2.0), compute_uv=False)
        assert np.all(s >= 0.5 - 1e-12) and np.all(s <= 2.0 + 1e-12)

    def test_perturbed_frame_is_close(self, rng):
        """Test |v_i - w_i| is of the order of the perturbation size."""
        space = NormedSpace.lp(3, math.inf)
        frame = random_frame(space, 2, rng)
        moved = perturbed_frame(frame, 0.01, rng)
        gaps = space.norm((frame.basis - moved.basis).T)
        assert np.all(gaps <= 0.05)
        np.testing.assert_allclose(moved.column_norms(), 1.0)


class TestBatteries:
    """Small instances of the inequality batteries."""

    def test_volume_axioms_euclidean(self):
        """Test scaling, basis change and isometry invariance on Euclidean cases."""
        cfg = BatteryConfig(n_cases=3, spaces=("lp:2:3",), max_k=3, seed=5, target_rel_err=1e-2)
        report = verify_volume_axioms(cfg)
        assert len(report.rows) == 9
        assert not report.failures
        assert report.metadata["seed"] == 5

    def test_inequality_battery_small(self):
        """Test that a two-case battery produces passing rows and fitted constants."""
        cfg = BatteryConfig(n_cases=2, spaces=("lp:inf:3",), max_k=2, seed=3, target_rel_err=1e-2)
        report = verify_section2_bounds(cfg)
        names = {row.statement for row in report.rows}
        assert {"parallelepiped_hadamard", "svd_sandwich.lower", "multiplicativity", "volume_lipschitz"} <= names
        assert "split_sandwich.upper" in names
        assert not report.failures
        assert "volume_lipschitz" in report.fitted

    def test_inequality_battery_weighted_sup(self):
        """Test that the battery runs on a weighted sup norm, whose ambient John model feeds the complements."""
        cfg = BatteryConfig(n_cases=2, spaces=("weighted_sup:1,0.5,2",), max_k=2, seed=3, target_rel_err=1e-2)
        report = verify_section2_bounds(cfg)
        assert report.rows
        assert "split_sandwich.upper" in {row.statement for row in report.rows}

    def test_workers_do_not_change_results(self):
        """Test that the battery is independent of the worker count."""
        cfg1 = BatteryConfig(n_cases=2, spaces=("lp:1:3",), max_k=1, seed=8, target_rel_err=1e-2)
        cfg2 = BatteryConfig(n_cases=2, spaces=("lp:1:3",), max_k=1, seed=8, target_rel_err=1e-2, workers=2)
        rows1 = [row.as_record() for row in verify_volume_axioms(cfg1).rows]
        rows2 = [row.as_record() for row in verify_volume_axioms(cfg2).rows]
        assert rows1 == rows2

    def test_john_sandwich(self):
        """Test the John ellipsoid sandwich on fresh vectors."""
        report = verify_john_sandwich(spaces=("lp:1:3", "lp:inf:3"), max_k=2, n_vectors=2000, seed=1)
        assert len(report.rows) == 12
        assert not report.failures

    @pytest.mark.slow
    def test_full_battery(self):
        """Test the default 30-case battery across all norm families."""
        cfg = BatteryConfig(seed=42, target_rel_err=3e-3, workers=4)
        report = verify_section2_bounds(cfg)
        assert not report.failures
        assert verify_volume_axioms(cfg).failures == []
