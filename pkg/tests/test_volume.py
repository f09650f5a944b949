import math

import numpy as np
import pytest

from src.srblab.errors import ConditioningError, InputError
from src.srblab.space import Frame, LinearMap, NormedSpace
from src.srblab.volume import (
    coordinate_log_ratio,
    det_restricted,
    induced_volume_parallelepiped,
    orthogonality_defect,
    unit_ball_coord_volume,
)


def within(estimate, expected, sigmas=4.0):
    return abs(estimate.value - expected) <= sigmas * estimate.std_error + 1e-12


class TestUnitBallVolume:
    """Coordinate volumes of subspace unit balls."""

    def test_one_dimensional_is_exact(self, sup2):
        """Test that k = 1 needs no sampling."""
        est = unit_ball_coord_volume(Frame(sup2, np.array([[2.0], [1.0]])))
        assert est.method == "exact_1d"
        assert est.value == pytest.approx(1.0)
        assert est.std_error == 0.0

    @pytest.mark.parametrize(
        "p,expected",
        [(math.inf, 4.0), (1.0, 2.0), (2.0, math.pi)],
    )
    def test_standard_planes(self, p, expected):
        """Test the square, diamond and disc in R^2."""
        frame = Frame(NormedSpace.lp(2, p), np.eye(2))
        est = unit_ball_coord_volume(frame, seed=3, target_rel_err=5e-3)
        assert est.method == "monte_carlo"
        assert within(est, expected)
        assert est.rel_error <= 5e-3

    def test_scaling_of_basis(self, sup2):
        """Test that doubling the basis quarters the coordinate volume."""
        est = unit_ball_coord_volume(Frame(sup2, 2.0 * np.eye(2)), seed=5, target_rel_err=5e-3)
        assert within(est, 1.0)

    def test_same_seed_same_estimate(self, euclid3):
        """Test that a fixed seed reproduces the estimate bit for bit."""
        frame = Frame(euclid3, np.array([[1.0, 0.0], [0.5, 1.0], [0.0, 0.2]]))
        a = unit_ball_coord_volume(frame, seed=11, target_rel_err=1e-2)
        b = unit_ball_coord_volume(frame, seed=11, target_rel_err=1e-2)
        assert a == b

    def test_nonpositive_target(self, sup2):
        """Test that the target relative error must be positive."""
        with pytest.raises(InputError):
            unit_ball_coord_volume(Frame(sup2, np.eye(2)), target_rel_err=0.0)

    def test_sample_cap_reports_missed_target(self, sup2):
        """Test that reaching the cap returns the estimate with target_met False."""
        est = unit_ball_coord_volume(
            Frame(sup2, np.eye(2)), target_rel_err=1e-6, batch_size=1000, sample_cap=2000
        )
        assert not est.target_met
        assert est.n_samples == 2000

    def test_acceptance_floor(self, sup2):
        """Test that a poor envelope raises ConditioningError."""
        with pytest.raises(ConditioningError):
            unit_ball_coord_volume(Frame(sup2, np.eye(2)), acceptance_floor=0.99)


class TestParallelepiped:
    """Induced volumes of parallelepipeds."""

    def test_segment_length(self, sup2):
        """Test that m_E of a segment is the norm of its vector."""
        est = induced_volume_parallelepiped(Frame(sup2, np.array([[3.0], [-1.0]])))
        assert est.value == pytest.approx(3.0)

    def test_euclidean_unit_square(self):
        """Test that an orthonormal Euclidean frame spans unit volume."""
        est = induced_volume_parallelepiped(Frame(NormedSpace.lp(2, 2.0), np.eye(2)), seed=1)
        assert abs(est.value - 1.0) <= 4.0 * est.std_error

    def test_sup_norm_unit_square(self, sup2):
        """Test m_E(P[e1, e2]) = pi / 4 for the sup norm."""
        est = induced_volume_parallelepiped(Frame(sup2, np.eye(2)), seed=2)
        assert abs(est.value - math.pi / 4.0) <= 4.0 * est.std_error


class TestOrthogonalityDefect:
    """Sums of projection norms."""

    def test_orthonormal_euclidean(self, euclid3):
        """Test N = k for an orthonormal Euclidean frame."""
        assert orthogonality_defect(Frame(euclid3, np.eye(3)[:, :2])) == pytest.approx(2.0, rel=1e-6)

    def test_standard_basis_sup_norm(self, sup2):
        """Test N = 2 for the standard basis of the sup-normed plane."""
        assert orthogonality_defect(Frame(sup2, np.eye(2))) == pytest.approx(2.0, rel=1e-6)

    def test_skewed_euclidean_basis(self):
        """Test that a 45 degree basis has projection norms sqrt(2)."""
        frame = Frame(NormedSpace.lp(2, 2.0), np.array([[1.0, 1.0], [0.0, 1.0]]))
        assert orthogonality_defect(frame) == pytest.approx(2.0 * math.sqrt(2.0), rel=1e-5)

    def test_lower_bound_one(self, space3, rng):
        """Test N >= 1 on random frames."""
        frame = Frame(space3, rng.standard_normal((3, 2)))
        assert orthogonality_defect(frame) >= 1.0 - 1e-9


class TestDetRestricted:
    """Restricted determinants det(A|E)."""

    @pytest.mark.parametrize("p", [1.0, 2.0, math.inf])
    def test_diagonal_on_whole_plane(self, p):
        """Test det(diag(2, 3) | R^2) = 6 in closed form."""
        result = det_restricted(np.diag([2.0, 3.0]), Frame(NormedSpace.lp(2, p), np.eye(2)))
        assert result.method == "closed_form"
        assert result.value == pytest.approx(6.0, rel=1e-12)
        assert result.log_value == pytest.approx(math.log(6.0))

    def test_linear_map_input(self, sup2):
        """Test that LinearMap operators are accepted."""
        result = det_restricted(LinearMap(np.diag([2.0, 3.0])), Frame(sup2, np.eye(2)))
        assert result.value == pytest.approx(6.0)

    def test_degenerate_map(self, sup2):
        """Test that a singular restriction reports a degenerate zero."""
        result = det_restricted(np.array([[1.0, 1.0], [1.0, 1.0]]), Frame(sup2, np.eye(2)))
        assert result.degenerate
        assert result.value == 0.0
        assert result.log_value == -math.inf

    def test_one_dimensional(self, sup2):
        """Test det(A|span v) = |Av| / |v|."""
        result = det_restricted(np.diag([2.0, 3.0]), Frame(sup2, np.array([[1.0], [1.0]])))
        assert result.method == "exact_1d"
        assert result.value == pytest.approx(3.0)

    def test_isometry_between_planes(self):
        """Test that a coordinate swap of the sup norm has unit restricted determinant."""
        space = NormedSpace.lp(3, math.inf)
        swap = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
        result = det_restricted(swap, Frame(space, np.eye(3)[:, :2]), seed=4, target_rel_err=1e-2)
        assert result.method == "monte_carlo"
        assert result.value == pytest.approx(1.0, rel=1e-9)

    def test_shape_mismatch(self, sup2):
        """Test that a map on the wrong space raises InputError."""
        with pytest.raises(InputError):
            det_restricted(np.eye(3), Frame(sup2, np.eye(2)))


class TestCoordinateLogRatio:
    """Log ratios of coordinate volumes used by the Lyapunov driver."""

    def test_one_dimensional(self, sup2):
        """Test log cv(v) - log cv(2v) = log 2."""
        start = Frame(sup2, np.array([[1.0], [0.0]]))
        end = Frame(sup2, np.array([[2.0], [0.0]]))
        value, err = coordinate_log_ratio(start, end)
        assert value == pytest.approx(math.log(2.0))
        assert err == 0.0

    def test_same_span_is_exact(self, euclid3):
        """Test the closed form when both frames span the same plane."""
        start = Frame(euclid3, np.eye(3)[:, :2])
        end = Frame(euclid3, np.array([[2.0, 1.0], [0.0, 3.0], [0.0, 0.0]]))
        value, err = coordinate_log_ratio(start, end)
        assert value == pytest.approx(math.log(6.0))
        assert err == 0.0
