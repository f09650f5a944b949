import math

import numpy as np
import pytest

from src.srblab.errors import SplittingError, UnsupportedDimensionError
from src.srblab.geometry import (
    Splitting,
    angle,
    check_perturbed_splitting,
    complement,
    direct_sum_margin,
    gap_distances,
    min_norm,
    operator_norm,
    projection_and_angle,
    projection_norm,
)
from src.srblab.space import Frame, NormedSpace


def line(space, *coords):
    return Frame(space, np.array(coords, dtype=float)[:, None])


class TestGapDistances:
    """Aperture and Hausdorff distances between subspaces."""

    def test_same_span_is_zero(self, euclid3):
        """Test that two bases of one plane are at distance zero."""
        e = Frame(euclid3, np.eye(3)[:, :2])
        e2 = Frame(euclid3, np.array([[1.0, 1.0], [2.0, -1.0], [0.0, 0.0]]))
        assert gap_distances(e, e2) == (0.0, 0.0)

    def test_coordinate_axes_sup_norm(self, sup2):
        """Test delta_a = d_H = 1 for the two axes of the sup-normed plane."""
        delta_a, d_h = gap_distances(line(sup2, 1, 0), line(sup2, 0, 1))
        assert delta_a == pytest.approx(1.0)
        assert d_h == pytest.approx(1.0)

    @pytest.mark.parametrize("theta", [math.pi / 6, math.pi / 3])
    def test_euclidean_lines(self, theta):
        """Test delta_a = sin(theta) and d_H = 2 sin(theta / 2) for lines at angle theta."""
        space = NormedSpace.lp(2, 2.0)
        delta_a, d_h = gap_distances(line(space, 1, 0), line(space, math.cos(theta), math.sin(theta)))
        assert delta_a == pytest.approx(math.sin(theta), rel=1e-9)
        assert d_h == pytest.approx(2.0 * math.sin(theta / 2.0), rel=1e-9)

    def test_sandwich_on_random_lines(self, space3, rng):
        """Test delta_a <= d_H <= 2 delta_a."""
        for _ in range(3):
            e, e2 = (Frame(space3, rng.standard_normal((3, 1))) for _ in range(2))
            delta_a, d_h = gap_distances(e, e2)
            assert delta_a <= d_h * (1.0 + 1e-3) + 1e-12
            assert d_h <= 2.0 * delta_a * (1.0 + 1e-3) + 1e-12

    def test_large_subspaces_unsupported(self):
        """Test that sphere searches refuse subspaces above dimension three."""
        space = NormedSpace.lp(5, 1.0)
        e = Frame(space, np.eye(5)[:, :4])
        e2 = Frame(space, np.eye(5)[:, 1:])
        with pytest.raises(UnsupportedDimensionError):
            gap_distances(e, e2)


class TestAnglesAndProjections:
    """Angles and parallel projections of splittings."""

    @pytest.mark.parametrize("theta", [math.pi / 2, math.pi / 4, math.pi / 8])
    def test_euclidean_splitting(self, theta):
        """Test alpha = sin(theta) and |pi| = 1 / sin(theta) in the Euclidean plane."""
        space = NormedSpace.lp(2, 2.0)
        split = projection_and_angle(line(space, 1, 0), line(space, math.cos(theta), math.sin(theta)))
        assert split.angle == pytest.approx(math.sin(theta), rel=1e-9)
        assert split.proj_norm == pytest.approx(1.0 / math.sin(theta), rel=1e-9)
        assert split.symmetric_ok

    def test_sup_norm_diagonal_complement(self, sup2):
        """Test projecting onto e1 along the diagonal in the sup norm."""
        e, f = line(sup2, 1, 0), line(sup2, 1, 1)
        # pi(x) = (x1 - x2) e1, so |pi| = 2 and alpha = 1/2
        assert projection_norm(e, f) == pytest.approx(2.0)
        assert angle(e, f) == pytest.approx(0.5)

    def test_plane_and_line_in_three_dimensions(self, euclid3):
        """Test the searched angle of a plane against an orthogonal line."""
        e = Frame(euclid3, np.eye(3)[:, :2])
        f = line(euclid3, 0, 0, 1)
        assert angle(e, f) == pytest.approx(1.0, rel=1e-6)
        assert projection_norm(e, f) == pytest.approx(1.0, rel=1e-9)

    def test_not_a_direct_sum(self, euclid3):
        """Test that intersecting subspaces raise SplittingError."""
        e = Frame(euclid3, np.eye(3)[:, :2])
        f = Frame(euclid3, np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]]))
        with pytest.raises(SplittingError):
            projection_and_angle(e, f)

    def test_dimensions_must_add_up(self, euclid3):
        """Test that E + F must be the whole space."""
        with pytest.raises(SplittingError):
            projection_and_angle(line(euclid3, 1, 0, 0), line(euclid3, 0, 1, 0))

    def test_projection_of_a_vector(self, sup2):
        """Test the E-component of x along F."""
        split = Splitting(line(sup2, 1, 0), line(sup2, 0, 1), 1.0, 1.0)
        np.testing.assert_allclose(split.project(np.array([3.0, -2.0])), [3.0, 0.0])

    def test_direct_sum_margin(self, euclid3):
        """Test the margin of an orthonormal splitting."""
        assert direct_sum_margin(Frame(euclid3, np.eye(3)[:, :2]), line(euclid3, 0, 0, 1)) == pytest.approx(1.0)


class TestComplement:
    """Complements built from the ambient John inner product."""

    def test_euclidean_complement(self, euclid3):
        """Test that the complement of a coordinate plane is the normal line."""
        split = complement(Frame(euclid3, np.eye(3)[:, :2]))
        normal = split.f.basis[:, 0] / np.linalg.norm(split.f.basis[:, 0])
        assert abs(normal[2]) == pytest.approx(1.0, abs=1e-3)
        assert split.proj_norm == pytest.approx(1.0, rel=1e-2)
        assert split.complement_quality == pytest.approx(split.angle * math.sqrt(2.0))

    def test_angle_floor(self, space3, rng):
        """Test alpha(E, F) >= 1/sqrt(D), the guarantee of the ambient John inner product."""
        e = Frame(space3, rng.standard_normal((3, 2)))
        split = complement(e)
        assert split.angle >= (1.0 / math.sqrt(3.0)) * (1.0 - 1e-2)

    def test_sup_norm_axis(self, sup2):
        """Test that the complement of e1 in the sup-normed plane is the e2 axis."""
        split = complement(line(sup2, 1, 0))
        direction = split.f.basis[:, 0] / np.abs(split.f.basis[:, 0]).max()
        assert abs(direction[1]) == pytest.approx(1.0)
        assert abs(direction[0]) < 1e-2
        assert split.angle == pytest.approx(1.0, rel=1e-2)

    def test_full_space_has_no_complement(self, sup2):
        """Test that E = R^D raises SplittingError."""
        with pytest.raises(SplittingError):
            complement(Frame(sup2, np.eye(2)))


class TestPerturbedSplitting:
    """Persistence of complements under small perturbations of E."""

    def test_small_tilt_passes(self):
        """Test that every row holds for a slightly tilted line."""
        space = NormedSpace.lp(2, 2.0)
        report = check_perturbed_splitting(line(space, 1, 0), line(space, 1, 0.05), line(space, 0, 1), case="tilt")
        assert report.rows
        assert not report.failures
        assert report.vacuous_count == 0

    def test_large_tilt_is_vacuous(self):
        """Test that rows are vacuous once d_H |pi| >= 1."""
        space = NormedSpace.lp(2, 2.0)
        e, f = line(space, 1, 0), line(space, 1, 1)
        report = check_perturbed_splitting(e, line(space, -1, 1), f, case="far")
        assert not report.failures
        assert report.vacuous_count == len(report.rows)


class TestOperatorNorms:
    """Exact and searched operator norms."""

    MATRIX = np.array([[1.0, 2.0], [3.0, 4.0]])

    @pytest.mark.parametrize(
        "space,expected",
        [
            (NormedSpace.lp(2, math.inf), 7.0),
            (NormedSpace.lp(2, 1.0), 6.0),
            (NormedSpace.polytope(np.eye(2)), 7.0),
            (NormedSpace.weighted_sup([1.0, 2.0]), 10.0),
        ],
    )
    def test_exact_norms(self, space, expected):
        """Test closed-form and vertex-enumeration operator norms."""
        assert operator_norm(self.MATRIX, space) == pytest.approx(expected)

    def test_searched_norm_matches_bounds(self):
        """Test that the l^3 norm lies between the l^1 and l^inf interpolation bounds."""
        value = operator_norm(self.MATRIX, NormedSpace.lp(2, 3.0))
        assert np.linalg.svd(self.MATRIX, compute_uv=False)[0] / 2 ** (1 / 6) <= value <= 7.0

    def test_min_norm(self, sup2):
        """Test inf |Av| over unit v for a diagonal map."""
        assert min_norm(np.diag([2.0, 3.0]), Frame(sup2, np.eye(2))) == pytest.approx(2.0)
        assert min_norm(np.diag([2.0, 3.0]), line(sup2, 0, 1)) == pytest.approx(3.0)
