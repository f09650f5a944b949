"""
Tests for orbits, Lyapunov spectra, Oseledets frames and adapted norms.
"""

import math

import numpy as np
import pytest

from src.srblab.cocycle import (
    AdaptedNormParams,
    adapted_norm,
    chart_quality,
    iterate,
    kuratowski_bound,
    kuratowski_growth_bound,
    log_unstable_jacobian,
    lyapunov_spectrum,
    merge_exponents,
    orbit,
    oseledets_frames,
    slowly_varying_envelope,
    unstable_frame,
)
from src.srblab.errors import InputError
from src.srblab.space import LinearMap, NormedSpace
from src.srblab.systems import diag_linear, dissipative_galerkin, solenoid, toral_automorphism

LOG2 = math.log(2.0)


class TestOrbits:
    """Test cases for orbit histories"""

    def setup_method(self):
        self.system = solenoid()

    def test_orbit_is_genuine(self):
        """An orbit built by iteration has zero residual"""
        history = orbit(self.system, self.system.initial_point, 50)
        assert len(history) == 50
        assert history.points.shape == (51, 3)
        assert history.residual() < 1e-12

    def test_base_point_is_last_point(self):
        """The history is read backwards from its last point"""
        history = orbit(self.system, self.system.initial_point, 10)
        np.testing.assert_array_equal(history.base_point, history.points[-1])
        np.testing.assert_allclose(history.base_point, iterate(self.system, self.system.initial_point, 10))

    def test_points_are_read_only(self):
        """Stored orbit points cannot be modified"""
        history = orbit(self.system, self.system.initial_point, 5)
        with pytest.raises(ValueError):
            history.points[0, 0] = 1.0

    def test_bad_initial_point(self):
        """An initial point of the wrong length is rejected"""
        with pytest.raises(InputError):
            orbit(self.system, np.zeros(2), 5)

    def test_bad_point_stack(self):
        """Iterating a stack of points with the wrong length is an input error, not a broadcast error"""
        with pytest.raises(InputError):
            iterate(self.system, np.zeros((4, 2)), 3)

    def test_segment(self):
        """A segment keeps the requested points"""
        history = orbit(self.system, self.system.initial_point, 20)
        part = history.segment(5, 15)
        assert len(part) == 10
        np.testing.assert_array_equal(part.points[0], history.points[5])

    def test_periodic_coordinate_is_wrapped(self):
        """The solenoid angle stays in [0, 2pi)"""
        points = orbit(self.system, self.system.initial_point, 200).points
        assert np.all(points[:, 0] >= 0.0)
        assert np.all(points[:, 0] < 2.0 * math.pi)

    def test_jacobian_chunks_cover_range(self):
        """Chunked Jacobians cover every step exactly once"""
        history = orbit(self.system, self.system.initial_point, 30)
        total = sum(jac.shape[0] for _, jac in history.jacobian_chunks(0, 30))
        assert total == 30


class TestKuratowski:
    """Test cases for the noncompactness bounds"""

    def test_tail_bound(self):
        """A K + diag tail map is bounded by its largest tail entry"""
        a = LinearMap(np.diag([3.0, 2.0, 0.4, -0.6]), tail_start=2)
        assert kuratowski_bound(a) == pytest.approx(0.6)

    def test_dense_map_is_compact(self):
        """Dense finite-rank maps have zero bound"""
        assert kuratowski_bound(np.diag([3.0, 2.0])) == 0.0
        assert kuratowski_bound(LinearMap(np.eye(3))) == 0.0

    def test_growth_bound_negative_for_galerkin(self):
        """The dissipative Galerkin system has a contracting tail"""
        system = dissipative_galerkin()
        history = orbit(system, system.initial_point, 100)
        assert kuratowski_growth_bound(history) < 0.0

    def test_growth_bound_without_tail(self):
        """Systems without a tail report -inf"""
        system = diag_linear([2.0, 0.5])
        assert kuratowski_growth_bound(orbit(system, system.initial_point, 10)) == -math.inf

    def test_growth_bound_needs_a_step(self):
        """An empty history is rejected"""
        system = diag_linear([2.0, 0.5])
        with pytest.raises(InputError):
            kuratowski_growth_bound(orbit(system, system.initial_point, 0))


class TestMergeExponents:
    """Test cases for grouping raw exponents"""

    def test_groups_close_values(self):
        """Neighbours within the tolerance merge into one exponent with multiplicity"""
        exponents, multiplicities = merge_exponents([-1.0, 0.5, 0.5 + 1e-6], 1e-3)
        assert multiplicities == (2, 1)
        assert exponents[0] == pytest.approx(0.5 + 5e-7)
        assert exponents[1] == -1.0

    def test_keeps_distinct_values(self):
        """Well separated values stay apart"""
        exponents, multiplicities = merge_exponents([0.1, 0.2, 0.3], 1e-3)
        assert exponents == (0.3, 0.2, 0.1)
        assert multiplicities == (1, 1, 1)


class TestLyapunovSpectrum:
    """Test cases for the determinant-growth Lyapunov estimator"""

    def test_diagonal_map(self):
        """diag(2, 1/2) has exponents log 2 and -log 2"""
        report = lyapunov_spectrum(diag_linear([2.0, 0.5]), n_steps=500, seed=1)
        np.testing.assert_allclose(report.raw_exponents, [LOG2, -LOG2], atol=1e-9)
        assert report.multiplicities == (1, 1)
        assert report.unstable_dimension == 1
        assert report.positive_sum == pytest.approx(LOG2, abs=1e-9)
        assert report.restarts == 0

    def test_diagonal_map_in_sup_norm(self):
        """The exponents do not depend on the norm"""
        system = diag_linear([2.0, 0.5], space=NormedSpace.lp(2, math.inf))
        report = lyapunov_spectrum(system, n_steps=500, seed=1)
        np.testing.assert_allclose(report.raw_exponents, [LOG2, -LOG2], atol=1e-9)

    def test_unstable_frame_is_expanding_axis(self):
        """The reported unstable frame is the first coordinate axis"""
        report = lyapunov_spectrum(diag_linear([2.0, 0.5]), n_steps=200)
        frame = report.unstable_frame
        assert frame is not None
        assert frame.k == 1
        assert abs(frame.basis[1, 0]) < 1e-9

    def test_rebase_interval_does_not_change_result(self):
        """Pushing several steps between re-basings gives the same exponents"""
        report = lyapunov_spectrum(diag_linear([2.0, 0.5]), n_steps=500, rebase_every=5)
        np.testing.assert_allclose(report.raw_exponents, [LOG2, -LOG2], atol=1e-9)
        assert report.rebase_every == 5

    def test_toral_volume_preserving(self):
        """A unimodular toral automorphism has exponents summing to zero"""
        system = toral_automorphism()
        report = lyapunov_spectrum(system, n_steps=1000)
        assert report.partial_sums[-1] == pytest.approx(0.0, abs=1e-9)
        assert report.raw_exponents[0] == pytest.approx(system.known_answers.exponents[0], abs=1e-9)

    def test_solenoid_spectrum(self):
        """The solenoid has exponents log b and twice log lambda_c"""
        report = lyapunov_spectrum(solenoid(), n_steps=2000, seed=3)
        assert report.raw_exponents[0] == pytest.approx(LOG2, abs=1e-2)
        assert report.partial_sums[-1] == pytest.approx(math.log(2.0 * 0.25**2), abs=1e-9)
        assert report.unstable_dimension == 1

    def test_traces_and_dict(self):
        """Running means are recorded and the report serializes"""
        report = lyapunov_spectrum(diag_linear([2.0, 0.5]), n_steps=300)
        assert report.traces.shape[1] == 2
        assert report.trace_steps[-1] == 300
        data = report.to_dict()
        assert data["n_steps"] == 300
        assert data["exponents"] == list(report.exponents)
        assert len(data["traces"]["steps"]) == report.traces.shape[0]

    @pytest.mark.parametrize("kwargs", [{"k": 0}, {"k": 3}, {"n_steps": 0}, {"rebase_every": 0}])
    def test_invalid_arguments(self, kwargs):
        """Out-of-range k, steps or re-basing intervals are rejected"""
        with pytest.raises(InputError):
            lyapunov_spectrum(diag_linear([2.0, 0.5]), **{"n_steps": 10, **kwargs})


class TestUnstableFrame:
    """Test cases for the single-point unstable direction estimate"""

    def test_diagonal_converges(self):
        """The estimate along a long enough history converges to the expanding axis"""
        system = diag_linear([2.0, 0.5])
        estimate = unstable_frame(orbit(system, system.initial_point, 200), 1, seed=4)
        assert estimate.converged
        assert estimate.warning is None
        assert estimate.gap < 1e-6
        assert abs(estimate.frame.basis[1, 0]) < 1e-9

    def test_short_history_warns(self):
        """A history shorter than the warm-up is reported as not converged"""
        system = diag_linear([2.0, 0.5])
        estimate = unstable_frame(orbit(system, system.initial_point, 10), 1)
        assert not estimate.converged
        assert "warm-up" in estimate.warning

    @pytest.mark.parametrize("m_u", [0, 3])
    def test_invalid_dimension(self, m_u):
        """m_u must fit the space"""
        system = diag_linear([2.0, 0.5])
        with pytest.raises(InputError):
            unstable_frame(orbit(system, system.initial_point, 10), m_u)


class TestOseledetsFrames:
    """Test cases for the splitting along an orbit"""

    def setup_method(self):
        self.system = diag_linear([2.0, 0.5])
        self.history = orbit(self.system, self.system.initial_point, 600)
        self.frames = oseledets_frames(self.history, 1, seed=2)

    def test_converged_range(self):
        """Warm-ups are cut from both ends"""
        assert self.frames.first == 60
        assert self.frames.last == 540
        with pytest.raises(InputError):
            self.frames.check_index(10)

    def test_splitting_is_coordinate_axes(self):
        """E^u is the first axis and E^s the second"""
        split = self.frames.splitting(300)
        assert abs(split.e.basis[1, 0]) < 1e-9
        assert abs(split.f.basis[0, 0]) < 1e-9
        assert split.proj_norm == pytest.approx(1.0, abs=1e-6)

    def test_invariance(self):
        """df maps E^u(x_i) onto E^u(x_{i+1})"""
        assert self.frames.invariance_residual(300) < 1e-9

    def test_coordinates_reconstruct(self):
        """v = U a + S b"""
        v = np.array([0.3, -1.2])
        a, b = self.frames.coordinates(300, v)
        rebuilt = self.frames.unstable[300] @ a + self.frames.stable_basis(300) @ b
        np.testing.assert_allclose(rebuilt, v, atol=1e-12)

    def test_log_unstable_jacobian(self):
        """The unstable Jacobian of diag(2, 1/2) is 2"""
        value, error = log_unstable_jacobian(self.frames, 300)
        assert value == pytest.approx(LOG2, abs=1e-9)
        assert error == 0.0

    def test_invalid_arguments(self):
        """m_u must be below D and the history long enough"""
        with pytest.raises(InputError):
            oseledets_frames(self.history, 2)
        with pytest.raises(InputError):
            oseledets_frames(orbit(self.system, self.system.initial_point, 100), 1)


class TestAdaptedNormParams:
    """Test cases for the adapted-norm constants"""

    def test_from_exponents(self):
        """lambda0 is the smallest gap to zero, delta0 = lambda0/20"""
        params = AdaptedNormParams.from_exponents([LOG2, -2.0 * LOG2])
        assert params.lambda0 == pytest.approx(LOG2)
        assert params.delta0 == pytest.approx(LOG2 / 20.0)
        assert params.lam == pytest.approx(0.9 * LOG2)
        assert params.delta2 == pytest.approx(0.9 * LOG2 / 100.0)
        assert params.m_u == 1

    def test_needs_positive_exponent(self):
        """Purely contracting spectra are rejected"""
        with pytest.raises(InputError):
            AdaptedNormParams.from_exponents([-0.1, -0.2])

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"lambda0": 0.0, "delta0": 0.01, "delta2": 0.001, "m_u": 1},
            {"lambda0": 1.0, "delta0": 0.5, "delta2": 0.001, "m_u": 1},
            {"lambda0": 1.0, "delta0": 0.05, "delta2": 0.01, "m_u": 1},
            {"lambda0": 1.0, "delta0": 0.05, "delta2": 0.001, "m_u": 0},
        ],
    )
    def test_invalid_constants(self, kwargs):
        """Constants outside their admissible ranges are rejected"""
        with pytest.raises(InputError):
            AdaptedNormParams(**kwargs)


class TestAdaptedNorm:
    """Test cases for the truncated adapted norm"""

    def setup_method(self):
        system = diag_linear([2.0, 0.5])
        self.frames = oseledets_frames(orbit(system, system.initial_point, 600), 1, seed=5)
        self.params = AdaptedNormParams.from_exponents([LOG2, -LOG2])
        # both series are geometric with ratio e^lambda / 2 = 2^-0.1
        self.expected = 1.0 / (1.0 - 2.0**-0.1)

    def test_unstable_vector(self):
        """The adapted norm of the expanding axis is a closed geometric sum"""
        value = adapted_norm(self.frames, 200, np.array([1.0, 0.0]), self.params)
        assert value.value == pytest.approx(self.expected, rel=1e-8)
        assert value.unstable_part >= value.stable_part

    def test_stable_vector(self):
        """The adapted norm of the contracting axis is the same geometric sum"""
        value = adapted_norm(self.frames, 200, np.array([0.0, 1.0]), self.params)
        assert value.value == pytest.approx(self.expected, rel=1e-8)

    def test_stable_series_closes_at_window_end(self):
        """Near the end of the converged range the stable series stops there and closes with its geometric tail"""
        i = self.frames.last - 3
        value = adapted_norm(self.frames, i, np.array([0.0, 1.0]), self.params)
        assert value.terms == 4
        assert value.value == pytest.approx(self.expected, rel=1e-8)

    def test_unstable_series_closes_at_window_start(self):
        """Near the start of the converged range the unstable series stops there and closes with its geometric tail"""
        i = self.frames.first + 2
        value = adapted_norm(self.frames, i, np.array([1.0, 0.0]), self.params)
        assert value.terms == 3
        assert value.value == pytest.approx(self.expected, rel=1e-8)

    def test_dominates_ambient_norm(self):
        """|v|' >= |v|"""
        v = np.array([0.7, -0.4])
        value = adapted_norm(self.frames, 200, v, self.params)
        assert value.value >= np.linalg.norm(v)

    def test_rejects_bad_input(self):
        """Indices outside the converged range and wrong lengths fail"""
        with pytest.raises(InputError):
            adapted_norm(self.frames, 5, np.array([1.0, 0.0]), self.params)
        with pytest.raises(InputError):
            adapted_norm(self.frames, 200, np.ones(3), self.params)

    def test_chart_quality_shapes(self):
        """Chart constants are recorded for every window point"""
        quality = chart_quality(self.frames, self.params, start=200, n_points=6, n_probe=4, seed=1)
        assert quality.indices.tolist() == [200, 201, 202, 203, 204, 205]
        assert len(quality.records()) == 6
        assert np.all(quality.c_total >= 1.0 - 1e-9)
        assert np.all(quality.l_envelope >= quality.l_tilde - 1e-12)
        assert quality.report.title == "chart_quality"

    def test_chart_quality_window_outside_range(self):
        """Windows before the converged range are rejected"""
        with pytest.raises(InputError):
            chart_quality(self.frames, self.params, start=0)


class TestSlowlyVaryingEnvelope:
    """Test cases for the slowly varying envelope"""

    def test_envelope(self):
        """Each value is the discounted maximum over the window"""
        env = slowly_varying_envelope(np.array([1.0, 10.0, 1.0]), LOG2)
        np.testing.assert_allclose(env, [5.0, 10.0, 5.0])

    def test_envelope_dominates(self):
        """The envelope is never below the values"""
        values = np.array([3.0, 1.0, 4.0, 1.0, 5.0])
        assert np.all(slowly_varying_envelope(values, 0.1) >= values)
