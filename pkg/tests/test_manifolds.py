"""
Tests for local unstable leaves, their volumes and the distortion sweep.
"""

import math

import numpy as np
import pytest

from src.srblab.config import DISTORTION_FLOOR_ULPS, DISTORTION_TOL
from src.srblab.errors import InputError
from src.srblab.manifolds import (
    LeafGraph,
    backward_shooting_report,
    change_of_variables_report,
    chart_frame,
    chart_validation_report,
    distortion_multiplicativity,
    distortion_table,
    expansion_report,
    graph_contraction_report,
    leaf_invariance_residual,
    leaf_records,
    leaf_run,
    leaf_volume,
    local_unstable_manifold,
    plot_leaf,
    pushforward_density,
    series_margin,
)
from src.srblab.space import NormedSpace
from src.srblab.systems import solenoid, toral_automorphism

GOLDEN_SQUARED = (3.0 + math.sqrt(5.0)) / 2.0


class TestLinearLeaf:
    """Leaves of the cat map in the Euclidean plane are flat segments along E^u"""

    @classmethod
    def setup_class(cls):
        system = toral_automorphism(space=NormedSpace.lp(2, 2))
        cls.run = leaf_run(system, n_steps=300, n_nodes=9, lineage_depth=5)
        cls.leaf = cls.run.leaf

    def test_leaf_is_flat(self):
        """The graph of an invariant linear direction is g = 0"""
        np.testing.assert_allclose(self.leaf.values, 0.0, atol=1e-10)
        assert self.leaf.lipschitz() < 1e-9
        assert self.leaf.sup_norm() < 1e-10

    def test_leaf_leaves_room_for_forward_series(self):
        """The leaf index keeps the stable-series margin before the end of the converged range"""
        frames = self.run.frames
        assert self.leaf.chart.index == frames.last - series_margin(frames, self.run.params)
        assert frames.first < self.leaf.chart.index < frames.last
        assert len(self.leaf.lineage) == 5
        assert len(self.leaf.levels()) == 6
        assert self.leaf.reference == 4

    def test_volume_of_segment(self):
        """A flat Euclidean leaf over [-r, r] has length 2r"""
        volume = leaf_volume(self.leaf)
        assert volume.value == pytest.approx(2.0 * self.leaf.radius, rel=1e-12)
        assert volume.method == "quadrature"
        part = leaf_volume(self.leaf, np.array([[-0.1, 0.1]]))
        assert part.value == pytest.approx(0.2, rel=1e-12)

    def test_weighted_volume(self):
        """Integrating the constant 3 triples the length"""
        volume = leaf_volume(self.leaf, weight=lambda u: np.full(u.shape[:-1], 3.0))
        assert volume.value == pytest.approx(6.0 * self.leaf.radius, rel=1e-12)

    def test_region_outside_grid(self):
        """Regions must lie inside the grid"""
        with pytest.raises(InputError):
            leaf_volume(self.leaf, np.array([[-1.0, 0.1]]))

    def test_invariance(self):
        """f maps the previous leaf onto this one"""
        assert leaf_invariance_residual(self.leaf) < 1e-10

    def test_pushforward_density(self):
        """f_* nu has density 1/J^u = golden^-2 on a linear leaf"""
        q = pushforward_density(self.leaf)
        np.testing.assert_allclose(q, 1.0 / GOLDEN_SQUARED, rtol=1e-9)

    def test_distortion_vanishes(self):
        """Constant J^u gives zero distortion, detected as exact"""
        table = distortion_table(self.leaf)
        assert table.exact
        assert table.tail_bound == 0.0
        np.testing.assert_allclose(table.log_delta, 0.0, atol=1e-12)
        with pytest.raises(InputError):
            distortion_multiplicativity(table, table.depth)

    def test_records(self):
        """One record per node with the unstable Jacobian"""
        rows = leaf_records(self.leaf)
        assert len(rows) == 9
        assert rows[0]["J_u"] == pytest.approx(GOLDEN_SQUARED, rel=1e-9)
        assert {"u0", "x0", "x1", "g0"} <= set(rows[0])

    def test_even_grid_rejected(self):
        """u = 0 must be a node"""
        with pytest.raises(InputError):
            local_unstable_manifold(self.run.frames, n_nodes=8)

    def test_leaf_without_lineage(self):
        """Checks that need the previous leaf refuse a bare graph"""
        bare = LeafGraph.flat(self.leaf.chart, 9)
        with pytest.raises(InputError):
            leaf_invariance_residual(bare)
        with pytest.raises(InputError):
            distortion_table(bare)
        with pytest.raises(InputError):
            pushforward_density(bare)

    def test_graph_values_shape_checked(self):
        """Graph values must match the grid"""
        with pytest.raises(InputError):
            LeafGraph(self.leaf.chart, self.leaf.nodes, np.zeros((4, 1)))

    def test_graph_transform_contracts(self):
        """Random graph pairs contract by the stable-to-unstable ratio golden^-2, up to the refined-grid resolution"""
        frames = self.run.frames
        report = graph_contraction_report(chart_frame(frames, 100), chart_frame(frames, 101), n_nodes=9, n_pairs=4)
        assert not report.failures
        assert report.values["max_contraction"] < (1.0 / GOLDEN_SQUARED) * (1.0 + 1e-3)

    def test_refined_sup_distance(self):
        """Comparing interpolants between nodes never reports less than the node distance"""
        base = LeafGraph.flat(self.leaf.chart, 9)
        bumped = base.with_values(0.01 * np.sin(8.0 * base.nodes[:, None]))
        assert bumped.sup_distance(base, refine=16) >= bumped.sup_distance(base)
        with pytest.raises(InputError):
            bumped.sup_distance(base, refine=0)

    def test_chart_validation(self):
        """A linear map has no nonlinear part in its charts"""
        report = chart_validation_report(self.run.frames, 100, self.run.params, n_pairs=8)
        assert not report.failures
        assert report.values["max_nonlinearity"] < 1e-9
        assert report.vacuous_count == 8

    def test_expansion(self):
        """Node pairs expand in the adapted norm"""
        report = expansion_report(self.run.frames, self.leaf, self.run.params)
        assert report.rows
        assert not report.failures

    def test_change_of_variables(self):
        """nu(f R) equals the J^u integral over R"""
        report = change_of_variables_report(self.leaf, n_regions=3)
        assert len(report.rows) == 3
        assert not report.failures

    def test_backward_shooting(self):
        """Shooting from a few steps back reproduces g = 0"""
        report = backward_shooting_report(self.run.frames, self.leaf, depth=6, n_points=3)
        assert len(report.rows) == 6
        assert not report.failures

    def test_plot(self, temp_dir):
        """The leaf plot is written as SVG"""
        path = plot_leaf(str(temp_dir / "leaf.svg"), self.leaf)
        assert open(path).read().lstrip().startswith("<?xml")


class TestSolenoidLeaf:
    """Curved leaves of the solenoid in the Euclidean norm"""

    @classmethod
    def setup_class(cls):
        cls.run = leaf_run(solenoid(space=NormedSpace.lp(3, 2)), n_nodes=33)
        cls.leaf = cls.run.leaf
        cls.table = distortion_table(cls.leaf)

    def test_leaf_is_a_thin_graph(self):
        """The converged leaf is a graph of small slope"""
        assert self.leaf.lipschitz() <= 0.1
        assert self.leaf.contraction is None or self.leaf.contraction < 1.0

    def test_invariance(self):
        """The leaf is the image of its predecessor"""
        assert leaf_invariance_residual(self.leaf) < 1e-8

    def test_volume_has_small_error(self):
        """Gauss-Legendre cells resolve the leaf length"""
        volume = leaf_volume(self.leaf)
        assert volume.value > 0.0
        assert volume.std_error < 1e-6 * volume.value

    def test_distortion_decays(self):
        """Distortion increments shrink geometrically"""
        table = self.table
        assert table.rho < 1.0
        assert table.increments[-1] < table.increments[0]
        assert table.log_delta[table.reference] == 0.0

    def test_distortion_fit_stops_above_round_off(self):
        """The geometric fit uses only the leading increments above the float64 floor and is a clean line"""
        table = self.table
        floor = DISTORTION_FLOOR_ULPS * np.finfo(float).eps * float(np.abs(table.log_ju).max())
        assert 3 <= table.fit_depth <= table.depth
        assert np.all(table.increments[: table.fit_depth] >= floor)
        if table.fit_depth < table.depth:
            assert table.increments[table.fit_depth] < max(floor, DISTORTION_TOL)
        assert table.r_squared >= 0.99

    def test_distortion_is_multiplicative(self):
        """Splitting the sweep at any depth composes to the same sum"""
        assert distortion_multiplicativity(self.table, 2) < 1e-9

    def test_pushforward_density_near_inverse_expansion(self):
        """J^u stays close to the base factor on a thin leaf"""
        q = pushforward_density(self.leaf)
        assert np.all(q > 0.4)
        assert np.all(q < 0.6)
