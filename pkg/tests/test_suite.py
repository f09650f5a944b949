"""
Tests for the invariant suite orchestration.
"""

import math
from unittest.mock import patch

import pytest

from src.srblab.config import TARGET_REL_ERR
from src.srblab.errors import InputError
from src.srblab.manifolds import leaf_run
from src.srblab.report import Report
from src.srblab.suite import (
    LEVELS,
    _leaf_systems,
    analytic_volumes_report,
    entropy_unstable_dimension,
    manifold_report,
    run_suite,
)
from src.srblab.systems import diag_linear, dissipative_galerkin, solenoid, toral_automorphism

LEAF_SYSTEM_NAMES = ["solenoid/l_inf", "solenoid/l2", "galerkin", "diag_linear", "toral"]


class TestLevels:
    """Test cases for suite levels"""

    def test_quick_is_smaller_than_full(self):
        """The quick level shrinks every size"""
        quick, full = LEVELS["quick"], LEVELS["full"]
        assert quick.battery_cases < full.battery_cases
        assert quick.axiom_cases < full.axiom_cases
        assert quick.lyap_steps < full.lyap_steps
        assert max(quick.orbit_sizes) < max(full.orbit_sizes)
        assert quick.l1_max > full.l1_max

    def test_full_level_uses_acceptance_tolerance(self):
        """The full level samples to 1e-3 relative error, tighter than the interactive default"""
        assert LEVELS["full"].target_rel_err == 1e-3
        assert LEVELS["full"].target_rel_err < TARGET_REL_ERR

    def test_unknown_level(self):
        """Unknown levels are input errors"""
        with pytest.raises(InputError):
            run_suite("medium")


class TestHelpers:
    """Test cases for suite helpers"""

    @pytest.mark.parametrize(
        "system, expected",
        [
            (solenoid(), 1),
            (toral_automorphism(), 1),
            (diag_linear([0.5, 0.25]), 0),
            (diag_linear([2.0, 3.0, 0.5]), 2),
            (dissipative_galerkin(), 1),
        ],
    )
    def test_unstable_dimension(self, system, expected):
        """Counts the known positive exponents"""
        assert entropy_unstable_dimension(system) == expected

    def test_analytic_volumes(self):
        """Unit balls of the plane have areas 4, 2 and pi"""
        report = analytic_volumes_report(seed=1, target_rel_err=1e-2)
        assert len(report.rows) == 3
        estimates = [float(row.note.split()[1]) for row in report.rows]
        assert estimates == pytest.approx([4.0, 2.0, math.pi], rel=0.05)


class TestRunSuite:
    """Test cases for the battery order and metadata"""

    def setup_method(self):
        self.calls = []

    def _report(self, title):
        def make(*args, **kwargs):
            self.calls.append(title)
            return Report(title)

        return make

    def test_order_and_metadata(self):
        """Batteries run in a fixed order and every report records seed and level"""
        systems = [("a", object()), ("b", object())]
        with patch("src.srblab.suite.verify_volume_axioms", side_effect=self._report("axioms")), \
                patch("src.srblab.suite.analytic_volumes_report", side_effect=self._report("analytic")), \
                patch("src.srblab.suite.verify_john_sandwich", side_effect=self._report("john")) as john, \
                patch("src.srblab.suite.verify_section2_bounds", side_effect=self._report("inequalities")), \
                patch("src.srblab.suite.lyapunov_report", side_effect=self._report("lyapunov")), \
                patch("src.srblab.suite._leaf_systems", return_value=systems), \
                patch("src.srblab.suite.leaf_run", return_value=None), \
                patch("src.srblab.suite.manifold_report", side_effect=self._report("manifolds")) as manifolds, \
                patch("src.srblab.suite.build_test_system", return_value=None), \
                patch("src.srblab.suite.refinement_report", side_effect=self._report("refinement")), \
                patch("src.srblab.suite.srb_report", side_effect=lambda *a: [Report("srb"), Report("entropy")]):
            reports = run_suite("quick", seed=3, workers=2)

        assert self.calls == ["axioms", "analytic", "john", "inequalities", "lyapunov",
                              "manifolds", "manifolds", "refinement"]
        assert [r.title for r in reports][-2:] == ["srb", "entropy"]
        assert len(reports) == 10
        assert all(r.metadata["seed"] == 3 and r.metadata["level"] == "quick" for r in reports)
        assert john.call_args.kwargs == {"n_vectors": LEVELS["quick"].john_vectors, "seed": 3, "workers": 2}
        assert manifolds.call_args_list[0].args[0] == "a"
        assert manifolds.call_args_list[0].args[3] is False

    def test_battery_config(self):
        """The volume axioms get their own case count; the inequality battery gets the level's count and tolerance"""
        with patch("src.srblab.suite.verify_volume_axioms", side_effect=self._report("axioms")) as axioms, \
                patch("src.srblab.suite.analytic_volumes_report", side_effect=self._report("analytic")), \
                patch("src.srblab.suite.verify_john_sandwich", side_effect=self._report("john")), \
                patch("src.srblab.suite.verify_section2_bounds", side_effect=RuntimeError("stop")) as inequalities:
            with pytest.raises(RuntimeError):
                run_suite("full", seed=8)
        axiom_battery = axioms.call_args.args[0]
        assert axiom_battery.n_cases == LEVELS["full"].axiom_cases == 200
        battery = inequalities.call_args.args[0]
        assert battery.n_cases == LEVELS["full"].battery_cases
        for cfg in (axiom_battery, battery):
            assert cfg.target_rel_err == LEVELS["full"].target_rel_err
            assert cfg.seed == 8
            assert cfg.metadata == {"level": "full"}


class TestManifoldReports:
    """Leaf invariants for every system the suite builds leaves for"""

    @pytest.mark.parametrize("name", LEAF_SYSTEM_NAMES)
    def test_manifold_report_passes(self, name):
        """The manifold report of each leaf system completes with no failing rows"""
        system = dict(_leaf_systems(42))[name]
        report = manifold_report(name, leaf_run(system, seed=42), 42, False)
        failing = [(row.statement, row.case, row.lhs, row.rhs) for row in report.failures]
        assert failing == []
        assert report.values["depth"] >= 1

    def test_names_match_suite(self):
        """The parametrized names cover the suite's leaf systems"""
        assert [name for name, _ in _leaf_systems(42)] == LEAF_SYSTEM_NAMES


class TestQuickSuite:
    """The quick suite end to end"""

    def test_quick_suite_passes(self):
        """Every row of the quick suite passes"""
        reports = run_suite("quick", seed=42)
        failing = [(r.title, row.statement, row.case) for r in reports for row in r.failures]
        assert failing == []
