import math

import pytest

from src.srblab.config import (
    DEFAULT_SEED,
    RunConfig,
    SpaceConfig,
    build_run_config,
    load_config_file,
    parse_space_spec,
    parse_system_spec,
)
from src.srblab.errors import InputError
from src.srblab.space import NormedSpace


class TestSpaceSpecs:
    """Compact space specs."""

    @pytest.mark.parametrize(
        "spec,dim,kind,p",
        [
            ("lp:inf:2", 2, "lp", math.inf),
            ("lp:1:3", 3, "lp", 1.0),
            ("lp:2.5:4", 4, "lp", 2.5),
            ("weighted_sup:1,0.5", 2, "weighted_sup", None),
            ("weighted_l1:1,2,3", 3, "weighted_l1", None),
        ],
    )
    def test_parse(self, spec, dim, kind, p):
        """Test parsing of every supported family."""
        cfg = parse_space_spec(spec)
        assert cfg.dim == dim
        assert cfg.norm.kind == kind
        assert cfg.norm.p == p

    @pytest.mark.parametrize("spec", ["lp:0.5:2", "lp:2", "weighted_sup:1,-1", "hilbert:3", "lp:x:2"])
    def test_invalid(self, spec):
        """Test that malformed specs raise InputError."""
        with pytest.raises(InputError):
            parse_space_spec(spec)

    def test_round_trip_through_space(self):
        """Test that a parsed spec builds the labelled space."""
        assert NormedSpace.from_config(parse_space_spec("lp:inf:3")).label == "lp:inf:3"

    def test_unbounded_polytope_rejected(self):
        """Test that facets which do not span the space are rejected."""
        with pytest.raises(ValueError):
            SpaceConfig(dim=2, norm={"kind": "custom_polytope", "facets": [[1.0, 0.0]]})


class TestSystemSpecs:
    """Compact system specs."""

    def test_diag_linear(self):
        """Test diagonal entries."""
        cfg = parse_system_spec("diag_linear:2,0.5")
        assert cfg.kind == "diag_linear"
        assert cfg.params == {"diag": [2.0, 0.5]}
        assert cfg.space is None

    def test_solenoid_with_space(self):
        """Test named solenoid parameters and an attached space."""
        cfg = parse_system_spec("solenoid:2,0.25,0.05@lp:2:3")
        assert cfg.params == {"base_factor": 2.0, "fiber_contraction": 0.25, "coupling": 0.05}
        assert cfg.space.dim == 3
        assert cfg.space.norm.p == 2.0

    def test_matrix_is_square(self):
        """Test that linear maps need a square number of entries."""
        assert parse_system_spec("linear:2,1,1,1").params["matrix"] == [[2.0, 1.0], [1.0, 1.0]]
        with pytest.raises(InputError):
            parse_system_spec("linear:1,2,3")

    def test_galerkin_dimension_is_integer(self):
        """Test that the Galerkin truncation dimension is an int."""
        assert parse_system_spec("dissipative_galerkin:8,0.5,0.1").params["dim"] == 8

    @pytest.mark.parametrize("spec", ["lorenz:1,2", "diag_linear", "linear"])
    def test_invalid(self, spec):
        """Test unknown kinds and missing parameters."""
        with pytest.raises(InputError):
            parse_system_spec(spec)


class TestRunConfig:
    """Merging config files, environment and CLI flags."""

    def test_defaults(self, monkeypatch):
        """Test defaults when nothing is given."""
        for name in ("SRBLAB_SEED", "SRBLAB_WORKERS", "SRBLAB_OUT", "SRBLAB_FORMAT", "SRBLAB_TOL"):
            monkeypatch.delenv(name, raising=False)
        cfg = build_run_config()
        assert cfg.seed == DEFAULT_SEED
        assert cfg.format == "both"
        assert cfg.workers == 1
        assert cfg.level == "quick"

    def test_precedence(self, monkeypatch):
        """Test file < environment < CLI, with None flags ignored."""
        monkeypatch.setenv("SRBLAB_SEED", "7")
        monkeypatch.setenv("SRBLAB_WORKERS", "3")
        cfg = build_run_config({"seed": 1, "workers": 2, "steps": 100}, {"seed": 11, "steps": None})
        assert cfg.seed == 11
        assert cfg.workers == 3
        assert cfg.steps == 100

    def test_file_space_and_system(self, temp_dir, monkeypatch):
        """Test a YAML file with nested space and system entries."""
        monkeypatch.delenv("SRBLAB_SEED", raising=False)
        path = temp_dir / "run.yaml"
        path.write_text(
            "command: lyap\n"
            "seed: 5\n"
            "space: {dim: 2, norm: {kind: lp, p: .inf}}\n"
            "system: {kind: diag_linear, params: {diag: [2.0, 0.5]}}\n"
        )
        cfg = build_run_config(load_config_file(str(path)))
        assert isinstance(cfg, RunConfig)
        assert cfg.seed == 5
        assert cfg.space.norm.p == math.inf
        assert cfg.system.params["diag"] == [2.0, 0.5]

    @pytest.mark.parametrize(
        "values",
        [{"seed": -1}, {"workers": 0}, {"format": "xml"}, {"steps": 0}, {"level": "huge"}],
    )
    def test_invalid_values(self, values):
        """Test that out-of-range values raise InputError."""
        with pytest.raises(InputError):
            build_run_config(cli_values=values)

    def test_missing_file(self, temp_dir):
        """Test that a missing config file raises InputError."""
        with pytest.raises(InputError):
            load_config_file(str(temp_dir / "nope.yaml"))

    def test_non_mapping_file(self, temp_dir):
        """Test that a YAML list at the top level is rejected."""
        path = temp_dir / "list.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(InputError):
            load_config_file(str(path))

    def test_empty_file(self, temp_dir):
        """Test that an empty file is an empty mapping."""
        path = temp_dir / "empty.yaml"
        path.write_text("")
        assert load_config_file(str(path)) == {}
