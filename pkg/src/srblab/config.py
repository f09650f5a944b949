from __future__ import annotations

import math
import os
from typing import Any, Dict, List, Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import InputError

# Configuration constants
DEFAULT_SEED = 42
RANK_TOL = 1e-10  # smallest/largest singular value cut for frames
SYMMETRY_RTOL = 1e-9  # |G - G^T| relative to max |G|
MVEE_TOL = 1e-3
MVEE_MAX_ITER = 200_000
MVEE_DIRECTIONS = 4096
MVEE_REFINE_ROUNDS = 12
TARGET_REL_ERR = 3e-3  # interactive default; the full suite runs at 1e-3
SAMPLE_BATCH = 20_000
SAMPLE_CAP = 20_000_000
ACCEPTANCE_FLOOR = 1e-6
SPHERE_GRID_POINTS = 4096
GEOMETRY_GRID_POINTS = 256
POLISH_STEPS = 20
POLISH_CANDIDATES = 6
SEARCH_TOL = 1e-3  # relative slack on the disadvantaged side of sup/inf checks
GOLDEN_ITERATIONS = 80
DEFAULT_C_K = 1e3

BURN_IN = 1_000
FRAME_WARMUP = 60
RESTART_CAP = 5
TRACE_BATCHES = 20
TRACE_POINTS = 100
MERGE_TOL_FLOOR = 1e-10

ADAPTED_TERM_RTOL = 1e-12
ADAPTED_MAX_TERMS = 200

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 50
LEAF_GRID_POINTS = 65
LEAF_LIPSCHITZ_MAX = 0.1
QUADRATURE_ORDER = 6

CHART_RADIUS = 0.25
CHART_DEPTH = 24
CHART_WINDOW = 8
LEAF_HISTORY_STEPS = 600  # orbit length behind a default leaf run
LEAF_TOL = 1e-10
DISTORTION_MAX_DEPTH = 60
DISTORTION_TOL = 1e-13
DISTORTION_FLOOR_ULPS = 1e4  # increments below this many ulps of max |log J^u| are round-off
CONTRACTION_PAIRS = 20
CONTRACTION_REFINE = 16  # sample the previous graph between nodes

MIN_WINDOW_HITS = 1_000
HISTOGRAM_BINS = 64
SLAB_THICKNESS = 0.01
ORBIT_CHAINS = 1_000
ENTROPY_TOL = 1e-3
ENTROPY_ROUTE_TOL = 2e-3

OUTPUT_FORMATS = ("csv", "json", "both")

NormKind = Literal["lp", "weighted_sup", "weighted_l1", "custom_polytope"]
SystemKind = Literal[
    "solenoid", "diag_linear", "linear", "toral_automorphism", "dissipative_galerkin"
]


class NormConfig(BaseModel):
    kind: NormKind
    p: Optional[float] = None
    weights: Optional[List[float]] = None
    facets: Optional[List[List[float]]] = None

    @model_validator(mode="after")
    def _check_kind_fields(self) -> "NormConfig":
        if self.kind == "lp":
            if self.p is None or not (self.p >= 1.0):
                raise ValueError("lp norms need p >= 1 (use inf for the sup norm)")
        elif self.kind in ("weighted_sup", "weighted_l1"):
            if not self.weights:
                raise ValueError(f"{self.kind} needs a weights array")
            if any(not (w > 0.0) or not math.isfinite(w) for w in self.weights):
                raise ValueError("weights must be strictly positive and finite")
        elif not self.facets:
            raise ValueError("custom_polytope needs a facets array")
        return self


class SpaceConfig(BaseModel):
    dim: int = Field(gt=0)
    norm: NormConfig

    @model_validator(mode="after")
    def _check_dims(self) -> "SpaceConfig":
        if self.norm.weights is not None and len(self.norm.weights) != self.dim:
            raise ValueError(f"expected {self.dim} weights, got {len(self.norm.weights)}")
        if self.norm.facets is not None:
            facets = np.asarray(self.norm.facets, dtype=float)
            if facets.ndim != 2 or facets.shape[1] != self.dim:
                raise ValueError(f"facets must be rows of length {self.dim}")
            if np.linalg.matrix_rank(facets) < self.dim:
                raise ValueError("facets do not span the space, the unit ball is unbounded")
        return self


class SystemConfig(BaseModel):
    kind: SystemKind
    params: Dict[str, Any] = Field(default_factory=dict)
    space: Optional[SpaceConfig] = None


class RunConfig(BaseModel):
    """Everything a CLI run depends on; the master seed is always recorded in outputs."""

    command: Optional[str] = None
    space: Optional[SpaceConfig] = None
    system: Optional[SystemConfig] = None
    seed: int = DEFAULT_SEED
    steps: Optional[int] = Field(default=None, gt=0)
    tol: Optional[float] = Field(default=None, gt=0.0)
    out: Optional[str] = None
    format: Literal["csv", "json", "both"] = "both"
    plot: bool = False
    workers: int = Field(default=1, ge=1)
    level: Literal["quick", "full"] = "quick"
    params: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("seed")
    @classmethod
    def _nonnegative_seed(cls, value: int) -> int:
        if value < 0:
            raise ValueError("seed must be nonnegative")
        return value


class LabSettings(BaseSettings):
    """Environment overrides, e.g. SRBLAB_SEED=7 or SRBLAB_WORKERS=4."""

    model_config = SettingsConfigDict(env_prefix="SRBLAB_", extra="ignore")

    seed: Optional[int] = None
    workers: Optional[int] = None
    out: Optional[str] = None
    format: Optional[Literal["csv", "json", "both"]] = None
    tol: Optional[float] = None


def _floats(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise InputError(f"Could not parse numbers from '{text}': {e}") from e


def parse_space_spec(spec: str) -> SpaceConfig:
    """Parse compact space specs such as ``lp:inf:2``, ``lp:1:3`` or ``weighted_sup:1,0.5``."""
    parts = spec.strip().split(":")
    try:
        if parts[0] == "lp" and len(parts) == 3:
            p = math.inf if parts[1].lower() in ("inf", "infinity") else float(parts[1])
            return SpaceConfig(dim=int(parts[2]), norm=NormConfig(kind="lp", p=p))
        if parts[0] in ("weighted_sup", "weighted_l1") and len(parts) == 2:
            weights = _floats(parts[1])
            return SpaceConfig(
                dim=len(weights), norm=NormConfig(kind=parts[0], weights=weights)
            )
    except (ValidationError, ValueError) as e:
        raise InputError(f"Invalid space spec '{spec}': {e}") from e
    raise InputError(
        f"Unknown space spec '{spec}'. Expected lp:<p>:<dim>, weighted_sup:<w,...> "
        "or weighted_l1:<w,...>; custom polytopes are configured through a file."
    )


def parse_system_spec(spec: str) -> SystemConfig:
    """Parse compact system specs such as ``diag_linear:2,0.5`` or ``solenoid:2,0.25,0.05@lp:2:3``."""
    body, _, space_part = spec.strip().partition("@")
    kind, _, args = body.partition(":")
    values = _floats(args) if args else []
    params: Dict[str, Any]
    if kind == "diag_linear":
        if not values:
            raise InputError("diag_linear needs diagonal entries, e.g. diag_linear:2,0.5")
        params = {"diag": values}
    elif kind in ("linear", "toral_automorphism"):
        params = {}
        if values:
            n = int(round(math.sqrt(len(values))))
            if n * n != len(values):
                raise InputError(f"{kind} needs a square matrix, got {len(values)} entries")
            params["matrix"] = np.asarray(values).reshape(n, n).tolist()
        elif kind == "linear":
            raise InputError("linear needs matrix entries in row-major order")
    elif kind == "solenoid":
        names = ("base_factor", "fiber_contraction", "coupling")
        params = dict(zip(names, values))
    elif kind == "dissipative_galerkin":
        names = ("dim", "decay", "nonlinearity_eps")
        params = dict(zip(names, values))
        if "dim" in params:
            params["dim"] = int(params["dim"])
    else:
        raise InputError(f"Unknown system kind '{kind}'")
    space = parse_space_spec(space_part) if space_part else None
    try:
        return SystemConfig(kind=kind, params=params, space=space)
    except ValidationError as e:
        raise InputError(f"Invalid system spec '{spec}': {e}") from e


def load_config_file(path: str) -> Dict[str, Any]:
    """Read a YAML (or JSON, which YAML accepts) run configuration."""
    if not os.path.exists(path):
        raise InputError(f"Config file not found: {path}")
    with open(path) as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise InputError(f"Could not parse config file {path}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise InputError(f"Config file {path} must contain a mapping at the top level")
    return data


def build_run_config(
    file_values: Optional[Dict[str, Any]] = None,
    cli_values: Optional[Dict[str, Any]] = None,
) -> RunConfig:
    """Merge defaults < config file < SRBLAB_* environment < explicit CLI flags."""
    merged: Dict[str, Any] = dict(file_values or {})
    settings = LabSettings()
    merged.update({k: v for k, v in settings.model_dump().items() if v is not None})
    merged.update({k: v for k, v in (cli_values or {}).items() if v is not None})
    try:
        return RunConfig.model_validate(merged)
    except ValidationError as e:
        raise InputError(f"Invalid run configuration: {e}") from e
