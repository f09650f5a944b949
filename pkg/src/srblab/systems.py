"""Built-in test systems and the probes that vouch for them."""

from __future__ import annotations

import logging
import math
from typing import Any, Dict, Optional, Sequence

import numpy as np

from .cocycle import KnownAnswers, SmoothSystem, iterate, orbit
from .config import SystemConfig
from .errors import ConstructionError, InputError
from .space import NormedSpace

logger = logging.getLogger(__name__)

# Irrational rotation added to the expanding base angle. A plain doubling map loses one
# mantissa bit per step in floating point and collapses onto 0 after ~53 steps.
BASE_SHIFT = (math.sqrt(5.0) - 1.0) / 2.0
PROBE_POINTS = 200
PROBE_STEP = 1e-4
TWO_PI = 2.0 * math.pi


def _space_or_default(space: Optional[NormedSpace], dim: int) -> NormedSpace:
    if space is None:
        return NormedSpace.lp(dim, math.inf)
    if space.dim != dim:
        raise InputError(f"system needs a {dim}-dimensional space, got {space.label}")
    return space


def _norm_constant(space: NormedSpace, euclidean_bound: float) -> float:
    """Convert |d^2 f(v,v)|_2 <= K |v|_2^2 into the ambient norm."""
    upper, lower = space.euclidean_bounds()
    return euclidean_bound * upper * lower**2


def _integer_factor(value: float, name: str) -> int:
    b = int(round(value))
    if abs(value - b) > 1e-12 or b < 2:
        raise ConstructionError(f"{name} must be an integer >= 2, got {value}")
    return b


def solenoid(
    base_factor: float = 2,
    fiber_contraction: float = 0.25,
    coupling: float = 0.05,
    base_shift: float = BASE_SHIFT,
    space: Optional[NormedSpace] = None,
) -> SmoothSystem:
    """(theta, z) -> (b theta + shift mod 2pi, lambda_c z + eps (cos theta, sin theta)) on R^3."""
    b = _integer_factor(base_factor, "base_factor")
    lam = float(fiber_contraction)
    eps = float(coupling)
    if not 0.0 < lam < 1.0:
        raise ConstructionError(f"fiber_contraction must lie in (0, 1), got {lam}")
    if not eps > 0.0:
        raise ConstructionError(f"coupling must be positive, got {eps}")
    # two preimages of a point differ by |e(theta) - e(theta')| eps / lambda_c in z, while
    # the absorbing disc has diameter 2 eps / (1 - lambda_c)
    if not lam / (1.0 - lam) < math.sin(math.pi / b):
        raise ConstructionError(
            f"solenoid with fiber_contraction={lam} and base_factor={b} is not injective on its "
            f"attractor (needs lambda_c/(1-lambda_c) < sin(pi/b) = {math.sin(math.pi / b):.4g})"
        )
    space = _space_or_default(space, 3)
    radius = eps / (1.0 - lam)

    def step(x: np.ndarray) -> np.ndarray:
        theta = x[..., 0]
        out = np.empty_like(x)
        out[..., 0] = b * theta + base_shift
        out[..., 1] = lam * x[..., 1] + eps * np.cos(theta)
        out[..., 2] = lam * x[..., 2] + eps * np.sin(theta)
        return out

    def jacobian(x: np.ndarray) -> np.ndarray:
        theta = x[..., 0]
        j = np.zeros(x.shape + (3,))
        j[..., 0, 0] = b
        j[..., 1, 0] = -eps * np.sin(theta)
        j[..., 2, 0] = eps * np.cos(theta)
        j[..., 1, 1] = lam
        j[..., 2, 2] = lam
        return j

    def preimages(x: np.ndarray) -> np.ndarray:
        y = step(x)
        shifts = TWO_PI * np.arange(1, b) / b
        theta = x[..., None, 0] + shifts
        out = np.empty(x.shape[:-1] + (b - 1, 3))
        out[..., 0] = np.mod(theta, TWO_PI)
        out[..., 1] = (y[..., None, 1] - eps * np.cos(theta)) / lam
        out[..., 2] = (y[..., None, 2] - eps * np.sin(theta)) / lam
        return out

    def absorbing(x: np.ndarray) -> np.ndarray:
        return np.hypot(x[..., 1], x[..., 2]) <= radius * (1.0 + 1e-9)

    return SmoothSystem(
        kind="solenoid",
        space=space,
        step=step,
        jacobian=jacobian,
        second_derivative_bound=_norm_constant(space, eps),
        invertible_on_attractor=True,
        known_answers=KnownAnswers(
            exponents=(math.log(b), math.log(lam), math.log(lam)),
            entropy=math.log(b),
            attractor=f"solenoid over the x{b} circle map, fibre disc radius {radius:.4g}",
        ),
        initial_point=np.array([0.1, 0.0, 0.0]),
        periods=np.array([TWO_PI, 0.0, 0.0]),
        params={"base_factor": b, "fiber_contraction": lam, "coupling": eps, "base_shift": base_shift},
        preimages=preimages,
        absorbing=absorbing,
    )


def diag_linear(diag: Sequence[float], space: Optional[NormedSpace] = None) -> SmoothSystem:
    d = np.asarray(diag, dtype=float)
    if d.ndim != 1 or d.size < 1:
        raise InputError("diag_linear needs a non-empty list of diagonal entries")
    if np.any(d == 0.0) or not np.all(np.isfinite(d)):
        raise ConstructionError("diag_linear entries must be finite and nonzero (injectivity)")
    space = _space_or_default(space, d.size)
    matrix = np.diag(d)
    expanding = bool(np.any(np.abs(d) > 1.0))

    return SmoothSystem(
        kind="diag_linear",
        space=space,
        step=lambda x: x * d,
        jacobian=lambda x: np.broadcast_to(matrix, np.shape(x)[:-1] + matrix.shape).copy(),
        second_derivative_bound=0.0,
        invertible_on_attractor=True,
        known_answers=KnownAnswers(
            exponents=tuple(sorted(np.log(np.abs(d)).tolist(), reverse=True)),
            entropy=0.0,
            attractor="fixed point at 0 (Dirac measure)",
            srb=not expanding,
        ),
        initial_point=np.zeros(d.size),
        params={"diag": d.tolist()},
    )


def linear(matrix: Sequence[Sequence[float]], space: Optional[NormedSpace] = None) -> SmoothSystem:
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InputError(f"linear needs a square matrix, got shape {m.shape}")
    if abs(np.linalg.det(m)) <= 1e-12 * max(1.0, float(np.abs(m).max())) ** m.shape[0]:
        raise ConstructionError("linear map is singular, hence not injective")
    space = _space_or_default(space, m.shape[0])
    moduli = np.abs(np.linalg.eigvals(m))

    return SmoothSystem(
        kind="linear",
        space=space,
        step=lambda x: x @ m.T,
        jacobian=lambda x: np.broadcast_to(m, np.shape(x)[:-1] + m.shape).copy(),
        second_derivative_bound=0.0,
        invertible_on_attractor=True,
        known_answers=KnownAnswers(
            exponents=tuple(sorted(np.log(moduli).tolist(), reverse=True)),
            attractor="constant cocycle",
        ),
        initial_point=np.zeros(m.shape[0]),
        params={"matrix": m.tolist()},
    )


def toral_automorphism(
    matrix: Sequence[Sequence[float]] = ((2.0, 1.0), (1.0, 1.0)),
    space: Optional[NormedSpace] = None,
) -> SmoothSystem:
    """Hyperbolic unimodular integer matrix acting on R^2 / Z^2; Lebesgue is its SRB measure."""
    m = np.asarray(matrix, dtype=float)
    if m.shape != (2, 2):
        raise InputError(f"toral_automorphism needs a 2x2 matrix, got shape {m.shape}")
    if np.any(m != np.round(m)):
        raise ConstructionError("toral_automorphism needs integer entries")
    if round(abs(np.linalg.det(m))) != 1:
        raise ConstructionError("toral_automorphism needs |det| = 1")
    moduli = np.sort(np.abs(np.linalg.eigvals(m)))[::-1]
    if np.any(np.abs(moduli - 1.0) < 1e-9):
        raise ConstructionError("toral_automorphism needs no eigenvalue of modulus 1")
    space = _space_or_default(space, 2)

    return SmoothSystem(
        kind="toral_automorphism",
        space=space,
        step=lambda x: x @ m.T,
        jacobian=lambda x: np.broadcast_to(m, np.shape(x)[:-1] + m.shape).copy(),
        second_derivative_bound=0.0,
        invertible_on_attractor=True,
        known_answers=KnownAnswers(
            exponents=tuple(np.log(moduli).tolist()),
            entropy=float(np.log(moduli[0])),
            attractor="2-torus with Lebesgue measure",
        ),
        initial_point=np.array([math.sqrt(2.0) - 1.0, math.sqrt(3.0) - 1.0]),
        periods=np.array([1.0, 1.0]),
        params={"matrix": m.tolist()},
    )


def galerkin_diagonal(
    dim: int, decay: float, expansion: float = 2.0, cap: float = 0.4
) -> np.ndarray:
    """(b, min(cap, b decay^j) for j >= 1)."""
    j = np.arange(dim, dtype=float)
    a = np.minimum(cap, expansion * decay**j)
    a[0] = expansion
    return a


def dissipative_galerkin(
    dim: int = 16,
    decay: float = 0.8,
    nonlinearity_eps: float = 0.01,
    expansion: float = 2.0,
    cap: float = 0.4,
    modes: int = 8,
    diag: Optional[Sequence[float]] = None,
    base_shift: float = BASE_SHIFT,
    space: Optional[NormedSpace] = None,
) -> SmoothSystem:
    """x -> A x + eps N(x): an expanding circle coordinate driving contracting modes.

    A is diagonal; N couples mode j < ``modes`` to the angle and to mode j-1 through
    bounded terms (cos, sin and s^2/(1+s^2)); modes from ``modes`` on are a pure
    diagonal tail, so df is finite rank plus a diagonal contraction.
    """
    if diag is not None:
        # an explicit diagonal fixes the dimension
        a = np.asarray(diag, dtype=float)
        if a.ndim != 1:
            raise InputError("diag must be a flat list of diagonal entries")
        dim = a.size
    else:
        dim = int(dim)
        if not 0.0 < decay < 1.0:
            raise ConstructionError(f"decay must lie in (0, 1), got {decay}")
        a = galerkin_diagonal(dim, decay, expansion, cap)
    if not 3 <= dim <= 64:
        raise InputError(f"dissipative_galerkin dimension must lie in [3, 64], got {dim}")
    b = _integer_factor(float(a[0]), "expansion")
    if np.any(np.abs(a[1:]) >= 1.0) or np.any(a[1:] == 0.0):
        raise ConstructionError("all modes but the angle must be contracting and nonzero")
    eps = float(nonlinearity_eps)
    if eps < 0.0:
        raise ConstructionError(f"nonlinearity_eps must be nonnegative, got {eps}")
    coupled = min(int(modes), dim)
    pair = float(max(abs(a[1]), abs(a[2])))
    threshold = math.sin(math.pi / b) / math.sqrt(2.0)
    if eps > 0.0 and not pair / (1.0 - pair) < threshold:
        raise ConstructionError(
            f"modes 1 and 2 contract too weakly ({pair:.4g}) to separate the {b} preimage "
            f"branches (needs a/(1-a) < {threshold:.4g})"
        )
    if eps == 0.0:
        logger.warning("dissipative_galerkin with nonlinearity_eps=0 is not injective on its attractor")
    space = _space_or_default(space, dim)
    js = np.arange(3, coupled, dtype=float)

    def coupling(x: np.ndarray) -> np.ndarray:
        theta = x[..., 0]
        n = np.zeros_like(x)
        n[..., 1] = np.cos(theta)
        n[..., 2] = np.sin(theta)
        if coupled > 3:
            prev = x[..., 2 : coupled - 1]
            n[..., 3:coupled] = np.sin(js * theta[..., None]) / js + prev**2 / (1.0 + prev**2)
        return n

    def step(x: np.ndarray) -> np.ndarray:
        out = a * x + eps * coupling(x)
        out[..., 0] = b * x[..., 0] + base_shift
        return out

    def jacobian(x: np.ndarray) -> np.ndarray:
        theta = x[..., 0]
        j = np.zeros(x.shape + (dim,))
        idx = np.arange(dim)
        j[..., idx, idx] = a
        j[..., 1, 0] = -eps * np.sin(theta)
        j[..., 2, 0] = eps * np.cos(theta)
        if coupled > 3:
            rows = np.arange(3, coupled)
            prev = x[..., 2 : coupled - 1]
            j[..., rows, 0] = eps * np.cos(js * theta[..., None])
            j[..., rows, rows - 1] = eps * 2.0 * prev / (1.0 + prev**2) ** 2
        return j

    def preimages(x: np.ndarray) -> np.ndarray:
        y = step(x)
        out = np.empty(x.shape[:-1] + (b - 1, dim))
        for m in range(1, b):
            z = np.zeros_like(x)
            z[..., 0] = np.mod(x[..., 0] + TWO_PI * m / b, TWO_PI)
            for jj in range(1, dim):
                # mode j only sees the angle and mode j-1, so solve in order
                n_j = coupling(z)[..., jj] if jj < coupled else 0.0
                z[..., jj] = (y[..., jj] - eps * n_j) / a[jj]
            out[..., m - 1, :] = z
        return out

    bounds = np.zeros(dim)
    bounds[1:3] = 1.0
    bounds[3:coupled] = 1.0 / js + 1.0
    radius = eps * bounds / (1.0 - np.abs(a))

    def absorbing(x: np.ndarray) -> np.ndarray:
        return np.all(np.abs(x[..., 1:]) <= radius[1:] * (1.0 + 1e-9) + 1e-300, axis=-1)

    second = eps * math.sqrt(2.0 + float(np.sum(js**2)))
    return SmoothSystem(
        kind="dissipative_galerkin",
        space=space,
        step=step,
        jacobian=jacobian,
        second_derivative_bound=_norm_constant(space, second),
        invertible_on_attractor=eps > 0.0,
        known_answers=KnownAnswers(
            exponents=tuple(sorted(np.log(np.abs(a)).tolist(), reverse=True)),
            entropy=math.log(b),
            attractor=f"{dim}-mode truncation over the x{b} circle map",
        ),
        initial_point=np.concatenate([[0.3], np.zeros(dim - 1)]),
        periods=np.concatenate([[TWO_PI], np.zeros(dim - 1)]),
        tail_start=coupled,
        params={"dim": dim, "decay": decay, "nonlinearity_eps": eps, "diag": a.tolist(), "modes": coupled},
        preimages=preimages,
        absorbing=absorbing,
    )


BUILDERS = {
    "solenoid": solenoid,
    "diag_linear": diag_linear,
    "linear": linear,
    "toral_automorphism": toral_automorphism,
    "dissipative_galerkin": dissipative_galerkin,
}


def derivative_probe(system: SmoothSystem, points: np.ndarray, seed: int = 0, h: float = PROBE_STEP) -> np.ndarray:
    """|f(x+hv) - f(x) - h df_x v| - (M_0/2) h^2 |v|^2 for random unit v; <= round-off when consistent."""
    rng = np.random.default_rng(seed)
    v = system.space.random_unit_vectors(points.shape[0], rng)
    base = system.map(points)
    moved = system.map(points + h * v)
    linear_part = h * np.einsum("nij,nj->ni", system.jacobian(points), v)
    error = system.space.norm(system.displacement(base, moved) - linear_part)
    allowance = 0.5 * system.second_derivative_bound * h**2
    scale = 1.0 + system.space.norm(base)
    return error - allowance - 1e-12 * scale


def injectivity_probe(system: SmoothSystem, points: np.ndarray) -> int:
    """Number of sampled attractor points whose image has a second preimage in the absorbing region."""
    if system.preimages is None or system.absorbing is None:
        return 0
    others = system.preimages(points)
    return int(np.count_nonzero(np.any(system.absorbing(others), axis=-1)))


def probe_system(system: SmoothSystem, n_points: int = PROBE_POINTS, seed: int = 0) -> Dict[str, Any]:
    start = iterate(system, system.initial_point, n_points)
    points = orbit(system, start, n_points - 1).points
    excess = derivative_probe(system, points, seed)
    clashes = injectivity_probe(system, points) if system.invertible_on_attractor else 0
    trapped = bool(np.all(system.absorbing(points))) if system.absorbing is not None else True
    return {
        "derivative_excess": float(excess.max()),
        "injectivity_violations": clashes,
        "attractor_bounded": trapped,
    }


def build_test_system(
    kind: str,
    params: Optional[Dict[str, Any]] = None,
    space: Optional[NormedSpace] = None,
    verify: bool = True,
    seed: int = 0,
) -> SmoothSystem:
    """Build a built-in system and run the derivative and injectivity probes on it."""
    if kind not in BUILDERS:
        raise InputError(f"Unknown system kind '{kind}'. Choose from {', '.join(sorted(BUILDERS))}")
    try:
        system = BUILDERS[kind](**dict(params or {}), space=space)
    except TypeError as e:
        raise InputError(f"Invalid parameters for {kind}: {e}") from e
    if not verify:
        return system
    logger.info(f"Probing {kind} on {system.space.label}")
    probes = probe_system(system, seed=seed)
    if probes["derivative_excess"] > 0.0:
        raise ConstructionError(
            f"{kind}: derivative fails the finite-difference probe by {probes['derivative_excess']:.3e}"
        )
    if probes["injectivity_violations"]:
        raise ConstructionError(
            f"{kind}: {probes['injectivity_violations']} sampled points have a second preimage on the attractor"
        )
    if not probes["attractor_bounded"]:
        raise ConstructionError(f"{kind}: orbit left the absorbing region")
    return system


def system_from_config(config: SystemConfig, verify: bool = True, seed: int = 0) -> SmoothSystem:
    space = NormedSpace.from_config(config.space) if config.space is not None else None
    return build_test_system(config.kind, config.params, space=space, verify=verify, seed=seed)
