"""Derivative cocycles of smooth maps: orbits, Lyapunov spectra, Oseledets frames and
Lyapunov-adapted norms.

Backward orbits are never computed by inverting the map. A forward orbit x_0..x_n is
stored and, read from its last point, serves as the history x_{-n}..x_0; stable data at
a point come from the part of the orbit after it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import null_space

from .config import (
    ADAPTED_MAX_TERMS,
    ADAPTED_TERM_RTOL,
    BURN_IN,
    FRAME_WARMUP,
    MERGE_TOL_FLOOR,
    RANK_TOL,
    RESTART_CAP,
    SEARCH_TOL,
    TARGET_REL_ERR,
    TRACE_BATCHES,
    TRACE_POINTS,
)
from .errors import ConditioningError, DivergenceError, InputError
from .geometry import MAX_SEARCH_DIM, Splitting, gap_distances, operator_norm, projection_norm
from .report import Report
from .search import sphere_points
from .space import Frame, LinearMap, NormedSpace
from .tasks import spawn_seeds
from .volume import coordinate_log_ratio, det_restricted

logger = logging.getLogger(__name__)

PointMap = Callable[[np.ndarray], np.ndarray]
JACOBIAN_CHUNK = 2048
MAX_SPECTRUM_K = 4


@dataclass(frozen=True)
class KnownAnswers:
    exponents: Optional[Tuple[float, ...]] = None
    entropy: Optional[float] = None
    attractor: str = ""
    srb: bool = True  # False when the natural invariant measure is not SRB


@dataclass(frozen=True, eq=False)
class SmoothSystem:
    """A C^2 map of R^D, some coordinates possibly periodic, with its derivative.

    ``step`` and ``jacobian`` act on stacks of points along the last axis; ``periods``
    holds the period of each coordinate, 0 for coordinates that are not periodic.
    """

    kind: str
    space: NormedSpace
    step: PointMap
    jacobian: PointMap
    second_derivative_bound: float
    invertible_on_attractor: bool
    known_answers: KnownAnswers
    initial_point: np.ndarray
    periods: Optional[np.ndarray] = None
    tail_start: Optional[int] = None
    params: Dict[str, Any] = field(default_factory=dict)
    # other preimage branches of f(x), shape (..., b-1, D), for maps that are not
    # globally injective, and the indicator of their absorbing region
    preimages: Optional[PointMap] = None
    absorbing: Optional[PointMap] = None

    @property
    def dim(self) -> int:
        return self.space.dim

    def wrap(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.periods is None:
            return x
        periodic = self.periods > 0
        safe = np.where(periodic, self.periods, 1.0)
        return np.where(periodic, np.mod(x, safe), x)

    def map(self, x: np.ndarray) -> np.ndarray:
        return self.wrap(self.step(np.asarray(x, dtype=float)))

    def derivative(self, x: np.ndarray) -> LinearMap:
        return LinearMap(self.jacobian(np.asarray(x, dtype=float)), self.tail_start)

    def displacement(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """b - a, with periodic coordinates reduced to [-P/2, P/2)."""
        d = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
        if self.periods is None:
            return d
        periodic = self.periods > 0
        safe = np.where(periodic, self.periods, 1.0)
        return np.where(periodic, d - safe * np.round(d / safe), d)


def iterate(system: SmoothSystem, x0: np.ndarray, n: int) -> np.ndarray:
    """f^n(x0) for a point or a stack of points."""
    x = np.asarray(x0, dtype=float)
    if x.shape[-1:] != (system.dim,):
        raise InputError(f"points must have length {system.dim}, got shape {x.shape}")
    x = system.wrap(x)
    for _ in range(n):
        x = system.map(x)
    return x


@dataclass(frozen=True, eq=False)
class OrbitHistory:
    """Forward orbit x_0..x_n. Read from its last point it is the history x_{-n}..x_0."""

    system: SmoothSystem
    points: np.ndarray

    def __post_init__(self) -> None:
        p = np.array(self.points, dtype=float)
        if p.ndim != 2 or p.shape[1] != self.system.dim or p.shape[0] < 1:
            raise InputError(f"orbit points must have shape (n+1, {self.system.dim}), got {p.shape}")
        p.setflags(write=False)
        object.__setattr__(self, "points", p)

    def __len__(self) -> int:
        return int(self.points.shape[0]) - 1

    @property
    def base_point(self) -> np.ndarray:
        return self.points[-1]

    def jacobian(self, i: int) -> np.ndarray:
        return self.system.jacobian(self.points[i])

    def jacobian_chunks(self, start: int, stop: int) -> Iterator[Tuple[int, np.ndarray]]:
        """(offset, df at points[offset:offset+chunk]) for start <= offset < stop."""
        for offset in range(start, stop, JACOBIAN_CHUNK):
            yield offset, self.system.jacobian(self.points[offset : min(stop, offset + JACOBIAN_CHUNK)])

    def residual(self) -> float:
        """max_i |f(x_i) - x_{i+1}|; zero up to round-off for a genuine orbit."""
        if len(self) == 0:
            return 0.0
        images = self.system.map(self.points[:-1])
        gaps = self.system.space.norm(self.system.displacement(images, self.points[1:]))
        return float(np.max(gaps))

    def segment(self, start: int, stop: int) -> "OrbitHistory":
        return OrbitHistory(self.system, self.points[start : stop + 1])


def orbit(system: SmoothSystem, x0: np.ndarray, n: int) -> OrbitHistory:
    x = np.asarray(x0, dtype=float)
    if x.shape != (system.dim,):
        raise InputError(f"initial point must have length {system.dim}, got shape {x.shape}")
    x = system.wrap(x)
    points = np.empty((n + 1, system.dim))
    points[0] = x
    for i in range(n):
        points[i + 1] = system.map(points[i])
    return OrbitHistory(system, points)


def kuratowski_bound(a: Union[LinearMap, np.ndarray]) -> float:
    """Upper bound for the noncompactness seminorm |A|_alpha.

    Dense maps are finite rank here, hence compact; for K + diag tail the bound is the
    largest tail entry.
    """
    if isinstance(a, LinearMap) and a.tail_start is not None:
        tail = a.tail_diagonal
        return float(np.max(np.abs(tail))) if tail.size else 0.0
    return 0.0


def kuratowski_growth_bound(history: OrbitHistory) -> float:
    """(1/n) sum_i log kuratowski_bound(df at x_i); negative means the tail condition holds."""
    n = len(history)
    if n == 0:
        raise InputError("kuratowski_growth_bound needs at least one step")
    tail_start = history.system.tail_start
    if tail_start is None:
        return -math.inf
    total = 0.0
    for _, jac in history.jacobian_chunks(0, n):
        tails = np.abs(np.diagonal(jac, axis1=-2, axis2=-1)[:, tail_start:])
        if tails.shape[1] == 0:
            return -math.inf
        bounds = tails.max(axis=1)
        if np.any(bounds == 0.0):
            return -math.inf
        total += float(np.sum(np.log(bounds)))
    return total / n


class _FrameCollapse(Exception):
    pass


def _random_orthonormal(rng: np.random.Generator, d: int, k: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((d, k)))
    return q


def _signed_qr(v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    q, r = np.linalg.qr(v)
    signs = np.where(np.diag(r) < 0.0, -1.0, 1.0)
    return q * signs, r * signs[:, None]


def _rebase(v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    q, r = _signed_qr(v)
    d = np.diag(r)
    if not d.min() > RANK_TOL * d.max():
        raise _FrameCollapse(f"R diagonal {d.min():.3e}/{d.max():.3e}")
    return q, np.log(d)


def _sweep(
    history: OrbitHistory, q: np.ndarray, start: int, stop: int, rebase_every: int = 1
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Push the frame q from x_start to x_stop, re-basing every ``rebase_every`` steps.

    Returns (final orthonormal frame, per-block log R diagonals, steps per block).
    """
    logs: List[np.ndarray] = []
    steps: List[int] = []
    v = q
    pending = 0
    for _, jac in history.jacobian_chunks(start, stop):
        for j in jac:
            v = j @ v
            pending += 1
            if pending == rebase_every:
                v, log_d = _rebase(v)
                logs.append(log_d)
                steps.append(pending)
                pending = 0
    if pending:
        v, log_d = _rebase(v)
        logs.append(log_d)
        steps.append(pending)
    return v, np.array(logs).reshape(-1, q.shape[1]), np.array(steps, dtype=int)


def _batch_error(blocks: np.ndarray, steps: np.ndarray) -> np.ndarray:
    """Standard error of the rate sum(blocks)/sum(steps) from contiguous batch means."""
    n_batches = min(TRACE_BATCHES, len(steps))
    if n_batches < 2:
        return np.zeros(blocks.shape[1])
    groups = np.array_split(np.arange(len(steps)), n_batches)
    rates = np.array([blocks[g].sum(axis=0) / steps[g].sum() for g in groups])
    return rates.std(axis=0, ddof=1) / math.sqrt(n_batches)


def merge_exponents(raw: Sequence[float], merge_tol: float) -> Tuple[Tuple[float, ...], Tuple[int, ...]]:
    """Group sorted exponents whose neighbours differ by at most merge_tol."""
    values = sorted((float(v) for v in raw), reverse=True)
    groups: List[List[float]] = []
    for v in values:
        if groups and groups[-1][-1] - v <= merge_tol:
            groups[-1].append(v)
        else:
            groups.append([v])
    return tuple(float(np.mean(g)) for g in groups), tuple(len(g) for g in groups)


@dataclass(frozen=True)
class LyapunovReport:
    exponents: Tuple[float, ...]  # distinct, descending
    multiplicities: Tuple[int, ...]
    raw_exponents: np.ndarray
    std_errors: np.ndarray
    partial_sums: np.ndarray  # (1/n) log det growth of the nested j-frames
    partial_sum_errors: np.ndarray
    traces: np.ndarray  # running means of the raw exponents
    trace_steps: np.ndarray
    n_steps: int
    rebase_every: int
    restarts: int
    merge_tol: float
    seed: int
    final_point: np.ndarray
    unstable_frame: Optional[Frame] = None

    @property
    def spectrum(self) -> np.ndarray:
        return np.repeat(np.array(self.exponents), self.multiplicities)

    @property
    def unstable_dimension(self) -> int:
        return int(sum(m for lam, m in zip(self.exponents, self.multiplicities) if lam > self.merge_tol))

    @property
    def positive_sum(self) -> float:
        """sum_i m_i lambda_i^+."""
        return float(sum(m * lam for lam, m in zip(self.exponents, self.multiplicities) if lam > self.merge_tol))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "exponents": list(self.exponents),
            "multiplicities": list(self.multiplicities),
            "raw_exponents": self.raw_exponents.tolist(),
            "std_errors": self.std_errors.tolist(),
            "partial_sums": self.partial_sums.tolist(),
            "partial_sum_errors": self.partial_sum_errors.tolist(),
            "n_steps": self.n_steps,
            "rebase_every": self.rebase_every,
            "restarts": self.restarts,
            "merge_tol": self.merge_tol,
            "seed": self.seed,
            "positive_sum": self.positive_sum,
            "traces": {
                "steps": self.trace_steps.tolist(),
                "running_means": self.traces.tolist(),
            },
        }


def lyapunov_spectrum(
    system: SmoothSystem,
    x0: Optional[np.ndarray] = None,
    n_steps: int = 10_000,
    k: Optional[int] = None,
    rebase_every: int = 1,
    seed: int = 0,
    burn_in: int = BURN_IN,
    warmup: int = FRAME_WARMUP,
    merge_tol: Optional[float] = None,
    target_rel_err: float = TARGET_REL_ERR,
) -> LyapunovReport:
    """Lyapunov exponents as determinant growth rates of nested pushed frames.

    Between re-basings the frame is pushed unchanged; at a re-basing it is replaced by
    the Q factor of its Euclidean QR decomposition. Each block then contributes
    log det(T|E) = log |det R| + log cv(Q_old) - log cv(Q_new), cv being the coordinate
    volume of the unit ball of the span, and the cv terms telescope, leaving one
    correction between the first and the last frame.
    """
    d = system.dim
    k = min(d, MAX_SPECTRUM_K) if k is None else k
    if not 1 <= k <= min(d, MAX_SPECTRUM_K):
        raise InputError(f"k must be between 1 and {min(d, MAX_SPECTRUM_K)}, got {k}")
    if n_steps < 1 or rebase_every < 1:
        raise InputError("n_steps and rebase_every must be positive")
    start = iterate(system, system.initial_point if x0 is None else x0, burn_in)
    logger.info(f"Burn-in of {burn_in} steps done for {system.kind}, pushing a {k}-frame for {n_steps} steps")
    history = orbit(system, start, warmup + n_steps)

    seeds = spawn_seeds(seed, RESTART_CAP + 1)
    restarts = 0
    for attempt in range(RESTART_CAP + 1):
        rng = np.random.default_rng(seeds[attempt])
        try:
            q_start, _, _ = _sweep(history, _random_orthonormal(rng, d, k), 0, warmup)
            q_end, logs, steps = _sweep(history, q_start, warmup, warmup + n_steps, rebase_every)
            break
        except _FrameCollapse as e:
            restarts += 1
            logger.warning(f"Frame collapsed ({e}), restart {restarts} with a fresh random frame")
    else:
        raise ConditioningError(
            f"frame collapsed {restarts} times; lower rebase_every ({rebase_every}) or k ({k})"
        )

    cumulative = np.cumsum(logs, axis=1)
    corrections = np.zeros(k)
    correction_errors = np.zeros(k)
    for j in range(1, k + 1):
        corrections[j - 1], correction_errors[j - 1] = coordinate_log_ratio(
            Frame(system.space, q_start[:, :j]), Frame(system.space, q_end[:, :j]), seed, target_rel_err
        )
    partial_sums = (cumulative.sum(axis=0) + corrections) / n_steps
    partial_errors = np.hypot(_batch_error(cumulative, steps), correction_errors / n_steps)
    raw = np.diff(partial_sums, prepend=0.0)
    previous = np.concatenate([[0.0], correction_errors[:-1]])
    raw_errors = np.sqrt(_batch_error(logs, steps) ** 2 + (correction_errors**2 + previous**2) / n_steps**2)

    running = np.cumsum(logs, axis=0)
    done = np.cumsum(steps)
    picks = np.unique(np.linspace(0, len(steps) - 1, min(TRACE_POINTS, len(steps))).round().astype(int))
    traces = running[picks] / done[picks][:, None]

    tol = merge_tol if merge_tol is not None else max(10.0 * float(raw_errors.max()), MERGE_TOL_FLOOR)
    exponents, multiplicities = merge_exponents(raw, tol)
    m_u = int(np.count_nonzero(raw > tol))
    unstable = Frame(system.space, q_end[:, :m_u]) if 0 < m_u <= k else None
    report = LyapunovReport(
        exponents=exponents,
        multiplicities=multiplicities,
        raw_exponents=raw,
        std_errors=raw_errors,
        partial_sums=partial_sums,
        partial_sum_errors=partial_errors,
        traces=traces,
        trace_steps=done[picks],
        n_steps=n_steps,
        rebase_every=rebase_every,
        restarts=restarts,
        merge_tol=tol,
        seed=seed,
        final_point=history.base_point.copy(),
        unstable_frame=unstable,
    )
    logger.info(f"Lyapunov spectrum of {system.kind}: {', '.join(f'{v:.6g}' for v in raw)}")
    return report


@dataclass(frozen=True)
class UnstableEstimate:
    frame: Frame
    point: np.ndarray
    gap: float  # d_H between the estimates from the full and the half history
    converged: bool
    n_steps: int
    warning: Optional[str] = None


def unstable_frame(
    history: OrbitHistory,
    m_u: int,
    seed: int = 0,
    tol: float = 1e-6,
    warmup: int = FRAME_WARMUP,
) -> UnstableEstimate:
    """E^u at the last point of the history, from a random m_u-frame pushed along it."""
    system = history.system
    n = len(history)
    if not 1 <= m_u <= min(system.dim, MAX_SEARCH_DIM):
        raise InputError(f"m_u must be between 1 and {min(system.dim, MAX_SEARCH_DIM)}, got {m_u}")
    if n < 2:
        raise InputError("unstable_frame needs a history of at least two steps")
    problems = []
    if n < warmup:
        problems.append(f"history of {n} steps is shorter than the warm-up {warmup}")
    residual = history.residual()
    if residual > 1e-8 * max(1.0, float(np.max(np.abs(history.points)))):
        problems.append(f"history is not an orbit (residual {residual:.3e})")

    rng = np.random.default_rng(seed)
    q0 = _random_orthonormal(rng, system.dim, m_u)
    try:
        full, _, _ = _sweep(history, q0, 0, n)
        half, _, _ = _sweep(history, q0, n - n // 2, n)
    except _FrameCollapse as e:
        raise ConditioningError(f"unstable frame collapsed along the history: {e}") from e
    frame = Frame(system.space, full)
    _, gap = gap_distances(frame, Frame(system.space, half))
    if gap > tol:
        problems.append(f"estimates from {n} and {n // 2} steps differ by d_H={gap:.3e}")
    warning = "; ".join(problems) or None
    if warning:
        logger.warning(f"Unstable frame not converged: {warning}")
    return UnstableEstimate(frame, history.base_point.copy(), gap, warning is None, n, warning)


@dataclass(frozen=True, eq=False)
class OseledetsFrames:
    """E^u and E^s along an orbit: E^u from a forward QR sweep, E^s as the annihilator
    of the fastest subspace of the adjoint cocycle swept backwards from the future.

    Index i is meaningful for ``first <= i <= last``.
    """

    history: OrbitHistory
    m_u: int
    unstable: np.ndarray  # (n+1, D, m_u)
    stable_dual: np.ndarray  # (n+1, D, m_u)
    first: int
    last: int

    @property
    def system(self) -> SmoothSystem:
        return self.history.system

    @property
    def space(self) -> NormedSpace:
        return self.history.system.space

    def check_index(self, i: int) -> None:
        if not self.first <= i <= self.last:
            raise InputError(f"index {i} outside the converged range [{self.first}, {self.last}]")

    def unstable_frame(self, i: int) -> Frame:
        return Frame(self.space, self.unstable[i])

    def stable_basis(self, i: int) -> np.ndarray:
        return null_space(self.stable_dual[i].T)

    def stable_frame(self, i: int) -> Frame:
        return Frame(self.space, self.stable_basis(i))

    def splitting(self, i: int) -> Splitting:
        """E^u + E^s at x_i with |pi^u| exact."""
        e = self.unstable_frame(i)
        f = self.stable_frame(i)
        p = projection_norm(e, f)
        return Splitting(e, f, p, 1.0 / p)

    def coordinates(self, i: int, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(a, b) with v = U a + S b for the bases at x_i; v of shape (..., D)."""
        w = np.hstack([self.unstable[i], self.stable_basis(i)])
        flat = np.asarray(v, dtype=float).reshape(-1, w.shape[0])
        coeffs = np.linalg.solve(w, flat.T).T.reshape(np.shape(v)[:-1] + (w.shape[1],))
        return coeffs[..., : self.m_u], coeffs[..., self.m_u :]

    def invariance_residual(self, i: int) -> float:
        """delta_a(df E^u(x_i), E^u(x_{i+1}))."""
        image = Frame(self.space, self.history.jacobian(i) @ self.unstable[i])
        delta_a, _ = gap_distances(image, self.unstable_frame(i + 1))
        return delta_a


def oseledets_frames(
    history: OrbitHistory, m_u: int, seed: int = 0, warmup: int = FRAME_WARMUP
) -> OseledetsFrames:
    system = history.system
    n = len(history)
    if not 1 <= m_u < system.dim:
        raise InputError(f"need 1 <= m_u < D={system.dim}, got {m_u}")
    if n <= 2 * warmup:
        raise InputError(f"history of {n} steps is too short for two warm-ups of {warmup}")
    rng = np.random.default_rng(seed)
    unstable = np.empty((n + 1, system.dim, m_u))
    stable_dual = np.empty((n + 1, system.dim, m_u))
    try:
        q = _random_orthonormal(rng, system.dim, m_u)
        unstable[0] = q
        for offset, jac in history.jacobian_chunks(0, n):
            for j, matrix in enumerate(jac):
                q, _ = _rebase(matrix @ q)
                unstable[offset + j + 1] = q
        w = _random_orthonormal(rng, system.dim, m_u)
        stable_dual[n] = w
        for i in range(n - 1, -1, -1):
            w, _ = _rebase(history.jacobian(i).T @ w)
            stable_dual[i] = w
    except _FrameCollapse as e:
        raise ConditioningError(f"Oseledets sweep collapsed: {e}") from e
    logger.info(f"Oseledets frames along {n} steps, usable on [{warmup}, {n - warmup}]")
    return OseledetsFrames(history, m_u, unstable, stable_dual, warmup, n - warmup)


def log_unstable_jacobian(
    frames: OseledetsFrames, i: int, seed: int = 0, target_rel_err: float = TARGET_REL_ERR
) -> Tuple[float, float]:
    """log J^u(x_i) = log det(df_{x_i} | E^u(x_i)) with its standard error."""
    result = det_restricted(frames.history.jacobian(i), frames.unstable_frame(i), seed, target_rel_err)
    return result.log_value, result.std_error_log


@dataclass(frozen=True)
class AdaptedNormParams:
    lambda0: float
    delta0: float
    delta2: float
    m_u: int
    max_terms: int = ADAPTED_MAX_TERMS
    term_rtol: float = ADAPTED_TERM_RTOL

    def __post_init__(self) -> None:
        if not self.lambda0 > 0:
            raise InputError(f"lambda0 must be positive, got {self.lambda0}")
        if not 0 < self.delta0 < self.lambda0 / 2:
            raise InputError(f"delta0 must lie in (0, lambda0/2), got {self.delta0}")
        if self.m_u < 1:
            raise InputError("m_u must be at least 1")
        if not 0 < self.delta2 <= self.lam / (100.0 * self.m_u) * (1.0 + 1e-12):
            raise InputError(f"delta2 must lie in (0, lambda/(100 m_u)], got {self.delta2}")

    @property
    def lam(self) -> float:
        return self.lambda0 - 2.0 * self.delta0

    @classmethod
    def from_exponents(
        cls,
        spectrum: Union[LyapunovReport, Sequence[float]],
        delta0: Optional[float] = None,
        delta2: Optional[float] = None,
    ) -> "AdaptedNormParams":
        """lambda0 = min(lambda^+, -lambda^-); delta0 = lambda0/20, delta2 = lambda/(100 m_u) by default."""
        values = spectrum.spectrum if isinstance(spectrum, LyapunovReport) else np.asarray(spectrum, dtype=float)
        tol = spectrum.merge_tol if isinstance(spectrum, LyapunovReport) else 0.0
        positive = [v for v in values if v > tol]
        negative = [v for v in values if v < -tol]
        if not positive:
            raise InputError("adapted norms need at least one positive exponent")
        lambda0 = min(positive) if not negative else min(min(positive), -max(negative))
        d0 = lambda0 / 20.0 if delta0 is None else delta0
        m_u = len(positive)
        d2 = (lambda0 - 2.0 * d0) / (100.0 * m_u) if delta2 is None else delta2
        return cls(lambda0=lambda0, delta0=d0, delta2=d2, m_u=m_u)


@dataclass(frozen=True)
class AdaptedNormValue:
    value: float
    tail_bound: float
    terms: int
    unstable_part: float
    stable_part: float


def _close_series(sums: np.ndarray, last: np.ndarray, ratio: np.ndarray, exhausted: bool) -> np.ndarray:
    tails = np.zeros_like(sums)
    open_ = last > 0.0
    growing = open_ & (ratio >= 1.0)
    if np.any(growing & (last > ADAPTED_TERM_RTOL * sums)) and exhausted:
        raise DivergenceError(f"adapted-norm series terms stopped decaying (ratio {float(ratio.max()):.4g})")
    decaying = open_ & (ratio < 1.0)
    tails[decaying] = last[decaying] * ratio[decaying] / (1.0 - ratio[decaying])
    return tails


def unstable_series(
    frames: OseledetsFrames, i: int, coeffs: np.ndarray, params: AdaptedNormParams
) -> Tuple[np.ndarray, np.ndarray, int]:
    """sum_n |df^{-n} u| e^{n lambda} for u = U_i c, c of shape (P, m_u).

    df^{-n} is taken inside the unstable frames by least squares along the history.
    Returns (partial sums including the tail estimate, tail estimates, terms used).
    """
    space = frames.space
    u = np.asarray(coeffs, dtype=float) @ frames.unstable[i].T
    sums = space.norm(u)
    last = sums.copy()
    ratio = np.zeros_like(sums)
    terms = 1
    exhausted = False
    for n in range(1, params.max_terms):
        j = i - n
        if j < frames.first:
            logger.debug(f"unstable series at {i} truncated at the window start after {terms} terms")
            break
        basis = frames.unstable[j]
        c, *_ = np.linalg.lstsq(frames.history.jacobian(j) @ basis, u.T, rcond=None)
        u = (basis @ c).T
        term = space.norm(u) * math.exp(n * params.lam)
        ratio = np.divide(term, last, out=np.zeros_like(term), where=last > 0)
        last = term
        sums = sums + term
        terms += 1
        if np.all(term <= params.term_rtol * sums):
            break
    else:
        exhausted = True
    tails = _close_series(sums, last, ratio, exhausted)
    return sums + tails, tails, terms


def stable_series(
    frames: OseledetsFrames, i: int, coeffs: np.ndarray, params: AdaptedNormParams
) -> Tuple[np.ndarray, np.ndarray, int]:
    """sum_n |df^n w| e^{n lambda} for w = S_i c; each image is projected back onto E^s
    along E^u so that round-off does not feed the unstable direction."""
    space = frames.space
    w = np.asarray(coeffs, dtype=float) @ frames.stable_basis(i).T
    sums = space.norm(w)
    last = sums.copy()
    ratio = np.zeros_like(sums)
    terms = 1
    exhausted = False
    for n in range(1, params.max_terms):
        j = i + n
        if j > frames.last:
            logger.debug(f"stable series at {i} truncated at the window end after {terms} terms")
            break
        image = w @ frames.history.jacobian(j - 1).T
        _, b = frames.coordinates(j, image)
        w = b @ frames.stable_basis(j).T
        term = space.norm(w) * math.exp(n * params.lam)
        ratio = np.divide(term, last, out=np.zeros_like(term), where=last > 0)
        last = term
        sums = sums + term
        terms += 1
        if np.all(term <= params.term_rtol * sums):
            break
    else:
        exhausted = True
    tails = _close_series(sums, last, ratio, exhausted)
    return sums + tails, tails, terms


def adapted_norms(
    frames: OseledetsFrames, i: int, vectors: np.ndarray, params: AdaptedNormParams
) -> Tuple[np.ndarray, np.ndarray]:
    """|v|'_x = max(|pi^u v|', |pi^s v|') for a stack of vectors; returns (values, tails)."""
    v = np.atleast_2d(np.asarray(vectors, dtype=float))
    a, b = frames.coordinates(i, v)
    u_val, u_tail, _ = unstable_series(frames, i, a, params)
    s_val, s_tail, _ = stable_series(frames, i, b, params)
    take_u = u_val >= s_val
    return np.where(take_u, u_val, s_val), np.where(take_u, u_tail, s_tail)


def adapted_norm(
    frames: OseledetsFrames, i: int, v: np.ndarray, params: AdaptedNormParams
) -> AdaptedNormValue:
    """Truncated Lyapunov-adapted norm of a single vector at x_i."""
    frames.check_index(i)
    vec = np.asarray(v, dtype=float).reshape(1, -1)
    if vec.shape[1] != frames.system.dim:
        raise InputError(f"vector has length {vec.shape[1]}, space dimension is {frames.system.dim}")
    a, b = frames.coordinates(i, vec)
    u_val, u_tail, u_terms = unstable_series(frames, i, a, params)
    s_val, s_tail, s_terms = stable_series(frames, i, b, params)
    if u_val[0] >= s_val[0]:
        return AdaptedNormValue(float(u_val[0]), float(u_tail[0]), u_terms, float(u_val[0]), float(s_val[0]))
    return AdaptedNormValue(float(s_val[0]), float(s_tail[0]), s_terms, float(u_val[0]), float(s_val[0]))


def slowly_varying_envelope(values: np.ndarray, delta2: float) -> np.ndarray:
    """l(x_i) = max_j e^{-|i-j| delta2} values[j] over the window."""
    v = np.asarray(values, dtype=float)
    idx = np.arange(v.size)
    weights = np.exp(-np.abs(idx[:, None] - idx[None, :]) * delta2)
    return np.max(weights * v[None, :], axis=1)


@dataclass(frozen=True)
class ChartQuality:
    indices: np.ndarray
    c_u: np.ndarray
    c_c: np.ndarray
    c_s: np.ndarray
    proj_u: np.ndarray
    proj_s: np.ndarray
    c_total: np.ndarray
    l_tilde: np.ndarray
    l_envelope: np.ndarray
    c_u_envelope: np.ndarray
    report: Report

    def records(self) -> List[Dict[str, float]]:
        return [
            {
                "index": int(i),
                "C_u": float(self.c_u[n]),
                "C_c": float(self.c_c[n]),
                "C_s": float(self.c_s[n]),
                "proj_u": float(self.proj_u[n]),
                "proj_s": float(self.proj_s[n]),
                "C": float(self.c_total[n]),
                "l_tilde": float(self.l_tilde[n]),
                "l": float(self.l_envelope[n]),
                "C_u_prime": float(self.c_u_envelope[n]),
            }
            for n, i in enumerate(self.indices)
        ]


def _unit_ratio_sup(
    series, frames: OseledetsFrames, i: int, basis: np.ndarray, params: AdaptedNormParams, probes: np.ndarray
) -> float:
    vectors = probes @ basis.T
    lengths = frames.space.norm(vectors)
    values, _, _ = series(frames, i, probes, params)
    return float(np.max(values / lengths))


def chart_quality(
    frames: OseledetsFrames,
    params: AdaptedNormParams,
    start: Optional[int] = None,
    n_points: int = 50,
    n_probe: int = 32,
    seed: int = 0,
) -> ChartQuality:
    """Finite-orbit estimates of C_u, C_s, the projection norms, C(x) and l~(x) on a
    contiguous window, with one-step hyperbolicity and norm-comparison rows."""
    system = frames.system
    space = frames.space
    first = frames.first if start is None else start
    stop = min(first + n_points, frames.last)
    if first < frames.first or stop <= first:
        raise InputError(f"chart window [{first}, {stop}) outside the converged range")
    rng = np.random.default_rng(seed)
    window = np.arange(first, stop + 1)
    m_u = frames.m_u
    u_probes = sphere_points(m_u, 64) if m_u > 1 else np.ones((1, 1))
    c_u, c_s, proj_u, proj_s = (np.zeros(window.size) for _ in range(4))
    for n, i in enumerate(window):
        split = frames.splitting(int(i))
        proj_u[n] = split.proj_norm
        p_u = split.e.basis @ np.linalg.inv(np.hstack([split.e.basis, split.f.basis]))[:m_u]
        proj_s[n] = operator_norm(np.eye(system.dim) - p_u, space)
        c_u[n] = _unit_ratio_sup(unstable_series, frames, int(i), frames.unstable[i], params, u_probes)
        s_basis = frames.stable_basis(int(i))
        s_probes = np.vstack([np.eye(s_basis.shape[1]), rng.standard_normal((n_probe, s_basis.shape[1]))])
        c_s[n] = _unit_ratio_sup(stable_series, frames, int(i), s_basis, params, s_probes)
    c_c = np.zeros(window.size)
    c_total = np.max(np.vstack([c_u, c_s, proj_u, proj_s]), axis=0)
    factor = max(27.0 * system.second_derivative_bound / (1.0 - math.exp(-params.delta0)), 1.0)
    l_tilde = factor * c_total[1:] ** 2  # needs C(fx), so the last window point only feeds its predecessor
    indices = window[:-1]
    l_env = slowly_varying_envelope(l_tilde, params.delta2)
    c_u_env = slowly_varying_envelope(c_u[:-1], params.delta2)

    report = Report(
        "chart_quality",
        metadata={"kind": system.kind, "space": space.label, "seed": seed, "start": first,
                  "lambda": params.lam, "delta0": params.delta0, "delta2": params.delta2},
    )
    grow = math.exp(params.lam)
    comparison = 3.0 / (1.0 - math.exp(-params.delta0))
    for n, i in enumerate(indices):
        i = int(i)
        case = f"x{i}"
        jac = frames.history.jacobian(i)
        u = rng.standard_normal(m_u) @ frames.unstable[i].T
        w = rng.standard_normal(system.dim - m_u) @ frames.stable_basis(i).T
        (u_here, w_here), (u_tail, w_tail) = adapted_norms(frames, i, np.vstack([u, w]), params)
        (u_next, w_next), (un_tail, wn_tail) = adapted_norms(frames, i + 1, np.vstack([jac @ u, jac @ w]), params)
        if max(u_tail / u_here, w_tail / w_here, un_tail / u_next, wn_tail / w_next) < 0.01:
            report.add("one_step_unstable", case, grow * u_here, u_next, slack=grow * u_tail + un_tail + 1e-12 * u_next)
            report.add("one_step_stable", case, w_next, w_here / grow, slack=w_tail / grow + wn_tail + 1e-12 * w_here)
        else:
            report.add("one_step_unstable", case, math.nan, math.nan, vacuous=True, note="truncation tail above 1%")
            report.add("one_step_stable", case, math.nan, math.nan, vacuous=True, note="truncation tail above 1%")
        p = rng.standard_normal(system.dim)
        (p_adapted,), _ = adapted_norms(frames, i, p[None, :], params)
        length = float(space.norm(p))
        report.add("norm_comparison.lower", case, length / 3.0, p_adapted, slack=SEARCH_TOL * length)
        upper = comparison * c_total[n] ** 2 * length
        report.add("norm_comparison.upper", case, p_adapted, upper, slack=SEARCH_TOL * upper)
    for n in range(1, indices.size - 1):
        case = f"x{int(indices[n])}"
        bound = math.exp(params.delta2) * l_env[n]
        report.add("envelope_forward", case, l_env[n + 1], bound, slack=1e-12 * bound)
        report.add("envelope_backward", case, l_env[n - 1], bound, slack=1e-12 * bound)
    ratios = l_tilde[1:] / l_tilde[:-1] if l_tilde.size > 1 else np.ones(1)
    report.values.update({
        "max_l_tilde_ratio": float(ratios.max()),
        "slow_variation_threshold": math.exp(params.delta2),
        "l_tilde_slowly_varying": bool(ratios.max() <= math.exp(params.delta2)),
        "max_C": float(c_total.max()),
    })
    logger.info(f"Chart quality on {indices.size} points: max C = {c_total.max():.4g}, max l~ = {l_tilde.max():.4g}")
    return ChartQuality(
        indices, c_u[:-1], c_c[:-1], c_s[:-1], proj_u[:-1], proj_s[:-1], c_total[:-1],
        l_tilde, l_env, c_u_env, report,
    )
