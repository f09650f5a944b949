"""Local unstable manifolds as graphs over E^u, their induced volumes and distortion.

A leaf at x_i is the graph u -> x_i + U u + S g(u) over a box of radius r in E^u,
with U, S the unstable and stable bases of the Oseledets splitting at x_i. Leaves are
produced by pushing the flat graph g = 0 forward along the stored orbit; each step
keeps, for every new grid node, the parameter of its preimage on the previous leaf.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import CubicSpline, LinearNDInterpolator, RegularGridInterpolator
from scipy.optimize import bisect
from scipy.spatial import Delaunay
from scipy.stats import linregress

from .cocycle import (
    AdaptedNormParams,
    OrbitHistory,
    OseledetsFrames,
    SmoothSystem,
    adapted_norms,
    iterate,
    orbit,
    oseledets_frames,
)
from .config import (
    BURN_IN,
    CHART_DEPTH,
    CHART_RADIUS,
    CHART_WINDOW,
    CONTRACTION_PAIRS,
    CONTRACTION_REFINE,
    DISTORTION_FLOOR_ULPS,
    DISTORTION_MAX_DEPTH,
    DISTORTION_TOL,
    LEAF_GRID_POINTS,
    LEAF_HISTORY_STEPS,
    LEAF_LIPSCHITZ_MAX,
    LEAF_TOL,
    NEWTON_MAX_ITER,
    NEWTON_TOL,
    QUADRATURE_ORDER,
    TARGET_REL_ERR,
)
from .errors import (
    ConvergenceError,
    CoverageError,
    DistortionError,
    HyperbolicityError,
    InputError,
    RootFindingError,
    UnsupportedDimensionError,
)
from .geometry import operator_norm
from .report import Report, plot_series
from .space import Frame, NormedSpace
from .tasks import spawn_seeds
from .volume import VolumeEstimate, det_restricted, induced_volume_parallelepiped

logger = logging.getLogger(__name__)

MAX_LEAF_DIM = 2
GRID_POINTS_2D = 17
SHOOTING_DEPTH = 12
SHOOTING_TOL = 1e-4
INVARIANCE_TOL = 1e-4
WeightFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class ChartFrame:
    """Affine chart v -> x + v at an orbit point, with v = U u + S s."""

    system: SmoothSystem
    index: int
    point: np.ndarray
    unstable: np.ndarray  # (D, m_u)
    stable: np.ndarray  # (D, D - m_u)
    radius: float
    residual: float = 0.0  # sine of the Euclidean angle between df E^u(x_{i-1}) and E^u(x_i)

    @property
    def m_u(self) -> int:
        return int(self.unstable.shape[1])

    @property
    def space(self) -> NormedSpace:
        return self.system.space

    def coordinates(self, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        w = np.hstack([self.unstable, self.stable])
        v = np.asarray(v, dtype=float)
        flat = v.reshape(-1, w.shape[0])
        coeffs = np.linalg.solve(w, flat.T).T.reshape(v.shape[:-1] + (w.shape[1],))
        return coeffs[..., : self.m_u], coeffs[..., self.m_u :]

    def offset(self, u: np.ndarray, s: np.ndarray) -> np.ndarray:
        return np.asarray(u) @ self.unstable.T + np.asarray(s) @ self.stable.T


def chart_frame(frames: OseledetsFrames, i: int, radius: float = CHART_RADIUS) -> ChartFrame:
    frames.check_index(i)
    if radius <= 0:
        raise InputError(f"chart radius must be positive, got {radius}")
    residual = 0.0
    if i > 0:
        image = frames.history.jacobian(i - 1) @ frames.unstable[i - 1]
        q = frames.unstable[i]
        outside = image - q @ (q.T @ image)
        residual = float(np.linalg.norm(outside) / np.linalg.norm(image))
    return ChartFrame(
        frames.system, i, frames.history.points[i].copy(), frames.unstable[i].copy(),
        frames.stable_basis(i), float(radius), residual,
    )


def chart_image(source: ChartFrame, target: ChartFrame, offsets: np.ndarray) -> np.ndarray:
    """f(x_i + v) - x_{i+1} for offsets v at the source point, through the lift of f."""
    system = source.system
    base = system.step(source.point)
    shift = system.displacement(target.point, system.wrap(base))
    return system.step(source.point + offsets) - base + shift


@dataclass(frozen=True, eq=False)
class LeafGraph:
    """Graph of g over the grid ``nodes`` (per unstable axis) in a chart.

    ``values`` has shape (n,)*m_u + (D - m_u,). ``lineage`` holds the leaves at
    x_{i-1}, x_{i-2}, ... this one was transformed from, and ``preimage_params`` the
    unstable parameter on ``lineage[0]`` of the preimage of every node.
    """

    chart: ChartFrame
    nodes: np.ndarray
    values: np.ndarray
    preimage_params: Optional[np.ndarray] = None
    lineage: Tuple["LeafGraph", ...] = ()
    contraction: Optional[float] = None
    _interp: Any = field(init=False, repr=False)

    def __post_init__(self) -> None:
        m_u = self.chart.m_u
        if m_u > MAX_LEAF_DIM:
            raise UnsupportedDimensionError(f"leaves are supported for m_u <= {MAX_LEAF_DIM}, got {m_u}")
        nodes = np.asarray(self.nodes, dtype=float)
        values = np.asarray(self.values, dtype=float)
        expected = (nodes.size,) * m_u + (self.chart.stable.shape[1],)
        if values.shape != expected:
            raise InputError(f"leaf values must have shape {expected}, got {values.shape}")
        if m_u == 1:
            interp: Any = CubicSpline(nodes, values, axis=0)
        else:
            interp = RegularGridInterpolator(
                (nodes, nodes), values, method="cubic", bounds_error=False, fill_value=None
            )
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_interp", interp)

    @classmethod
    def flat(cls, chart: ChartFrame, n_nodes: int) -> "LeafGraph":
        nodes = np.linspace(-chart.radius, chart.radius, n_nodes)
        shape = (n_nodes,) * chart.m_u + (chart.stable.shape[1],)
        return cls(chart, nodes, np.zeros(shape))

    @property
    def m_u(self) -> int:
        return self.chart.m_u

    @property
    def radius(self) -> float:
        return self.chart.radius

    @property
    def spacing(self) -> float:
        return float(self.nodes[1] - self.nodes[0])

    @property
    def reference(self) -> int:
        """Flat index of the node u = 0."""
        mid = self.nodes.size // 2
        return mid if self.m_u == 1 else mid * self.nodes.size + mid

    def grid_points(self) -> np.ndarray:
        if self.m_u == 1:
            return self.nodes[:, None]
        a, b = np.meshgrid(self.nodes, self.nodes, indexing="ij")
        return np.stack([a.ravel(), b.ravel()], axis=-1)

    def node_values(self) -> np.ndarray:
        return self.values.reshape(-1, self.values.shape[-1])

    def g(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.m_u == 1:
            return self._interp(u[..., 0])
        return self._interp(u)

    def dg(self, u: np.ndarray) -> np.ndarray:
        """Derivative of g, shape (..., D - m_u, m_u)."""
        u = np.asarray(u, dtype=float)
        if self.m_u == 1:
            return self._interp(u[..., 0], 1)[..., None]
        h = 1e-2 * self.spacing
        cols = []
        for axis in range(self.m_u):
            e = np.zeros(self.m_u)
            e[axis] = h
            cols.append((self._interp(u + e) - self._interp(u - e)) / (2.0 * h))
        return np.stack(cols, axis=-1)

    def node_slopes(self) -> np.ndarray:
        """Centered finite-difference dg at the nodes, shape (N, D - m_u, m_u)."""
        if self.m_u == 1:
            slopes = [np.gradient(self.values, self.nodes, axis=0, edge_order=2)]
        else:
            slopes = [np.gradient(self.values, self.nodes, axis=a, edge_order=2) for a in range(2)]
        return np.stack(slopes, axis=-1).reshape(-1, self.values.shape[-1], self.m_u)

    def offset(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return self.chart.offset(u, self.g(u))

    def ambient(self, u: np.ndarray) -> np.ndarray:
        return self.chart.system.wrap(self.chart.point + self.offset(u))

    def tangent(self, u: np.ndarray) -> np.ndarray:
        """U + S dg(u), shape (..., D, m_u)."""
        return self.chart.unstable + np.einsum("dk,...km->...dm", self.chart.stable, self.dg(u))

    def lipschitz(self) -> float:
        """Finite-difference Lip(g): |S dg| over |U du| between neighbouring nodes."""
        space = self.chart.space
        worst = 0.0
        for axis in range(self.m_u):
            dv = np.diff(self.values, axis=axis).reshape(-1, self.values.shape[-1])
            du = np.zeros(self.m_u)
            du[axis] = self.spacing
            ratio = space.norm(dv @ self.chart.stable.T) / float(space.norm(du @ self.chart.unstable.T))
            worst = max(worst, float(ratio.max()))
        return worst

    def sup_norm(self) -> float:
        return float(self.chart.space.norm(self.node_values() @ self.chart.stable.T).max())

    def sup_distance(self, other: "LeafGraph", refine: int = 1) -> float:
        """Uniform distance max_u |S (g(u) - g'(u))| between two graphs on the same grid.

        With ``refine > 1`` both interpolants are compared on a grid ``refine`` times finer.
        """
        if other.chart is not self.chart and other.chart.index != self.chart.index:
            raise InputError("sup_distance needs two graphs in the same chart")
        if refine < 1:
            raise InputError(f"refine must be at least 1, got {refine}")
        if refine == 1:
            diff = (self.values - other.values).reshape(-1, self.values.shape[-1])
        else:
            fine = np.linspace(-self.radius, self.radius, refine * (self.nodes.size - 1) + 1)
            if self.m_u == 1:
                u = fine[:, None]
            else:
                u = np.stack(np.meshgrid(fine, fine, indexing="ij"), axis=-1).reshape(-1, 2)
            diff = self.g(u) - other.g(u)
        return float(self.chart.space.norm(diff @ self.chart.stable.T).max())

    def with_values(self, values: np.ndarray) -> "LeafGraph":
        return LeafGraph(self.chart, self.nodes, values)

    def levels(self) -> Tuple["LeafGraph", ...]:
        """(this leaf, leaf at x_{i-1}, leaf at x_{i-2}, ...)."""
        return (self,) + self.lineage


def _chart_u_map(leaf: LeafGraph, target: ChartFrame, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return target.coordinates(chart_image(leaf.chart, target, leaf.offset(u)))


def _chart_u_derivative(leaf: LeafGraph, target: ChartFrame, u: np.ndarray) -> np.ndarray:
    """d(u-component of the image)/du along the graph, shape (..., m_u, m_u)."""
    points = leaf.chart.point + leaf.offset(u)
    images = leaf.chart.system.jacobian(points) @ leaf.tangent(u)
    a, _ = target.coordinates(np.swapaxes(images, -1, -2))
    return np.swapaxes(a, -1, -2)


def _invert_1d(leaf: LeafGraph, target: ChartFrame, t: np.ndarray) -> np.ndarray:
    nodes = leaf.nodes
    img = _chart_u_map(leaf, target, nodes[:, None])[0][:, 0]
    steps = np.diff(img)
    if not (np.all(steps > 0) or np.all(steps < 0)):
        raise CoverageError(
            f"u-component of the image of the leaf at x_{leaf.chart.index} is not monotone; "
            "the chart is too large"
        )
    sign = 1.0 if steps[0] > 0 else -1.0
    ordered = sign * img
    goal = sign * t
    if goal.min() < ordered[0] or goal.max() > ordered[-1]:
        raise CoverageError(
            f"image of the leaf at x_{leaf.chart.index} covers [{ordered[0]:.4g}, {ordered[-1]:.4g}] "
            f"but [{goal.min():.4g}, {goal.max():.4g}] is needed; shrink the chart radius"
        )
    k = np.clip(np.searchsorted(ordered, goal), 1, nodes.size - 1)
    lo = nodes[k - 1].copy()
    hi = nodes[k].copy()
    weight = (goal - ordered[k - 1]) / (ordered[k] - ordered[k - 1])
    u = lo + weight * (hi - lo)
    scale = max(1.0, float(np.abs(t).max()))
    phi = np.full_like(u, np.inf)
    for _ in range(NEWTON_MAX_ITER):
        phi = sign * (_chart_u_map(leaf, target, u[:, None])[0][:, 0] - t)
        done = np.abs(phi) <= NEWTON_TOL * scale
        if np.all(done):
            return u
        lo = np.where(phi < 0, u, lo)
        hi = np.where(phi > 0, u, hi)
        slope = sign * _chart_u_derivative(leaf, target, u[:, None])[:, 0, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = u - phi / slope
        inside = np.isfinite(newton) & (newton > lo) & (newton < hi)
        u = np.where(done, u, np.where(inside, newton, 0.5 * (lo + hi)))
    bad = int(np.flatnonzero(np.abs(phi) > NEWTON_TOL * scale)[0])
    raise RootFindingError(
        f"safeguarded Newton did not converge at node {bad} (residual {abs(phi[bad]):.3e})", node_index=bad
    )


def _invert_2d(leaf: LeafGraph, target: ChartFrame, t: np.ndarray) -> np.ndarray:
    src = leaf.grid_points()
    img = _chart_u_map(leaf, target, src)[0]
    tri = Delaunay(img)
    outside = np.flatnonzero(tri.find_simplex(t) < 0)
    if outside.size:
        raise CoverageError(
            f"image of the leaf at x_{leaf.chart.index} misses {outside.size} target nodes; "
            "shrink the chart radius"
        )
    u = LinearNDInterpolator(tri, src)(t)
    r = leaf.radius
    scale = max(1.0, float(np.abs(t).max()))

    def residual(x: np.ndarray) -> np.ndarray:
        return np.abs(_chart_u_map(leaf, target, x)[0] - t).max(axis=-1)

    err = residual(u)
    for _ in range(NEWTON_MAX_ITER):
        done = err <= NEWTON_TOL * scale
        if np.all(done):
            return u
        phi = _chart_u_map(leaf, target, u)[0] - t
        step = np.linalg.solve(_chart_u_derivative(leaf, target, u), phi[..., None])[..., 0]
        alpha = np.ones(u.shape[0])
        for _ in range(12):
            trial = np.clip(u - alpha[:, None] * step, -r, r)
            trial_err = residual(trial)
            better = trial_err < err
            if np.all(better | done):
                break
            alpha = np.where(better, alpha, 0.5 * alpha)
        keep = done | ~better
        u = np.where(keep[:, None], u, trial)
        err = np.where(keep, err, trial_err)
    bad = int(np.flatnonzero(err > NEWTON_TOL * scale)[0])
    raise RootFindingError(f"damped Newton did not converge at node {bad} (residual {err[bad]:.3e})", node_index=bad)


def preimage_params(leaf: LeafGraph, target: ChartFrame, u: np.ndarray) -> np.ndarray:
    """Parameters on ``leaf`` whose images have unstable coordinates ``u`` in ``target``."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    if leaf.m_u == 1:
        return _invert_1d(leaf, target, u[:, 0])[:, None]
    return _invert_2d(leaf, target, u)


def graph_transform_step(leaf: LeafGraph, target: ChartFrame) -> LeafGraph:
    """One graph transform: the part of f(graph g) over the target grid, as a graph."""
    if target.m_u != leaf.m_u:
        raise InputError(f"target chart has m_u={target.m_u}, leaf has {leaf.m_u}")
    nodes = np.linspace(-target.radius, target.radius, leaf.nodes.size)
    grid = LeafGraph.flat(target, nodes.size).grid_points()
    pre = preimage_params(leaf, target, grid)
    _, s = _chart_u_map(leaf, target, pre)
    shape = (nodes.size,) * target.m_u + (s.shape[-1],)
    return LeafGraph(target, nodes, s.reshape(shape), preimage_params=pre)


def _contraction_rate(gaps: Sequence[float], floor: float) -> Optional[float]:
    g = np.asarray(gaps, dtype=float)
    steps = np.flatnonzero(g > floor)
    if steps.size < 3:
        return None
    fit = linregress(steps.astype(float), np.log(g[steps]))
    return math.exp(fit.slope)


def local_unstable_manifold(
    frames: OseledetsFrames,
    index: Optional[int] = None,
    radius: float = CHART_RADIUS,
    n_nodes: Optional[int] = None,
    tol: float = LEAF_TOL,
    depth: int = CHART_DEPTH,
    window: int = CHART_WINDOW,
    lineage_depth: int = 0,
) -> LeafGraph:
    """W^u at x_index from g = 0 pushed along the history.

    Two sweeps starting ``depth + lineage_depth`` and ``window`` more steps back are run
    in lockstep; their sup distance must shrink geometrically, and the depth doubles
    until the final distance is below ``tol``. The longer sweep keeps its last
    ``lineage_depth`` leaves as the lineage of the result.
    """
    index = frames.last if index is None else index
    frames.check_index(index)
    m_u = frames.m_u
    if m_u > MAX_LEAF_DIM:
        raise UnsupportedDimensionError(f"leaves are supported for m_u <= {MAX_LEAF_DIM}, got {m_u}")
    n_nodes = n_nodes or (LEAF_GRID_POINTS if m_u == 1 else GRID_POINTS_2D)
    if n_nodes < 5 or n_nodes % 2 == 0:
        raise InputError(f"n_nodes must be odd and at least 5 so that u = 0 is a node, got {n_nodes}")
    charts: Dict[int, ChartFrame] = {}

    def chart(i: int) -> ChartFrame:
        if i not in charts:
            charts[i] = chart_frame(frames, i, radius)
        return charts[i]

    available = index - frames.first
    floor = 1e3 * np.finfo(float).eps * radius
    d = depth
    last_gap = math.inf
    while True:
        total = d + lineage_depth
        if total + window > available:
            raise ConvergenceError(
                f"leaf at x_{index} not converged within {available} usable history steps "
                f"(last sweep gap {last_gap:.3e}); use a longer history",
                iterations=d,
            )
        start = index - total - window
        long_leaf = LeafGraph.flat(chart(start), n_nodes)
        for i in range(start, index - total):
            long_leaf = graph_transform_step(long_leaf, chart(i + 1))
        short_leaf = LeafGraph.flat(chart(index - total), n_nodes)
        gaps: List[float] = []
        kept: List[LeafGraph] = []
        for i in range(index - total, index):
            long_leaf = graph_transform_step(long_leaf, chart(i + 1))
            short_leaf = graph_transform_step(short_leaf, chart(i + 1))
            gaps.append(long_leaf.sup_distance(short_leaf))
            if index - (i + 1) <= lineage_depth:
                kept.append(long_leaf)
        rate = _contraction_rate(gaps, floor)
        if rate is not None and rate >= 1.0:
            raise HyperbolicityError(
                f"graph transforms at x_{index} are not contracting (fitted rate {rate:.4g})"
            )
        last_gap = gaps[-1]
        if last_gap < tol:
            break
        logger.info(f"Leaf at x_{index}: sweep gap {last_gap:.3e} at depth {d}, doubling")
        d *= 2

    leaf = replace(kept[-1], lineage=tuple(reversed(kept[:-1])), contraction=rate)
    lip = leaf.lipschitz()
    if lip > LEAF_LIPSCHITZ_MAX:
        raise HyperbolicityError(
            f"Lip g = {lip:.3g} exceeds {LEAF_LIPSCHITZ_MAX:g} at radius {radius:g}; use a smaller chart radius"
        )
    logger.info(
        f"Leaf at x_{index} converged at depth {d} (gap {last_gap:.2e}, Lip g {lip:.2e}, "
        f"lineage {len(leaf.lineage)})"
    )
    return leaf


def leaf_invariance_residual(leaf: LeafGraph) -> float:
    """max over nodes of |f(preimage on the previous leaf) - node point|."""
    if not leaf.lineage or leaf.preimage_params is None:
        raise InputError("leaf has no lineage; compute it with lineage_depth >= 1")
    system = leaf.chart.system
    images = system.map(leaf.lineage[0].ambient(leaf.preimage_params))
    points = leaf.ambient(leaf.grid_points())
    return float(system.space.norm(system.displacement(points, images)).max())


def _region_box(leaf: LeafGraph, region: Optional[np.ndarray]) -> np.ndarray:
    r = leaf.radius
    box = np.array([[-r, r]] * leaf.m_u) if region is None else np.asarray(region, dtype=float).reshape(leaf.m_u, 2)
    if np.any(box[:, 0] > box[:, 1]) or np.any(box < -r * (1 + 1e-12)) or np.any(box > r * (1 + 1e-12)):
        raise InputError(f"u_region {box.tolist()} is not inside the grid [-{r:g}, {r:g}]")
    return np.clip(box, -r, r)


def _gauss_cells(edges: np.ndarray, order: int) -> Tuple[np.ndarray, np.ndarray]:
    x, w = leggauss(order)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    return (mid[:, None] + half[:, None] * x).ravel(), (half[:, None] * w).ravel()


def _length_density(leaf: LeafGraph, u: np.ndarray, slopes: Optional[np.ndarray] = None) -> np.ndarray:
    if slopes is None:
        t = leaf.tangent(u[:, None])[..., 0]
    else:
        t = leaf.chart.unstable[:, 0] + slopes @ leaf.chart.stable.T
    return leaf.chart.space.norm(t)


def leaf_volume(
    leaf: LeafGraph,
    region: Optional[np.ndarray] = None,
    weight: Optional[WeightFn] = None,
    seed: int = 0,
    target_rel_err: float = TARGET_REL_ERR,
) -> VolumeEstimate:
    """nu(phi(region)) for phi(u) = x + U u + S g(u), optionally integrating ``weight``.

    m_u = 1 uses Gauss-Legendre on every grid cell; the error combines the change from
    a rule of two more points with the change from replacing the spline slope by
    finite-difference slopes. m_u = 2 uses a tensor rule whose node densities are
    Monte Carlo parallelepiped volumes.
    """
    box = _region_box(leaf, region)
    w_fn = weight if weight is not None else (lambda u: np.ones(u.shape[:-1]))
    if leaf.m_u == 1:
        a, b = box[0]
        if a == b:
            return VolumeEstimate(0.0, 0.0, 0, "quadrature")
        inner = leaf.nodes[(leaf.nodes > a) & (leaf.nodes < b)]
        edges = np.concatenate([[a], inner, [b]])
        u, w = _gauss_cells(edges, QUADRATURE_ORDER)
        u2, w2 = _gauss_cells(edges, QUADRATURE_ORDER + 2)
        value = float(np.sum(w * _length_density(leaf, u) * w_fn(u[:, None])))
        finer = float(np.sum(w2 * _length_density(leaf, u2) * w_fn(u2[:, None])))
        node_slopes = leaf.node_slopes()[:, :, 0]
        linear = np.stack([np.interp(u, leaf.nodes, node_slopes[:, j]) for j in range(node_slopes.shape[1])], axis=-1)
        rough = float(np.sum(w * _length_density(leaf, u, linear) * w_fn(u[:, None])))
        return VolumeEstimate(value, abs(value - finer) + abs(value - rough), u.size, "quadrature")

    x, wq = leggauss(QUADRATURE_ORDER)
    mid = box.mean(axis=1)
    half = 0.5 * (box[:, 1] - box[:, 0])
    ua, ub = np.meshgrid(mid[0] + half[0] * x, mid[1] + half[1] * x, indexing="ij")
    u = np.stack([ua.ravel(), ub.ravel()], axis=-1)
    weights = np.outer(half[0] * wq, half[1] * wq).ravel() * w_fn(u)
    tangents = leaf.tangent(u)
    space = leaf.chart.space
    if np.ptp(tangents, axis=0).max() <= 1e-14:
        one = induced_volume_parallelepiped(Frame(space, tangents[0]), seed, target_rel_err)
        total = float(weights.sum())
        return VolumeEstimate(one.value * total, one.std_error * abs(total), one.n_samples, "quadrature", one.target_met)
    seeds = spawn_seeds(seed, u.shape[0])
    estimates = [induced_volume_parallelepiped(Frame(space, t), s, target_rel_err) for t, s in zip(tangents, seeds)]
    values = np.array([e.value for e in estimates])
    errors = np.array([e.std_error for e in estimates])
    return VolumeEstimate(
        float(np.sum(weights * values)),
        float(np.sqrt(np.sum((weights * errors) ** 2))),
        int(sum(e.n_samples for e in estimates)),
        "quadrature",
        all(e.target_met for e in estimates),
    )


def log_unstable_jacobians(
    leaf: LeafGraph, u: np.ndarray, seed: int = 0, target_rel_err: float = TARGET_REL_ERR
) -> np.ndarray:
    """log J^u = log det(df | tangent space of the leaf) at the leaf points over u."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    system = leaf.chart.system
    tangents = leaf.tangent(u)
    jac = system.jacobian(leaf.chart.point + leaf.offset(u))
    images = jac @ tangents
    space = system.space
    if leaf.m_u == 1:
        return np.log(space.norm(images[..., 0])) - np.log(space.norm(tangents[..., 0]))
    # one seed for every node so the Monte Carlo noise is shared by the ratios
    return np.array([det_restricted(j, Frame(space, t), seed, target_rel_err).log_value for j, t in zip(jac, tangents)])


@dataclass(frozen=True)
class DistortionTable:
    leaf: LeafGraph
    reference: int  # flat node index of x'
    log_partial: np.ndarray  # (N+1, P): log Delta_k(x', y) for k = 0..N
    log_ju: np.ndarray  # (N+1, P): log J^u at f^{-k} y
    params: Tuple[np.ndarray, ...]  # unstable parameter of f^{-k} y on the k-th lineage leaf
    increments: np.ndarray  # (N,): max_y |log Delta_k - log Delta_{k-1}|
    rho: float
    r_squared: float
    fit_depth: int  # leading increments above the round-off floor used by the fit
    tail_bound: float
    lipschitz: float
    exact: bool

    @property
    def depth(self) -> int:
        return int(self.increments.size)

    @property
    def log_delta(self) -> np.ndarray:
        return self.log_partial[-1]

    def records(self) -> List[Dict[str, float]]:
        return [
            {"k": k + 1, "max_increment": float(v)} for k, v in enumerate(self.increments)
        ]


def _distortion_sweep(
    levels: Sequence[LeafGraph],
    u0: np.ndarray,
    reference: int,
    n_max: int,
    tol: float,
    seed: int,
    target_rel_err: float,
) -> Tuple[np.ndarray, np.ndarray, List[np.ndarray]]:
    u = u0
    params = [u0]
    log_ju = [log_unstable_jacobians(levels[0], u0, seed, target_rel_err)]
    partial = [np.zeros(u0.shape[0])]
    for k in range(1, min(n_max, len(levels) - 1) + 1):
        u = preimage_params(levels[k], levels[k - 1].chart, u)
        lj = log_unstable_jacobians(levels[k], u, seed, target_rel_err)
        increment = lj[reference] - lj
        params.append(u)
        log_ju.append(lj)
        partial.append(partial[-1] + increment)
        if np.abs(increment).max() < tol:
            break
    return np.array(partial), np.array(log_ju), params


def _geometric_fit(increments: np.ndarray, tol: float, floor: float) -> Tuple[float, float, bool, int]:
    """(rho, R^2, exact, fit depth) of log increments against depth.

    The line is fitted over the leading increments; the first one below max(tol, floor)
    ends the fit.
    """
    below = np.flatnonzero(increments < max(tol, floor))
    n_fit = int(below[0]) if below.size else int(increments.size)
    if n_fit < 3:
        return 0.0, 1.0, bool(np.all(increments < tol)), n_fit
    fit = linregress(np.arange(1, n_fit + 1, dtype=float), np.log(increments[:n_fit]))
    return math.exp(fit.slope), float(fit.rvalue**2), False, n_fit


def _pair_lipschitz(space: NormedSpace, offsets: np.ndarray, values: np.ndarray) -> float:
    diff = offsets[:, None, :] - offsets[None, :, :]
    dist = space.norm(diff)
    gaps = np.abs(values[:, None] - values[None, :])
    mask = dist > 0
    return float(np.max(gaps[mask] / dist[mask])) if np.any(mask) else 0.0


def distortion_table(
    leaf: LeafGraph,
    n_max: int = DISTORTION_MAX_DEPTH,
    tol: float = DISTORTION_TOL,
    seed: int = 0,
    target_rel_err: float = TARGET_REL_ERR,
) -> DistortionTable:
    """log Delta_N(x', y) = sum_{k<=N} log J^u(f^-k x') - log J^u(f^-k y) for every node y.

    x' is the node u = 0. Preimages come from the leaf lineage; the sweep stops once an
    increment is below ``tol`` at every node or the lineage is exhausted.
    """
    if not leaf.lineage:
        raise InputError("distortion needs a leaf with lineage; compute it with lineage_depth >= 1")
    levels = leaf.levels()
    if len(levels) - 1 < n_max:
        logger.warning(f"Lineage of {len(levels) - 1} leaves is shorter than n_max={n_max}")
    reference = leaf.reference
    partial, log_ju, params = _distortion_sweep(
        levels, leaf.grid_points(), reference, n_max, tol, seed, target_rel_err
    )
    increments = np.abs(np.diff(partial, axis=0)).max(axis=1)
    floor = DISTORTION_FLOOR_ULPS * np.finfo(float).eps * float(np.abs(log_ju).max())
    rho, r2, exact, fit_depth = _geometric_fit(increments, tol, floor)
    if not exact and rho >= 1.0:
        raise DistortionError(f"distortion increments do not decay geometrically (fitted rho {rho:.4g})")
    last = float(increments[-1]) if increments.size else 0.0
    tail = 0.0 if exact else last * rho / (1.0 - rho)
    if increments.size and last >= tol:
        logger.warning(f"Distortion sweep stopped at depth {increments.size} with increment {last:.3e}")
    lip = _pair_lipschitz(leaf.chart.space, leaf.offset(leaf.grid_points()), partial[-1])
    logger.info(
        f"Distortion over depth {increments.size}: rho {rho:.4g}, R^2 {r2:.4f} over {fit_depth} increments, "
        f"Lip {lip:.4g}"
    )
    return DistortionTable(
        leaf, reference, partial, log_ju, tuple(params), increments, rho, r2, fit_depth, tail, lip, exact
    )


def distortion_multiplicativity(table: DistortionTable, split: int) -> float:
    """max_y |log Delta_{M+N}(x', y) - log Delta_M(x', y) - log Delta_N(f^-M x', f^-M y)|."""
    if not 0 < split < table.depth:
        raise InputError(f"split must lie in (0, {table.depth}), got {split}")
    levels = table.leaf.levels()[split:]
    later, _, _ = _distortion_sweep(
        levels, table.params[split], table.reference, table.depth - split, 0.0, 0, TARGET_REL_ERR
    )
    composed = table.log_partial[split] + later[-1]
    return float(np.abs(table.log_partial[-1] - composed).max())


def pushforward_density(leaf: LeafGraph, seed: int = 0) -> np.ndarray:
    """1/J^u(f^-1 y) at every node y: the density of f_* nu against nu on this leaf."""
    if not leaf.lineage or leaf.preimage_params is None:
        raise InputError("pushforward density needs the previous leaf in the lineage")
    return np.exp(-log_unstable_jacobians(leaf.lineage[0], leaf.preimage_params, seed))


def _leaf_pairs(leaf: LeafGraph, strides: Sequence[int]) -> List[Tuple[int, int]]:
    n = leaf.grid_points().shape[0]
    return [(a, a + s) for s in strides for a in range(0, n - s, max(1, s // 2))]


def expansion_report(
    frames: OseledetsFrames, leaf: LeafGraph, params: AdaptedNormParams, strides: Sequence[int] = (1, 4, 16)
) -> Report:
    """|f(z1) - f(z2)|' >= (e^lambda - delta0)|z1 - z2|' for pairs on the previous leaf
    whose images are nodes of this one."""
    if not leaf.lineage or leaf.preimage_params is None:
        raise InputError("expansion check needs the previous leaf in the lineage")
    prev = leaf.lineage[0]
    i = leaf.chart.index
    frames.check_index(i - 1)
    pairs = _leaf_pairs(leaf, strides)
    a = np.array([p for p, _ in pairs])
    b = np.array([q for _, q in pairs])
    offsets = prev.offset(leaf.preimage_params)
    images = chart_image(prev.chart, leaf.chart, offsets)
    before, before_tail = adapted_norms(frames, i - 1, offsets[a] - offsets[b], params)
    after, after_tail = adapted_norms(frames, i, images[a] - images[b], params)
    factor = math.exp(params.lam) - params.delta0
    report = Report("expansion", metadata={"kind": leaf.chart.system.kind, "index": i, "factor": factor})
    for n, (p, q) in enumerate(pairs):
        report.add(
            "leaf_expansion", f"x{i}:{p}-{q}", factor * before[n], after[n],
            slack=factor * before_tail[n] + after_tail[n] + 1e-12 * after[n],
        )
    return report


def _random_graph_values(leaf: LeafGraph, rng: np.random.Generator, amplitude: float) -> np.ndarray:
    u = leaf.grid_points() / leaf.radius
    width = leaf.values.shape[-1]
    terms = [np.ones(u.shape[0])] + [u[:, a] ** p for a in range(leaf.m_u) for p in (1, 2, 3)]
    basis = np.stack(terms, axis=-1)
    coeffs = rng.uniform(-1.0, 1.0, (basis.shape[1], width)) / basis.shape[1]
    values = basis @ coeffs
    scale = amplitude * leaf.radius / max(float(leaf.chart.space.norm(values @ leaf.chart.stable.T).max()), 1e-300)
    return (values * scale).reshape(leaf.values.shape)


def graph_contraction_report(
    source: ChartFrame,
    target: ChartFrame,
    n_nodes: int = LEAF_GRID_POINTS,
    n_pairs: int = CONTRACTION_PAIRS,
    seed: int = 0,
) -> Report:
    """Measured c = |Psi g1 - Psi g2|_sup / |g1 - g2|_sup over random graph pairs.

    Psi reads g1 and g2 through their interpolants at the preimages of the nodes, so the
    denominator is taken over the interpolants on a refined grid.
    """
    if source.m_u == 2 and n_nodes == LEAF_GRID_POINTS:
        n_nodes = GRID_POINTS_2D
    rng = np.random.default_rng(seed)
    base = LeafGraph.flat(source, n_nodes)
    report = Report(
        "graph_contraction",
        metadata={"kind": source.system.kind, "index": source.index, "seed": seed, "pairs": n_pairs},
    )
    factors = []
    for n in range(n_pairs):
        g1 = base.with_values(_random_graph_values(base, rng, 0.02))
        g2 = base.with_values(_random_graph_values(base, rng, 0.02))
        before = g1.sup_distance(g2, refine=CONTRACTION_REFINE)
        after = graph_transform_step(g1, target).sup_distance(graph_transform_step(g2, target))
        c = after / before
        factors.append(c)
        report.add("graph_transform_contraction", f"pair{n}", c, 1.0, note=f"sup distance {before:.3e}")
    report.values["max_contraction"] = float(max(factors))
    return report


def chart_validation_report(
    frames: OseledetsFrames,
    index: int,
    params: AdaptedNormParams,
    radius: float = CHART_RADIUS,
    l_tilde: Optional[float] = None,
    n_pairs: int = 64,
    seed: int = 0,
) -> Report:
    """Lip(f~ - df) <= delta0 and Lip(df~) <= l~(x) on random pairs in the chart ball."""
    source = chart_frame(frames, index, radius)
    target = chart_frame(frames, index + 1, radius)
    system = source.system
    space = system.space
    rng = np.random.default_rng(seed)
    d = system.dim
    coeffs = rng.uniform(-radius, radius, (2, n_pairs, d))
    z = coeffs[..., : source.m_u] @ source.unstable.T + coeffs[..., source.m_u :] @ source.stable.T
    jac0 = system.jacobian(source.point)
    nonlinear = chart_image(source, target, z) - z @ jac0.T
    dist = space.norm(z[0] - z[1])
    lip = space.norm(nonlinear[0] - nonlinear[1]) / dist
    report = Report(
        "chart_validation",
        metadata={"kind": system.kind, "index": index, "radius": radius, "delta0": params.delta0, "seed": seed},
    )
    for n in range(n_pairs):
        report.add("chart.nonlinearity", f"x{index}:{n}", lip[n], params.delta0)
    jacs = system.jacobian(source.point + z)
    for n in range(n_pairs):
        spread = operator_norm(jacs[0, n] - jacs[1, n], space) / dist[n]
        if l_tilde is None:
            report.add("chart.derivative_lipschitz", f"x{index}:{n}", spread, math.nan, vacuous=True, note="no l~")
        else:
            report.add("chart.derivative_lipschitz", f"x{index}:{n}", spread, l_tilde)
    report.values.update({"max_nonlinearity": float(lip.max()), "radius": radius})
    return report


def change_of_variables_report(
    leaf: LeafGraph, n_regions: int = 50, seed: int = 0, target_rel_err: float = TARGET_REL_ERR
) -> Report:
    """nu(f(R)) = int_R J^u dnu on random regions R of the previous leaf (m_u = 1)."""
    if leaf.m_u != 1:
        raise UnsupportedDimensionError("the change-of-variables battery draws intervals, m_u = 1 only")
    if not leaf.lineage or leaf.preimage_params is None:
        raise InputError("change of variables needs the previous leaf in the lineage")
    prev = leaf.lineage[0]
    lo, hi = float(leaf.preimage_params.min()), float(leaf.preimage_params.max())
    rng = np.random.default_rng(seed)
    report = Report("change_of_variables", metadata={"kind": leaf.chart.system.kind, "seed": seed, "regions": n_regions})

    def jacobian_weight(u: np.ndarray) -> np.ndarray:
        return np.exp(log_unstable_jacobians(prev, u))

    for n in range(n_regions):
        a, b = np.sort(rng.uniform(lo, hi, 2))
        ends = _chart_u_map(prev, leaf.chart, np.array([[a], [b]]))[0][:, 0]
        image_region = np.clip(np.sort(ends), -leaf.radius, leaf.radius)
        image = leaf_volume(leaf, image_region[None, :], seed=seed, target_rel_err=target_rel_err)
        pulled = leaf_volume(prev, np.array([[a, b]]), weight=jacobian_weight, seed=seed, target_rel_err=target_rel_err)
        sigma = math.hypot(image.std_error, pulled.std_error)
        report.add(
            "change_of_variables", f"R{n}", abs(image.value - pulled.value), 3.0 * sigma,
            slack=1e-12 * image.value, note=f"nu(f R)={image.value:.10g}",
        )
    return report


def backward_shooting_report(
    frames: OseledetsFrames,
    leaf: LeafGraph,
    depth: int = SHOOTING_DEPTH,
    n_points: int = 9,
    tol: float = SHOOTING_TOL,
) -> Report:
    """Graph values against points found by shooting from depth n (m_u = 1).

    For each target u a bisection over the unstable coordinate a of x_{-n} + U a
    finds the point whose n-th image has unstable coordinate u; its stable coordinate
    must reproduce g(u) and its orbit must stay in the charts.
    """
    if leaf.m_u != 1:
        raise UnsupportedDimensionError("backward shooting bisects a single unstable coordinate, m_u = 1 only")
    index = leaf.chart.index
    frames.check_index(index - depth)
    charts = [chart_frame(frames, index - depth + k, leaf.radius) for k in range(depth)] + [leaf.chart]
    space = leaf.chart.space
    r = leaf.radius

    def shoot(a: float) -> Tuple[np.ndarray, float]:
        v = charts[0].unstable[:, 0] * a
        worst = 0.0
        for k in range(depth):
            v = chart_image(charts[k], charts[k + 1], v)
            ua, _ = charts[k + 1].coordinates(v)
            worst = max(worst, float(np.abs(ua).max()))
        return v, worst

    report = Report(
        "backward_shooting", metadata={"kind": leaf.chart.system.kind, "index": index, "depth": depth}
    )
    for t in np.linspace(-0.5 * r, 0.5 * r, n_points):

        def miss(a: float, t: float = t) -> float:
            return float(leaf.chart.coordinates(shoot(a)[0])[0][0] - t)

        if miss(-r) * miss(r) > 0:
            raise CoverageError(f"shooting from depth {depth} does not bracket u={t:.4g}")
        a = bisect(miss, -r, r, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=400)
        v, worst = shoot(a)
        _, s = leaf.chart.coordinates(v)
        error = float(space.norm((s - leaf.g(np.array([t]))) @ leaf.chart.stable.T))
        report.add("backward_shooting", f"u={t:.6g}", error, tol, note=f"max chart coordinate {worst:.3g}")
        report.add("backward_shooting.bounded", f"u={t:.6g}", worst, r)
    return report


def leaf_records(
    leaf: LeafGraph,
    table: Optional[DistortionTable] = None,
    q: Optional[np.ndarray] = None,
) -> List[Dict[str, float]]:
    """One row per node: u, ambient point, g, J^u, log Delta and q when available."""
    u = leaf.grid_points()
    points = leaf.ambient(u)
    g = leaf.node_values()
    ju = np.exp(table.log_ju[0]) if table is not None else np.exp(log_unstable_jacobians(leaf, u))
    rows = []
    for n in range(u.shape[0]):
        row: Dict[str, float] = {f"u{a}": float(u[n, a]) for a in range(leaf.m_u)}
        row.update({f"x{j}": float(points[n, j]) for j in range(points.shape[1])})
        row.update({f"g{j}": float(g[n, j]) for j in range(g.shape[1])})
        row["J_u"] = float(ju[n])
        if table is not None:
            row["log_delta"] = float(table.log_delta[n])
        if q is not None:
            row["q"] = float(q[n])
        rows.append(row)
    return rows


def plot_leaf(path: str, leaf: LeafGraph, max_components: int = 3) -> str:
    """SVG of the first stable components of g against u (m_u = 1)."""
    if leaf.m_u != 1:
        raise UnsupportedDimensionError("leaf plots are drawn for m_u = 1")
    g = leaf.node_values()
    series = [(f"g{j}", leaf.nodes, g[:, j]) for j in range(min(max_components, g.shape[1]))]
    return plot_series(path, series, f"leaf at x_{leaf.chart.index}", "u", "g(u)")


def series_margin(frames: OseledetsFrames, params: AdaptedNormParams) -> int:
    """Steps kept after a leaf index for the stable series, capped at half the converged range."""
    return min(params.max_terms, (frames.last - frames.first) // 2)


@dataclass(frozen=True)
class LeafRun:
    """An orbit, its Oseledets frames and a converged leaf with lineage."""

    history: OrbitHistory
    frames: OseledetsFrames
    leaf: LeafGraph
    params: AdaptedNormParams


def leaf_run(
    system: SmoothSystem,
    n_steps: int = LEAF_HISTORY_STEPS,
    seed: int = 0,
    radius: float = CHART_RADIUS,
    n_nodes: Optional[int] = None,
    lineage_depth: int = DISTORTION_MAX_DEPTH,
    burn_in: int = BURN_IN,
) -> LeafRun:
    """Burn in, record ``n_steps`` of orbit, build frames and the leaf at the last index that
    leaves room for the forward adapted-norm series before the end of the converged range.

    m_u and the adapted-norm constants come from the system's known exponents.
    """
    exponents = system.known_answers.exponents
    if exponents is None:
        raise InputError(f"{system.kind} has no known exponents to fix m_u")
    params = AdaptedNormParams.from_exponents(exponents)
    history = orbit(system, iterate(system, system.initial_point, burn_in), n_steps)
    frames = oseledets_frames(history, params.m_u, seed)
    index = frames.last - series_margin(frames, params)
    leaf = local_unstable_manifold(frames, index=index, radius=radius, n_nodes=n_nodes, lineage_depth=lineage_depth)
    return LeafRun(history, frames, leaf, params)
