"""Gap metrics, angles, parallel projections and complements of subspaces."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple, Union

import numpy as np
from scipy.linalg import null_space
from scipy.spatial import HalfspaceIntersection

from .config import GEOMETRY_GRID_POINTS, RANK_TOL, SEARCH_TOL, SPHERE_GRID_POINTS
from .errors import SplittingError, UnsupportedDimensionError
from .report import Report
from .search import sphere_search
from .space import Frame, InnerProductModel, LinearMap, NormedSpace, as_matrix, john_model

logger = logging.getLogger(__name__)

MAX_SEARCH_DIM = 3
MAX_AMBIENT_SEARCH_DIM = 4


@dataclass(frozen=True)
class Splitting:
    """A direct sum E + F with the norm of the projection onto E along F."""

    e: Frame
    f: Frame
    proj_norm: float
    angle: float
    reverse_angle: Optional[float] = None
    complement_quality: Optional[float] = None

    @property
    def symmetric_ok(self) -> Optional[bool]:
        """alpha(E,F) <= 2 alpha(F,E), with search slack."""
        if self.reverse_angle is None:
            return None
        return self.angle <= 2.0 * self.reverse_angle * (1.0 + SEARCH_TOL)

    def coefficients(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Frame coefficients (a, b) with x = E a + F b, for x of shape (..., D)."""
        w = np.hstack([self.e.basis, self.f.basis])
        coeffs, *_ = np.linalg.lstsq(w, np.asarray(x, dtype=float).reshape(-1, w.shape[0]).T, rcond=None)
        coeffs = coeffs.T.reshape(np.shape(x)[:-1] + (w.shape[1],))
        return coeffs[..., : self.e.k], coeffs[..., self.e.k :]

    def project(self, x: np.ndarray) -> np.ndarray:
        """pi_{E+F} x, the E-component of x."""
        a, _ = self.coefficients(x)
        return self.e.vectors(a)


def _unit_vectors(frame: Frame, coeffs: np.ndarray) -> np.ndarray:
    v = frame.vectors(coeffs)
    return v / frame.space.norm(v)[..., None]


def _require_searchable(*frames: Frame) -> None:
    for frame in frames:
        if frame.k > MAX_SEARCH_DIM:
            raise UnsupportedDimensionError(
                f"sphere searches support subspaces of dimension <= {MAX_SEARCH_DIM}, got {frame.k}"
            )


def direct_sum_margin(e: Frame, f: Frame) -> float:
    """Smallest singular value of the column-normalized stacked basis [E F]."""
    w = np.hstack([e.normalized().basis, f.normalized().basis])
    if w.shape[1] > w.shape[0]:
        return 0.0
    s = np.linalg.svd(w, compute_uv=False)
    return float(s[-1] / s[0])


def _check_direct_sum(e: Frame, f: Frame, require_ambient: bool) -> None:
    if e.space is not f.space and e.space.dim != f.space.dim:
        raise SplittingError("frames live in different spaces")
    total = e.k + f.k
    if require_ambient and total != e.dim:
        raise SplittingError(f"dim E + dim F = {total} but the ambient dimension is {e.dim}")
    if direct_sum_margin(e, f) <= RANK_TOL:
        raise SplittingError("E and F intersect nontrivially")


def sup_distance(src: Frame, target: Frame, n_grid: int = GEOMETRY_GRID_POINTS) -> float:
    """sup over unit e in src of dist(e, target)."""
    space = src.space

    def distance(c: np.ndarray) -> np.ndarray:
        x = _unit_vectors(src, c)
        flat = x.reshape(-1, space.dim)
        return space.distance_to_span(flat, target.basis).reshape(c.shape[:-1])

    return float(sphere_search(distance, src.k, n_grid=n_grid).value[0])


def _distance_to_unit_sphere(points: np.ndarray, target: Frame, n_grid: int) -> np.ndarray:
    space = target.space
    if target.k == 1:
        u = target.normalized().basis[:, 0]
        return np.minimum(space.norm(points - u), space.norm(points + u))

    def gap(c: np.ndarray) -> np.ndarray:
        return space.norm(points[:, None, :] - _unit_vectors(target, c))

    found = sphere_search(gap, target.k, batch=points.shape[0], maximize=False, n_grid=n_grid)
    return found.value


def _sphere_hausdorff_one_way(src: Frame, target: Frame, n_grid: int) -> float:
    def distance(c: np.ndarray) -> np.ndarray:
        x = _unit_vectors(src, c).reshape(-1, src.dim)
        return _distance_to_unit_sphere(x, target, n_grid).reshape(c.shape[:-1])

    return float(sphere_search(distance, src.k, n_grid=n_grid).value[0])


def gap_distances(
    e: Frame, e2: Frame, n_grid: int = GEOMETRY_GRID_POINTS
) -> Tuple[float, float]:
    """(delta_a, d_H): aperture and Hausdorff distance of the unit spheres."""
    if e.k == e2.k:
        s = np.linalg.svd(np.hstack([e.normalized().basis, e2.normalized().basis]), compute_uv=False)
        if int(np.count_nonzero(s > 1e-14 * s[0])) == e.k:
            return 0.0, 0.0
    _require_searchable(e, e2)
    delta_a = max(sup_distance(e, e2, n_grid), sup_distance(e2, e, n_grid))
    d_h = max(
        _sphere_hausdorff_one_way(e, e2, n_grid), _sphere_hausdorff_one_way(e2, e, n_grid)
    )
    return delta_a, d_h


def _hyperplane_functional(e: Frame, f: Frame) -> np.ndarray:
    # ell with ell(e) = 1 and ell(F) = 0
    w = np.hstack([e.basis, f.basis])
    return np.linalg.inv(w)[0]


def angle(e: Frame, f: Frame, n_grid: int = GEOMETRY_GRID_POINTS) -> float:
    """alpha(E,F) = inf{|e - f| : e in E, |e| = 1, f in F}."""
    if e.k == 1 and e.k + f.k == e.dim:
        length = float(e.column_norms()[0])
        return 1.0 / (length * float(e.space.dual_norm(_hyperplane_functional(e, f))))
    _require_searchable(e)
    space = e.space

    def distance(c: np.ndarray) -> np.ndarray:
        x = _unit_vectors(e, c).reshape(-1, space.dim)
        return space.distance_to_span(x, f.basis).reshape(c.shape[:-1])

    return float(sphere_search(distance, e.k, maximize=False, n_grid=n_grid).value[0])


def projection_norm(e: Frame, f: Frame, n_grid: int = SPHERE_GRID_POINTS) -> float:
    """|pi_{E+F}| on E + F, measured in the ambient norm."""
    if e.k == 1 and e.k + f.k == e.dim:
        length = float(e.column_norms()[0])
        return length * float(e.space.dual_norm(_hyperplane_functional(e, f)))
    total = e.k + f.k
    w = np.hstack([e.basis, f.basis])
    if total == e.dim:
        projector = e.basis @ np.linalg.inv(w)[: e.k]
        return operator_norm(projector, e.space)
    if total > MAX_AMBIENT_SEARCH_DIM:
        return 1.0 / angle(e, f)
    space = e.space

    def ratio(c: np.ndarray) -> np.ndarray:
        return space.norm(c[..., : e.k] @ e.basis.T) / space.norm(c @ w.T)

    return float(sphere_search(ratio, total, n_grid=n_grid).value[0])


def projection_and_angle(
    e: Frame,
    f: Frame,
    require_ambient: bool = True,
    both_ways: bool = True,
) -> Splitting:
    _check_direct_sum(e, f, require_ambient)
    alpha = angle(e, f)
    reverse = angle(f, e) if both_ways and f.k <= MAX_SEARCH_DIM else None
    split = Splitting(e, f, projection_norm(e, f), alpha, reverse)
    if split.symmetric_ok is False:
        logger.warning(f"alpha(E,F)={alpha:.6g} exceeds 2*alpha(F,E)={2 * reverse:.6g}")  # type: ignore[operator]
    return split


@lru_cache(maxsize=16)
def ambient_model(space: NormedSpace) -> InnerProductModel:
    """John inner product of the whole unit ball of the ambient space."""
    return john_model(Frame(space, np.eye(space.dim)))


def complement(e: Frame) -> Splitting:
    """Orthogonal complement of E for the ambient John inner product."""
    if e.k >= e.dim:
        raise SplittingError(f"E already spans R^{e.dim}, no complement to build")
    gram = ambient_model(e.space).gram
    f = Frame(e.space, null_space((gram @ e.basis).T))
    split = projection_and_angle(e, f)
    floor = 1.0 / math.sqrt(e.k)
    quality = split.angle * math.sqrt(e.k)
    if split.angle < floor * (1.0 - SEARCH_TOL) / (1.0 + ambient_model(e.space).mvee_tol):
        logger.warning(f"Complement angle {split.angle:.6g} below 1/sqrt(k)={floor:.6g}")
    return Splitting(split.e, split.f, split.proj_norm, split.angle, split.reverse_angle, quality)


def restricted_projection_norm(
    onto: Frame, along: Frame, domain: Frame, n_grid: int = SPHERE_GRID_POINTS
) -> float:
    """sup over unit x in ``domain`` of |pi_{onto+along} x|."""
    split = Splitting(onto, along, math.nan, math.nan)
    space = onto.space

    def image(c: np.ndarray) -> np.ndarray:
        x = _unit_vectors(domain, c)
        return space.norm(split.project(x))

    return float(sphere_search(image, domain.k, n_grid=n_grid).value[0])


def check_perturbed_splitting(
    e: Frame,
    e2: Frame,
    f: Frame,
    case: str = "",
    n_samples: int = 64,
    seed: int = 0,
    report: Optional[Report] = None,
) -> Report:
    """Rows for the persistence of a complement F when E is replaced by a nearby E2."""
    report = report or Report("perturbed_splitting")
    k = e.k
    root_k = math.sqrt(k)
    base = projection_norm(e, f)
    _, d = gap_distances(e, e2)
    hypothesis = d * base < 1.0
    margin = direct_sum_margin(e2, f)
    note = f"d_H={d:.6g} P={base:.6g}"
    if not hypothesis:
        logger.warning(f"Perturbation too large for [{case}]: {note}, rows are vacuous")
    names = (
        "complement_persists",
        "perturbed_projection_norm",
        "restricted_cross_projection",
        "perturbed_projection_sqrt_k",
        "restricted_cross_projection_sqrt_k",
        "unit_image.lower",
        "unit_image.upper",
    )
    if not hypothesis or margin <= RANK_TOL:
        report.add(names[0], case, RANK_TOL, margin, vacuous=not hypothesis, note=note)
        for name in names[1:]:
            report.add(name, case, math.nan, math.nan, vacuous=True, note=note)
        return report

    report.add(names[0], case, RANK_TOL, margin, note=note)
    perturbed = projection_norm(e2, f)
    bound = base / (1.0 - base * d)
    report.add(names[1], case, perturbed, bound, slack=SEARCH_TOL * bound, note=note)
    cross = restricted_projection_norm(f, e2, e)
    cross_bound = 2.0 * perturbed * d
    report.add(names[2], case, cross, cross_bound, slack=SEARCH_TOL * cross_bound + 1e-12, note=note)

    small = base <= root_k and d <= 1.0 / (2.0 * root_k)
    if not small:
        for name in names[3:]:
            report.add(name, case, math.nan, math.nan, vacuous=True, note=note)
        return report
    report.add(names[3], case, perturbed, 2.0 * root_k, slack=SEARCH_TOL * 2.0 * root_k, note=note)
    report.add(names[4], case, cross, 4.0 * root_k * d, slack=SEARCH_TOL * 4.0 * root_k * d + 1e-12, note=note)
    rng = np.random.default_rng(seed)
    units = _unit_vectors(e, rng.standard_normal((n_samples, k)))
    images = e.space.norm(Splitting(e2, f, perturbed, math.nan).project(units))
    spread = 4.0 * root_k * d
    report.add(names[5], case, 1.0 - spread, float(images.min()), slack=1e-9, note=note)
    report.add(names[6], case, float(images.max()), 1.0 + spread, slack=1e-9, note=note)
    return report


@lru_cache(maxsize=16)
def polytope_vertices(space: NormedSpace) -> np.ndarray:
    """Vertices of the unit ball {x : |<a_j, x>| <= 1} of a polytope norm."""
    a = space.facets
    halfspaces = np.vstack([np.hstack([a, -np.ones((len(a), 1))]), np.hstack([-a, -np.ones((len(a), 1))])])  # type: ignore[arg-type]
    vertices = HalfspaceIntersection(halfspaces, np.zeros(space.dim)).intersections
    return np.unique(np.round(vertices, 12), axis=0)


def operator_norm(a: Union[LinearMap, np.ndarray], space: NormedSpace) -> float:
    """|A| on the ambient space; exact except for l^p with p not in {1, 2, inf}."""
    m = as_matrix(a)
    if space.kind == "lp" and space.p in (1.0, 2.0, math.inf):
        return float(np.linalg.norm(m, ord={1.0: 1, 2.0: 2, math.inf: np.inf}[space.p]))
    if space.kind in ("weighted_sup", "weighted_l1"):
        w = space.weights
        scaled = (w[:, None] * m) / w[None, :]  # type: ignore[index]
        return float(np.linalg.norm(scaled, ord=np.inf if space.kind == "weighted_sup" else 1))
    if space.kind == "custom_polytope":
        # a convex function attains its max over the ball at a vertex
        vertices = polytope_vertices(space)
        return float(np.max(space.norm(vertices @ m.T)))

    def ratio(c: np.ndarray) -> np.ndarray:
        return space.norm(c @ m.T) / space.norm(c)

    return float(sphere_search(ratio, space.dim).value[0])


def min_norm(a: Union[LinearMap, np.ndarray], frame: Frame) -> float:
    """inf over unit v in E of |Av|, so |(A|E)^{-1}| = 1 / min_norm."""
    m = as_matrix(a)
    space = frame.space
    if frame.k == 1:
        v = frame.basis[:, 0]
        return float(space.norm(m @ v) / space.norm(v))

    def ratio(c: np.ndarray) -> np.ndarray:
        v = frame.vectors(c)
        return space.norm(v @ m.T) / space.norm(v)

    return float(sphere_search(ratio, frame.k, maximize=False).value[0])
