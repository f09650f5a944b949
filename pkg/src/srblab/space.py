"""Ambient coordinate spaces, norm oracles, frames and John-ellipsoid inner products."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Literal, Optional, Union

import numpy as np
from scipy.optimize import linprog, minimize
from scipy.spatial import ConvexHull, QhullError
from scipy.special import gamma

from .config import (
    GOLDEN_ITERATIONS,
    MVEE_DIRECTIONS,
    MVEE_MAX_ITER,
    MVEE_REFINE_ROUNDS,
    MVEE_TOL,
    RANK_TOL,
    SYMMETRY_RTOL,
    NormConfig,
    SpaceConfig,
)
from .errors import ConvergenceError, InputError, RankError
from .search import minimize_convex_1d, sphere_points, sphere_search

logger = logging.getLogger(__name__)

ScaleMode = Literal["john_raw", "volume_matched"]


def unit_ball_volume(k: int) -> float:
    """Euclidean unit-ball volume omega_k."""
    return float(np.pi ** (k / 2.0) / gamma(k / 2.0 + 1.0))


@dataclass(frozen=True, eq=False)
class NormedSpace:
    """R^D with one of the built-in norms.

    Norms are evaluated along the last axis, so ``space.norm(v)`` accepts a single
    vector or any stack of vectors.
    """

    dim: int
    kind: str
    p: Optional[float] = None
    weights: Optional[np.ndarray] = None
    facets: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise InputError(f"dimension must be positive, got {self.dim}")
        if self.weights is not None:
            w = np.array(self.weights, dtype=float)
            if w.shape != (self.dim,) or not np.all(w > 0) or not np.all(np.isfinite(w)):
                raise InputError("weights must be strictly positive, one per coordinate")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)
        if self.facets is not None:
            a = np.array(self.facets, dtype=float)
            if a.ndim != 2 or a.shape[1] != self.dim or np.linalg.matrix_rank(a) < self.dim:
                raise InputError("facets must be rows of length dim spanning the space")
            a.setflags(write=False)
            object.__setattr__(self, "facets", a)
        if self.kind == "lp" and (self.p is None or self.p < 1):
            raise InputError("lp norms need p >= 1")
        if self.kind not in ("lp", "weighted_sup", "weighted_l1", "custom_polytope"):
            raise InputError(f"unknown norm kind '{self.kind}'")

    @classmethod
    def lp(cls, dim: int, p: float) -> "NormedSpace":
        return cls(dim=dim, kind="lp", p=float(p))

    @classmethod
    def weighted_sup(cls, weights: Union[list, np.ndarray]) -> "NormedSpace":
        w = np.asarray(weights, dtype=float)
        return cls(dim=w.size, kind="weighted_sup", weights=w)

    @classmethod
    def weighted_l1(cls, weights: Union[list, np.ndarray]) -> "NormedSpace":
        w = np.asarray(weights, dtype=float)
        return cls(dim=w.size, kind="weighted_l1", weights=w)

    @classmethod
    def polytope(cls, facets: Union[list, np.ndarray]) -> "NormedSpace":
        a = np.asarray(facets, dtype=float)
        return cls(dim=a.shape[1], kind="custom_polytope", facets=a)

    @classmethod
    def from_config(cls, config: SpaceConfig) -> "NormedSpace":
        norm: NormConfig = config.norm
        return cls(
            dim=config.dim,
            kind=norm.kind,
            p=norm.p,
            weights=None if norm.weights is None else np.asarray(norm.weights),
            facets=None if norm.facets is None else np.asarray(norm.facets),
        )

    @property
    def label(self) -> str:
        if self.kind == "lp":
            p = "inf" if math.isinf(self.p or 0.0) else f"{self.p:g}"
            return f"lp:{p}:{self.dim}"
        if self.weights is not None:
            return f"{self.kind}:" + ",".join(f"{w:g}" for w in self.weights)
        return f"custom_polytope:{self.dim}:{0 if self.facets is None else len(self.facets)}"

    @property
    def is_euclidean(self) -> bool:
        return self.kind == "lp" and self.p == 2.0

    @property
    def is_polyhedral(self) -> bool:
        return self.kind != "lp" or self.p in (1.0, math.inf)

    def _check(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.ndim == 0 or v.shape[-1] != self.dim:
            raise InputError(
                f"vector has length {v.shape[-1] if v.ndim else 0}, space dimension is {self.dim}"
            )
        return v

    def norm(self, v: np.ndarray) -> np.ndarray:
        v = self._check(v)
        a = np.abs(v)
        if self.kind == "lp":
            p = float(self.p)  # type: ignore[arg-type]
            if math.isinf(p):
                return a.max(axis=-1)
            if p == 1.0:
                return a.sum(axis=-1)
            if p == 2.0:
                return np.linalg.norm(v, axis=-1)
            top = a.max(axis=-1, keepdims=True)
            safe = np.where(top > 0, top, 1.0)
            return top[..., 0] * np.sum((a / safe) ** p, axis=-1) ** (1.0 / p)
        if self.kind == "weighted_sup":
            return (a * self.weights).max(axis=-1)
        if self.kind == "weighted_l1":
            return (a * self.weights).sum(axis=-1)
        return np.abs(v @ self.facets.T).max(axis=-1)  # type: ignore[union-attr]

    def dual_norm(self, ell: np.ndarray) -> np.ndarray:
        """Norm of linear functionals x -> <ell, x> with respect to this norm."""
        ell = self._check(ell)
        a = np.abs(ell)
        if self.kind == "lp":
            p = float(self.p)  # type: ignore[arg-type]
            if math.isinf(p):
                return a.sum(axis=-1)
            if p == 1.0:
                return a.max(axis=-1)
            q = p / (p - 1.0)
            return NormedSpace.lp(self.dim, q).norm(ell)
        if self.kind == "weighted_sup":
            return (a / self.weights).sum(axis=-1)
        if self.kind == "weighted_l1":
            return (a / self.weights).max(axis=-1)
        flat = ell.reshape(-1, self.dim)
        out = np.array([self._polytope_dual(row) for row in flat])
        return out.reshape(ell.shape[:-1])

    def _polytope_dual(self, ell: np.ndarray) -> float:
        # sup{<ell,x> : |<a_j,x>| <= 1} = min{sum |y_j| : A^T y = ell}
        a = self.facets
        n = a.shape[0]  # type: ignore[union-attr]
        c = np.ones(2 * n)
        a_eq = np.hstack([a.T, -a.T])  # type: ignore[union-attr]
        result = linprog(c, A_eq=a_eq, b_eq=ell, bounds=(0, None), method="highs")
        if not result.success:
            raise ConvergenceError(f"dual norm LP failed: {result.message}", iterations=0)
        return float(result.fun)

    def distance_to_span(self, points: np.ndarray, basis: np.ndarray) -> np.ndarray:
        """inf over s of |x - basis @ s| for each row x of ``points``."""
        x = np.atleast_2d(self._check(points))
        basis = np.asarray(basis, dtype=float).reshape(self.dim, -1)
        m = basis.shape[1]
        if m == 0:
            return self.norm(x)
        if self.is_euclidean:
            coeffs, *_ = np.linalg.lstsq(basis, x.T, rcond=None)
            return np.linalg.norm(x - (basis @ coeffs).T, axis=1)
        if m <= 2:
            return _nested_golden(self.norm, x, basis, GOLDEN_ITERATIONS if m == 1 else 60)
        return np.array([self._distance_scipy(row, basis) for row in x])

    def _distance_scipy(self, x: np.ndarray, basis: np.ndarray) -> float:
        m = basis.shape[1]
        if self.is_polyhedral:
            if self.kind == "weighted_l1" or (self.kind == "lp" and self.p == 1.0):
                b = np.diag(self.weights if self.weights is not None else np.ones(self.dim))
                return _l1_type_distance(x, basis, b)
            if self.kind == "custom_polytope":
                rows = self.facets
            elif self.weights is not None:
                rows = np.diag(self.weights)
            else:
                rows = np.eye(self.dim)
            return _sup_type_distance(x, basis, rows)  # type: ignore[arg-type]
        s0, *_ = np.linalg.lstsq(basis, x, rcond=None)
        result = minimize(lambda s: float(self.norm(x - basis @ s)), s0, method="BFGS")
        return float(min(result.fun, self.norm(x - basis @ s0)))

    def euclidean_bounds(self) -> tuple[float, float]:
        """(upper, lower) with |x| <= upper |x|_2 and |x|_2 <= lower |x|."""
        d = self.dim
        if self.kind == "lp":
            p = float(self.p)  # type: ignore[arg-type]
            if p >= 2.0:
                return 1.0, d ** (0.5 - (0.0 if math.isinf(p) else 1.0 / p))
            return d ** (1.0 / p - 0.5), 1.0
        if self.kind == "weighted_sup":
            w = self.weights
            return float(w.max()), math.sqrt(d) / float(w.min())  # type: ignore[union-attr]
        if self.kind == "weighted_l1":
            w = self.weights
            return float(w.max()) * math.sqrt(d), 1.0 / float(w.min())  # type: ignore[union-attr]
        a = self.facets
        rows = float(np.max(np.linalg.norm(a, axis=1)))  # type: ignore[arg-type]
        # |x|_2 <= sigma_min(A)^-1 |A x|_2 <= sigma_min(A)^-1 sqrt(n) |A x|_inf
        sigma = float(np.linalg.svd(a, compute_uv=False)[-1])
        return rows, math.sqrt(len(a)) / sigma  # type: ignore[arg-type]

    def random_unit_vectors(self, n: int, rng: np.random.Generator) -> np.ndarray:
        v = rng.standard_normal((n, self.dim))
        return v / self.norm(v)[:, None]


def _nested_golden(norm_fn, x: np.ndarray, basis: np.ndarray, iterations: int) -> np.ndarray:
    """Exact-bracket coordinate-nested golden search for min_s |x - basis s|, m <= 2."""
    m = basis.shape[1]
    if m == 0:
        return norm_fn(x)
    first = basis[:, 0]
    rest = basis[:, 1:]
    pinv = np.linalg.pinv(basis)
    s_ls = x @ pinv.T
    residual = np.linalg.norm(x - s_ls @ basis.T, axis=1)
    scale = 2.0 * residual / np.linalg.norm(first) + 1e-15 * np.linalg.norm(x, axis=1)

    def phi(s: np.ndarray) -> np.ndarray:
        return _nested_golden(norm_fn, x - s[:, None] * first, rest, iterations)

    _, value = minimize_convex_1d(phi, s_ls[:, 0], scale, iterations)
    return value


def _sup_type_distance(x: np.ndarray, basis: np.ndarray, rows: np.ndarray) -> float:
    # min t subject to -t <= <a_j, x - basis s> <= t
    m = basis.shape[1]
    af = rows @ basis
    ax = rows @ x
    ones = np.ones((rows.shape[0], 1))
    a_ub = np.vstack([np.hstack([-af, -ones]), np.hstack([af, -ones])])
    b_ub = np.concatenate([-ax, ax])
    c = np.zeros(m + 1)
    c[-1] = 1.0
    bounds = [(None, None)] * m + [(0, None)]
    result = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if not result.success:
        raise ConvergenceError(f"distance LP failed: {result.message}", iterations=0)
    return float(result.fun)


def _l1_type_distance(x: np.ndarray, basis: np.ndarray, rows: np.ndarray) -> float:
    # min sum t_i subject to -t_i <= <b_i, x - basis s> <= t_i
    m = basis.shape[1]
    n = rows.shape[0]
    bf = rows @ basis
    bx = rows @ x
    eye = np.eye(n)
    a_ub = np.vstack([np.hstack([-bf, -eye]), np.hstack([bf, -eye])])
    b_ub = np.concatenate([-bx, bx])
    c = np.concatenate([np.zeros(m), np.ones(n)])
    bounds = [(None, None)] * m + [(0, None)] * n
    result = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if not result.success:
        raise ConvergenceError(f"distance LP failed: {result.message}", iterations=0)
    return float(result.fun)


def norm_eval(space: NormedSpace, v: np.ndarray) -> float:
    v = np.asarray(v, dtype=float)
    if v.shape != (space.dim,):
        raise InputError(f"expected a vector of length {space.dim}, got shape {v.shape}")
    return float(space.norm(v))


@dataclass(frozen=True, eq=False)
class Frame:
    """k linearly independent columns spanning a subspace E of the ambient space."""

    space: NormedSpace
    basis: np.ndarray

    def __post_init__(self) -> None:
        b = np.array(self.basis, dtype=float)
        if b.ndim == 1:
            b = b[:, None]
        if b.ndim != 2 or b.shape[0] != self.space.dim:
            raise InputError(
                f"frame basis must have {self.space.dim} rows, got shape {b.shape}"
            )
        if b.shape[1] < 1 or b.shape[1] > self.space.dim:
            raise InputError(f"frame size k={b.shape[1]} must satisfy 1 <= k <= D")
        s = np.linalg.svd(b, compute_uv=False)
        if not np.all(np.isfinite(s)) or s[-1] <= RANK_TOL * s[0]:
            raise RankError(
                f"frame is numerically rank deficient (singular values {s[-1]:.3e}/{s[0]:.3e})"
            )
        b.setflags(write=False)
        object.__setattr__(self, "basis", b)

    @property
    def k(self) -> int:
        return int(self.basis.shape[1])

    @property
    def dim(self) -> int:
        return self.space.dim

    def vectors(self, coeffs: np.ndarray) -> np.ndarray:
        """Ambient vectors sum_i c_i v_i for coefficient arrays of shape (..., k)."""
        return np.asarray(coeffs) @ self.basis.T

    def coeff_norm(self, coeffs: np.ndarray) -> np.ndarray:
        return self.space.norm(self.vectors(coeffs))

    def column_norms(self) -> np.ndarray:
        return self.space.norm(self.basis.T)

    def normalized(self) -> "Frame":
        return Frame(self.space, self.basis / self.column_norms()[None, :])

    def with_basis(self, basis: np.ndarray) -> "Frame":
        return Frame(self.space, basis)

    def image(self, matrix: np.ndarray) -> "Frame":
        return Frame(self.space, np.asarray(matrix) @ self.basis)


@dataclass(frozen=True, eq=False)
class InnerProductModel:
    frame: Frame
    gram: np.ndarray
    scale_mode: ScaleMode
    mvee_tol: float = MVEE_TOL

    def __post_init__(self) -> None:
        g = np.array(self.gram, dtype=float)
        if g.shape != (self.frame.k, self.frame.k):
            raise InputError(f"gram must be a {self.frame.k} x {self.frame.k} matrix, got shape {g.shape}")
        scale = float(np.abs(g).max()) if g.size else 0.0
        if not np.all(np.abs(g - g.T) <= SYMMETRY_RTOL * scale):
            raise InputError("gram must be a symmetric k x k matrix")
        try:
            np.linalg.cholesky(g)
        except np.linalg.LinAlgError as e:
            raise RankError(f"gram matrix is not positive definite: {e}") from e
        g = 0.5 * (g + g.T)
        g.setflags(write=False)
        object.__setattr__(self, "gram", g)

    def norm(self, coeffs: np.ndarray) -> np.ndarray:
        """Gram norm of frame coefficient vectors, shape (..., k) -> (...)."""
        c = np.asarray(coeffs, dtype=float)
        return np.sqrt(np.einsum("...i,ij,...j->...", c, self.gram, c))

    def ball_volume(self) -> float:
        """Lebesgue volume (frame coordinates) of the gram-norm unit ball."""
        return unit_ball_volume(self.frame.k) / math.sqrt(float(np.linalg.det(self.gram)))


def _khachiyan(points: np.ndarray, tol: float, max_iter: int) -> tuple[np.ndarray, int]:
    """Origin-centred minimum-volume enclosing ellipsoid of +/-points.

    Returns (Q, iterations) with the ellipsoid {x : x^T Q x <= 1}.
    """
    n, k = points.shape
    u = np.full(n, 1.0 / n)
    for iteration in range(1, max_iter + 1):
        x = (points.T * u) @ points
        x_inv = np.linalg.inv(x)
        m = np.einsum("ij,ij->i", points @ x_inv, points)
        j = int(np.argmax(m))
        m_max = float(m[j])
        if m_max <= k * (1.0 + tol):
            # inv() of a symmetric matrix is only symmetric to round-off
            q = 0.5 * (x_inv + x_inv.T)
            return q / m_max, iteration
        step = (m_max - k) / (k * (m_max - 1.0))
        u *= 1.0 - step
        u[j] += step
    raise ConvergenceError(
        f"MVEE did not reach tolerance {tol:g} within {max_iter} iterations", iterations=max_iter
    )


def john_model(
    frame: Frame,
    n_dirs: int = MVEE_DIRECTIONS,
    mvee_tol: float = MVEE_TOL,
    max_iter: int = MVEE_MAX_ITER,
) -> InnerProductModel:
    """Inner product from the enclosing ellipsoid of the span's unit ball.

    Boundary points u/|u| of sampled directions u are gathered, reduced to the
    vertices of their symmetric hull, and fed to the Khachiyan iteration. Refinement
    rounds then search for the boundary point furthest outside the ellipsoid, add it
    to the point set and refit. Whatever excess remains is removed by scaling the gram
    matrix down, so the gram norm never exceeds the space norm on the refined set:
    ||v||_E = sqrt(c^T G c) <= |v| for v = sum c_i v_i.
    """
    k = frame.k
    if n_dirs < 2 * k * (k + 1):
        raise InputError(f"john_model needs at least {2 * k * (k + 1)} directions, got {n_dirs}")
    if k == 1:
        length = float(frame.column_norms()[0])
        return InnerProductModel(frame, np.array([[length**2]]), "john_raw", mvee_tol)

    dirs = np.asarray(sphere_points(k, n_dirs))
    points = dirs / frame.coeff_norm(dirs)[:, None]
    try:
        hull = ConvexHull(np.vstack([points, -points]))
        vertices = np.unique(hull.vertices % points.shape[0])
        points = points[vertices]
    except QhullError:
        logger.debug("Convex hull reduction failed, using every boundary sample")
    q, iterations = _khachiyan(points, mvee_tol, max_iter)

    for round_index in range(MVEE_REFINE_ROUNDS + 1):

        def outside(c: np.ndarray, q: np.ndarray = q) -> np.ndarray:
            return np.sqrt(np.einsum("...i,ij,...j->...", c, q, c)) / frame.coeff_norm(c)

        found = sphere_search(outside, k, n_grid=n_dirs)
        worst = float(found.value[0])
        if worst <= math.sqrt(1.0 + mvee_tol) or round_index == MVEE_REFINE_ROUNDS:
            break
        direction = found.point[0]
        points = np.vstack([points, direction / frame.coeff_norm(direction)])
        q, more = _khachiyan(points, mvee_tol, max_iter)
        iterations += more
    if worst > 1.0:
        q = q / worst**2
    logger.debug(f"john_model k={k}: {points.shape[0]} hull points, {iterations} iterations")
    return InnerProductModel(frame, q, "john_raw", mvee_tol)


def volume_matched_model(model: InnerProductModel, ball_vol: float) -> InnerProductModel:
    """Rescale the gram so its unit ball has Lebesgue volume ``ball_vol``."""
    if not ball_vol > 0 or not math.isfinite(ball_vol):
        raise InputError(f"ball volume must be positive, got {ball_vol}")
    k = model.frame.k
    det = float(np.linalg.det(model.gram))
    scale = (unit_ball_volume(k) / (ball_vol * math.sqrt(det))) ** (2.0 / k)
    return InnerProductModel(model.frame, scale * model.gram, "volume_matched", model.mvee_tol)


@dataclass(frozen=True, eq=False)
class LinearMap:
    """Ambient linear operator, dense or finite-rank plus a diagonal tail.

    With ``tail_start = t`` the block ``matrix[t:, t:]`` must be diagonal: the operator
    is K + C with C = diag(0, ..., 0, a_t, a_{t+1}, ...) and K of rank at most 2t.
    """

    matrix: np.ndarray
    tail_start: Optional[int] = None

    def __post_init__(self) -> None:
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InputError(f"linear maps must be square, got shape {m.shape}")
        if self.tail_start is not None:
            t = int(self.tail_start)
            if not 0 <= t <= m.shape[0]:
                raise InputError(f"tail_start {t} outside [0, {m.shape[0]}]")
            tail = m[t:, t:]
            if np.any(tail - np.diag(np.diag(tail))):
                raise InputError("the tail block of a structured map must be diagonal")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def tail_diagonal(self) -> np.ndarray:
        if self.tail_start is None:
            return np.zeros(0)
        return np.diag(self.matrix)[self.tail_start :]

    def apply(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v) @ self.matrix.T


def as_matrix(a: Union[LinearMap, np.ndarray]) -> np.ndarray:
    return a.matrix if isinstance(a, LinearMap) else np.asarray(a, dtype=float)
