"""Induced volumes m_E, determinants det(A|E) and the orthogonality defect N[v]."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Literal, Optional, Union

import numpy as np
from scipy.linalg import solve_triangular

from .config import (
    ACCEPTANCE_FLOOR,
    MVEE_TOL,
    RANK_TOL,
    SAMPLE_BATCH,
    SAMPLE_CAP,
    SPHERE_GRID_POINTS,
    TARGET_REL_ERR,
)
from .errors import ConditioningError, InputError
from .search import sphere_search
from .space import Frame, InnerProductModel, LinearMap, as_matrix, john_model, unit_ball_volume

logger = logging.getLogger(__name__)

VolumeMethod = Literal["exact_1d", "monte_carlo", "closed_form", "quadrature"]


@dataclass(frozen=True)
class VolumeEstimate:
    value: float
    std_error: float
    n_samples: int
    method: VolumeMethod
    target_met: bool = True

    @property
    def rel_error(self) -> float:
        return self.std_error / self.value if self.value > 0 else math.inf


@dataclass(frozen=True)
class DetResult:
    value: float
    log_value: float
    std_error_log: float
    method: VolumeMethod = "closed_form"
    degenerate: bool = False
    n_samples: int = 0


def _uniform_ball(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    g = rng.standard_normal((n, k))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * rng.random(n)[:, None] ** (1.0 / k)


def unit_ball_coord_volume(
    frame: Frame,
    seed: int = 0,
    target_rel_err: float = TARGET_REL_ERR,
    *,
    model: Optional[InnerProductModel] = None,
    mvee_tol: float = MVEE_TOL,
    batch_size: int = SAMPLE_BATCH,
    sample_cap: int = SAMPLE_CAP,
    acceptance_floor: float = ACCEPTANCE_FLOOR,
) -> VolumeEstimate:
    """Lebesgue volume of {c in R^k : |sum c_i v_i| <= 1}.

    k = 1 is exact. For k >= 2 points are drawn uniformly from the (1+mvee_tol)-inflated
    enclosing ellipsoid and the acceptance rate scales the ellipsoid volume. Batch b
    uses the generator seeded with (seed, b), so two calls with the same seed share
    their direction streams.
    """
    if target_rel_err <= 0:
        raise InputError(f"target relative error must be positive, got {target_rel_err}")
    k = frame.k
    if k == 1:
        return VolumeEstimate(2.0 / float(frame.column_norms()[0]), 0.0, 0, "exact_1d")

    model = model or john_model(frame, mvee_tol=mvee_tol)
    inflate = 1.0 + model.mvee_tol
    chol = np.linalg.cholesky(model.gram)
    envelope = unit_ball_volume(k) * inflate**k / math.sqrt(float(np.linalg.det(model.gram)))

    accepted = 0
    total = 0
    batch_index = 0
    target_met = True
    while True:
        rng = np.random.default_rng([seed, batch_index])
        y = _uniform_ball(rng, batch_size, k)
        coeffs = inflate * solve_triangular(chol.T, y.T, lower=False).T
        accepted += int(np.count_nonzero(frame.coeff_norm(coeffs) <= 1.0))
        total += batch_size
        batch_index += 1
        rate = accepted / total
        if rate < acceptance_floor:
            raise ConditioningError(
                f"acceptance rate {rate:.2e} below floor {acceptance_floor:g} for k={k}; "
                "the enclosing ellipsoid is a poor envelope, try a smaller k"
            )
        value = envelope * rate
        std_error = envelope * math.sqrt(rate * (1.0 - rate) / total)
        if std_error <= target_rel_err * value:
            break
        if total >= sample_cap:
            target_met = False
            logger.warning(
                f"Sample cap {sample_cap} reached with relative error {std_error / value:.2e}"
            )
            break
    return VolumeEstimate(value, std_error, total, "monte_carlo", target_met)


def induced_volume_parallelepiped(
    frame: Frame,
    seed: int = 0,
    target_rel_err: float = TARGET_REL_ERR,
    **kwargs,
) -> VolumeEstimate:
    """m_E(P[v_1..v_k]) = omega_k / (coordinate volume of the unit ball of E)."""
    coord = unit_ball_coord_volume(frame, seed, target_rel_err, **kwargs)
    value = unit_ball_volume(frame.k) / coord.value
    return VolumeEstimate(
        value, value * coord.rel_error if coord.std_error else 0.0,
        coord.n_samples, coord.method, coord.target_met,
    )


def orthogonality_defect(frame: Frame, n_grid: int = SPHERE_GRID_POINTS) -> float:
    """N[v_1..v_k]: sum of the norms of the projections onto each v_i along the others."""
    unit = frame.normalized()
    total = 0.0
    for i in range(unit.k):

        def ratio(c: np.ndarray, i: int = i) -> np.ndarray:
            return np.abs(c[..., i]) / unit.coeff_norm(c)

        total += float(sphere_search(ratio, unit.k, n_grid=n_grid).value[0])
    return total


def _same_span(frame: Frame, image: np.ndarray) -> Optional[np.ndarray]:
    coeffs, *_ = np.linalg.lstsq(frame.basis, image, rcond=None)
    residual = np.linalg.norm(frame.basis @ coeffs - image)
    if residual <= 1e-12 * max(np.linalg.norm(image), 1e-300):
        return coeffs
    return None


def det_restricted(
    a: Union[LinearMap, np.ndarray],
    frame: Frame,
    seed: int = 0,
    target_rel_err: float = TARGET_REL_ERR,
    **kwargs,
) -> DetResult:
    """det(A|E) = m_{AE}(A B_E) / m_E(B_E), computed as a ratio of coordinate volumes."""
    matrix = as_matrix(a)
    if matrix.shape != (frame.dim, frame.dim):
        raise InputError(f"map of shape {matrix.shape} does not act on R^{frame.dim}")
    image = matrix @ frame.basis
    s = np.linalg.svd(image, compute_uv=False)
    if s[0] == 0.0 or s[-1] <= RANK_TOL * s[0]:
        return DetResult(0.0, -math.inf, 0.0, "closed_form", degenerate=True)
    if frame.k == 1:
        ratio = float(frame.space.norm(image[:, 0]) / frame.column_norms()[0])
        return DetResult(ratio, math.log(ratio), 0.0, "exact_1d")
    coeffs = _same_span(frame, image)
    if coeffs is not None:
        value = abs(float(np.linalg.det(coeffs)))
        return DetResult(value, math.log(value), 0.0, "closed_form")
    image_frame = frame.with_basis(image)
    domain = unit_ball_coord_volume(frame, seed, target_rel_err, **kwargs)
    target = unit_ball_coord_volume(image_frame, seed, target_rel_err, **kwargs)
    log_value = math.log(domain.value) - math.log(target.value)
    return DetResult(
        math.exp(log_value),
        log_value,
        math.hypot(domain.rel_error, target.rel_error),
        "monte_carlo",
        n_samples=domain.n_samples + target.n_samples,
    )


def coordinate_log_ratio(
    start: Frame,
    end: Frame,
    seed: int = 0,
    target_rel_err: float = TARGET_REL_ERR,
) -> tuple[float, float]:
    """log cv(start) - log cv(end) and its standard error.

    Exact when k = 1 or when both frames span the same subspace.
    """
    if start.k == 1:
        return float(np.log(end.column_norms()[0]) - np.log(start.column_norms()[0])), 0.0
    coeffs = _same_span(start, end.basis)
    if coeffs is not None:
        return float(np.log(abs(np.linalg.det(coeffs)))), 0.0
    a = unit_ball_coord_volume(start, seed, target_rel_err)
    b = unit_ball_coord_volume(end, seed, target_rel_err)
    return math.log(a.value) - math.log(b.value), math.hypot(a.rel_error, b.rel_error)
