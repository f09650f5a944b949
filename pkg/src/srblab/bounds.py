"""Seeded batteries that evaluate both sides of the volume and determinant inequalities.

Every estimate that comes from Monte Carlo carries its standard error, and each row
gets a slack of three combined standard errors on top of the enclosing-ellipsoid
tolerance. Inequalities that are only established up to an unspecified dimensional
constant use ``c_k`` and additionally report the smallest constant the sample allows.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np
from scipy.linalg import eigh

from .config import (
    DEFAULT_C_K,
    DEFAULT_SEED,
    MVEE_TOL,
    SEARCH_TOL,
    TARGET_REL_ERR,
    parse_space_spec,
)
from .geometry import (
    angle,
    check_perturbed_splitting,
    complement,
    gap_distances,
    min_norm,
    operator_norm,
)
from .report import BoundRow, Report
from .space import Frame, NormedSpace, john_model, unit_ball_volume, volume_matched_model
from .tasks import run_jobs, spawn_seeds
from .volume import VolumeEstimate, det_restricted, orthogonality_defect, unit_ball_coord_volume

logger = logging.getLogger(__name__)

DEFAULT_BATTERY_SPACES = ("lp:1:3", "lp:2:3", "lp:inf:3", "weighted_sup:1,0.5,2")
SIGMAS = 3.0


@dataclass(frozen=True)
class BatteryConfig:
    n_cases: int = 30
    spaces: Tuple[str, ...] = DEFAULT_BATTERY_SPACES
    max_k: int = 3
    seed: int = DEFAULT_SEED
    c_k: float = DEFAULT_C_K
    target_rel_err: float = TARGET_REL_ERR
    perturbation: float = 0.05
    workers: int = 1
    metadata: Dict[str, str] = field(default_factory=dict)

    def cases(self) -> List[Tuple[str, int, int]]:
        combos = [(spec, k) for spec in self.spaces for k in range(1, self.max_k + 1)]
        seeds = spawn_seeds(self.seed, self.n_cases)
        return [(*combos[i % len(combos)], seeds[i]) for i in range(self.n_cases)]


def random_frame(space: NormedSpace, k: int, rng: np.random.Generator, max_cond: float = 20.0) -> Frame:
    """Random k-frame with unit columns and bounded Euclidean condition number."""
    for _ in range(100):
        basis = rng.standard_normal((space.dim, k))
        if np.linalg.cond(basis) <= max_cond:
            return Frame(space, basis).normalized()
    return Frame(space, np.eye(space.dim)[:, :k])


def random_operator(dim: int, rng: np.random.Generator, low: float = 0.5, high: float = 2.0) -> np.ndarray:
    """Q1 diag(s) Q2 with singular values s drawn from [low, high]."""
    q1, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    q2, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q1 @ np.diag(rng.uniform(low, high, dim)) @ q2


def perturbed_frame(frame: Frame, size: float, rng: np.random.Generator) -> Frame:
    """Unit vectors w_i near v_i with |v_i - w_i| of order ``size``."""
    noise = rng.standard_normal(frame.basis.shape)
    noise /= frame.space.norm(noise.T)[None, :]
    return frame.with_basis(frame.basis + size * noise).normalized()


def _log_slack(*std_errors: float) -> float:
    return SIGMAS * math.sqrt(sum(s * s for s in std_errors))


def _inequality_case(spec: str, k: int, seed: int, cfg: BatteryConfig) -> Tuple[List[BoundRow], Dict[str, float]]:
    space = NormedSpace.from_config(parse_space_spec(spec))
    rng = np.random.default_rng(seed)
    case = f"{space.label}/k={k}/seed={seed}"
    report = Report("inequality_battery")
    fitted: Dict[str, float] = {}
    tol = cfg.target_rel_err
    inflate = (1.0 + MVEE_TOL) ** k
    frame = random_frame(space, k, rng)

    # parallelepiped volume against the gram norms of a volume-matched inner product
    model = john_model(frame)
    coord = unit_ball_coord_volume(frame, seed, tol, model=model)
    volume = unit_ball_volume(k) / coord.value
    matched = volume_matched_model(model, coord.value)
    hadamard = float(np.prod(np.sqrt(np.diag(matched.gram))))
    chain = k ** (k / 2.0) * float(np.prod(frame.column_norms()))
    report.add("parallelepiped_hadamard", case, volume, hadamard, slack=1e-9 * hadamard)
    report.add(
        "parallelepiped_chain", case, hadamard, chain,
        slack=chain * (inflate * (1.0 + SIGMAS * coord.rel_error) - 1.0),
    )

    # determinant against products of image lengths
    a = random_operator(space.dim, rng)
    det = det_restricted(a, frame, seed, tol)
    image = frame.image(a)
    image_model = john_model(image)
    image_coord = unit_ball_coord_volume(image, seed, tol, model=image_model)
    image_matched = volume_matched_model(image_model, image_coord.value)
    _, svd_coeffs = eigh(image_matched.gram, matched.gram)
    svd_lengths = float(np.prod(space.norm((a @ frame.basis @ svd_coeffs).T)))
    factor = k ** (k / 2.0) * inflate
    noise = math.exp(_log_slack(det.std_error_log, coord.rel_error, image_coord.rel_error)) - 1.0
    report.add("svd_sandwich.lower", case, svd_lengths / factor, det.value, slack=noise * max(det.value, svd_lengths / factor))
    report.add("svd_sandwich.upper", case, det.value, svd_lengths * factor, slack=noise * max(det.value, svd_lengths * factor))
    chol = np.linalg.cholesky(matched.gram)
    orthonormal = frame.basis @ np.linalg.inv(chol).T
    on_lengths = float(np.prod(space.norm((a @ orthonormal).T)))
    report.add("gram_orthonormal_upper", case, det.value, on_lengths * factor, slack=noise * on_lengths * factor)

    # multiplicativity
    b = random_operator(space.dim, rng)
    det_ba = det_restricted(b @ a, frame, seed, tol)
    det_b = det_restricted(b, image, seed, tol)
    defect = abs(det_ba.log_value - det_b.log_value - det.log_value)
    report.add(
        "multiplicativity", case, defect, 0.0,
        slack=_log_slack(det_ba.std_error_log, det_b.std_error_log, det.std_error_log) + 1e-9,
    )

    # splitting of the determinant
    if k >= 2:
        e, f = frame.with_basis(frame.basis[:, :1]), frame.with_basis(frame.basis[:, 1:])
        det_e = det_restricted(a, e, seed, tol)
        det_f = det_restricted(a, f, seed, tol)
        ratio_log = det.log_value - det_e.log_value - det_f.log_value
        alpha = angle(e, f)
        alpha_image = angle(e.image(a), f.image(a))
        slack = _log_slack(det.std_error_log, det_e.std_error_log, det_f.std_error_log)
        report.add("split_sandwich.lower", case, math.log(alpha_image) - math.log(cfg.c_k), ratio_log, slack=slack)
        report.add("split_sandwich.upper", case, ratio_log, math.log(cfg.c_k) - math.log(alpha), slack=slack)
        fitted["split_constant"] = math.exp(max(ratio_log + math.log(alpha), math.log(alpha_image) - ratio_log))

    # Lipschitz dependence of parallelepiped volumes on the vectors
    moved = perturbed_frame(frame, cfg.perturbation / 2.0, rng)
    moved_coord = unit_ball_coord_volume(moved, seed, tol)
    log_ratio = abs(math.log(moved_coord.value) - math.log(coord.value))
    displacement = float(np.sum(space.norm((frame.basis - moved.basis).T)))
    n_bar = max(orthogonality_defect(frame), orthogonality_defect(moved))
    report.add(
        "volume_lipschitz", case, log_ratio, cfg.c_k * n_bar * displacement,
        slack=_log_slack(coord.rel_error, moved_coord.rel_error),
    )
    fitted["volume_lipschitz"] = log_ratio / displacement

    # Lipschitz dependence of the determinant on (A, E)
    bound_m = 1.01 * max(operator_norm(a, space), 1.0 / min_norm(a, frame), 1.0 + 1e-9)
    delta2 = 1.0 / (cfg.c_k * bound_m ** (10 * k))
    lipschitz2 = cfg.c_k * bound_m ** (10 * k)
    direction = rng.standard_normal((space.dim, space.dim))
    a2 = a + 0.25 * delta2 * direction / operator_norm(direction, space)
    e2 = perturbed_frame(frame, delta2 / (8.0 * max(orthogonality_defect(frame), 1.0)), rng)
    operator_gap = operator_norm(a2 - a, space)
    _, hausdorff = gap_distances(frame, e2)
    det2 = det_restricted(a2, e2, seed, tol)
    hypotheses = (
        operator_gap + hausdorff <= delta2
        and operator_norm(a2, space) <= bound_m
        and 1.0 / min_norm(a2, e2) <= bound_m
    )
    det_gap = abs(det.log_value - det2.log_value)
    report.add(
        "det_lipschitz", case, det_gap, lipschitz2 * (operator_gap + hausdorff),
        slack=_log_slack(det.std_error_log, det2.std_error_log), vacuous=not hypotheses,
        note=f"M={bound_m:.6g} delta2={delta2:.3e}",
    )
    if operator_gap + hausdorff > 0:
        fitted["det_lipschitz"] = det_gap / (operator_gap + hausdorff)

    if k < space.dim:
        _complement_rows(report, fitted, frame, coord, case, seed, cfg, rng)
    return report.rows, fitted


def _complement_rows(
    report: Report,
    fitted: Dict[str, float],
    frame: Frame,
    coord: VolumeEstimate,
    case: str,
    seed: int,
    cfg: BatteryConfig,
    rng: np.random.Generator,
) -> None:
    k = frame.k
    root_k = math.sqrt(k)
    split = complement(frame)
    report.add(
        "angle_projection_product", case, abs(split.angle * split.proj_norm - 1.0), 0.0,
        slack=2.0 * SEARCH_TOL,
    )
    if split.reverse_angle is not None:
        report.add("angle_symmetry", case, split.angle, 2.0 * split.reverse_angle, slack=SEARCH_TOL * split.angle)

    nearby = perturbed_frame(frame, cfg.perturbation / k, rng)
    delta_a, hausdorff = gap_distances(frame, nearby)
    report.add("gap_sandwich.lower", case, delta_a, hausdorff, slack=SEARCH_TOL * hausdorff + 1e-12)
    report.add("gap_sandwich.upper", case, hausdorff, 2.0 * delta_a, slack=SEARCH_TOL * hausdorff + 1e-12)

    # pushing a basis onto a nearby subspace along a good complement
    applicable = hausdorff <= 1.0 / (8.0 * root_k) and split.proj_norm <= root_k * (1.0 + SEARCH_TOL)
    note = f"d_H={hausdorff:.6g} proj={split.proj_norm:.6g}"
    pushed = frame.with_basis(_project_along(nearby, split.f, frame.basis))
    pushed = pushed.normalized()
    defect, pushed_defect = orthogonality_defect(frame), orthogonality_defect(pushed)
    report.add(
        "perturbed_defect", case, pushed_defect, 2.0 * k * defect,
        slack=SEARCH_TOL * defect, vacuous=not applicable, note=note,
    )
    pushed_coord = unit_ball_coord_volume(pushed, seed, cfg.target_rel_err)
    log_ratio = abs(math.log(pushed_coord.value) - math.log(coord.value))
    report.add(
        "perturbed_volume", case, log_ratio, 16.0 * k * root_k * hausdorff,
        slack=_log_slack(coord.rel_error, pushed_coord.rel_error), vacuous=not applicable, note=note,
    )
    if hausdorff > 0:
        fitted["perturbed_volume"] = log_ratio / hausdorff

    check_perturbed_splitting(frame, nearby, split.f, case=case, seed=seed, report=report)


def _project_along(onto: Frame, along: Frame, x: np.ndarray) -> np.ndarray:
    w = np.hstack([onto.basis, along.basis])
    coeffs = np.linalg.solve(w, x)
    return onto.basis @ coeffs[: onto.k]


def _merge_fitted(parts: List[Dict[str, float]]) -> Dict[str, float]:
    merged: Dict[str, float] = {}
    for part in parts:
        for key, value in part.items():
            if math.isfinite(value):
                merged[key] = max(merged.get(key, 0.0), value)
    return merged


def verify_section2_bounds(cfg: BatteryConfig) -> Report:
    """Seeded battery over random frames, perturbations and operator pairs."""
    cases = cfg.cases()
    jobs = [lambda spec=spec, k=k, s=s: _inequality_case(spec, k, s, cfg) for spec, k, s in cases]
    results = run_jobs(jobs, cfg.workers)
    report = Report(
        "section2_bounds",
        metadata={"seed": cfg.seed, "cases": cfg.n_cases, "c_k": cfg.c_k, **cfg.metadata},
    )
    for rows, _ in results:
        report.extend(rows)
    report.fitted = _merge_fitted([fitted for _, fitted in results])
    logger.info(
        f"Inequality battery: {len(report.rows)} rows, {len(report.failures)} failures, "
        f"{report.vacuous_count} vacuous"
    )
    return report


def _axioms_case(spec: str, k: int, seed: int, cfg: BatteryConfig) -> List[BoundRow]:
    space = NormedSpace.from_config(parse_space_spec(spec))
    rng = np.random.default_rng(seed)
    case = f"{space.label}/k={k}/seed={seed}"
    report = Report("volume_axioms")
    tol = cfg.target_rel_err
    frame = random_frame(space, k, rng)
    base = unit_ball_coord_volume(frame, seed, tol)

    scale = float(rng.uniform(0.5, 2.0))
    scaled = unit_ball_coord_volume(frame.with_basis(scale * frame.basis), seed, tol)
    # m_E(P[a v]) / m_E(P[v]) = a^k
    scaling_defect = abs(math.log(base.value) - math.log(scaled.value) - k * math.log(scale))
    report.add("scaling", case, scaling_defect, 0.0, slack=_log_slack(base.rel_error, scaled.rel_error) + 1e-9)

    change = np.eye(k) + 0.5 * rng.standard_normal((k, k))
    while abs(np.linalg.det(change)) < 0.2:
        change = np.eye(k) + 0.5 * rng.standard_normal((k, k))
    rebased = unit_ball_coord_volume(frame.with_basis(frame.basis @ change), seed, tol)
    change_defect = abs(
        math.log(base.value) - math.log(rebased.value) - math.log(abs(np.linalg.det(change)))
    )
    report.add("basis_change", case, change_defect, 0.0, slack=_log_slack(base.rel_error, rebased.rel_error) + 1e-9)

    isometry = _random_isometry(space, rng)
    det = det_restricted(isometry, frame, seed, tol)
    report.add("isometry", case, abs(det.log_value), 0.0, slack=SIGMAS * det.std_error_log + 1e-9)
    return report.rows


def _random_isometry(space: NormedSpace, rng: np.random.Generator) -> np.ndarray:
    """Signed coordinate permutation for unweighted l^p, sign flips otherwise."""
    signs = np.diag(rng.choice([-1.0, 1.0], size=space.dim))
    if space.kind == "lp":
        return signs @ np.eye(space.dim)[rng.permutation(space.dim)]
    return signs


def verify_volume_axioms(cfg: BatteryConfig) -> Report:
    cases = cfg.cases()
    jobs = [lambda spec=spec, k=k, s=s: _axioms_case(spec, k, s, cfg) for spec, k, s in cases]
    report = Report("volume_axioms", metadata={"seed": cfg.seed, "cases": cfg.n_cases, **cfg.metadata})
    for rows in run_jobs(jobs, cfg.workers):
        report.extend(rows)
    return report


def verify_john_sandwich(
    spaces: Tuple[str, ...] = DEFAULT_BATTERY_SPACES + ("lp:3:4", "weighted_l1:1,2,3,0.5"),
    max_k: int = 4,
    n_vectors: int = 10_000,
    seed: int = DEFAULT_SEED,
    workers: int = 1,
) -> Report:
    """Fresh random vectors against ||v|| <= (1+eps)sqrt(k)|v| and |v| <= (1+eps)sqrt(k)||v||."""

    def one(spec: str, k: int, case_seed: int) -> List[BoundRow]:
        space = NormedSpace.from_config(parse_space_spec(spec))
        if k > space.dim:
            return []
        rng = np.random.default_rng(case_seed)
        frame = random_frame(space, k, rng)
        model = john_model(frame)
        coeffs = rng.standard_normal((n_vectors, k))
        body = frame.coeff_norm(coeffs)
        ellipsoid = model.norm(coeffs)
        bound = (1.0 + model.mvee_tol) * math.sqrt(k)
        case = f"{space.label}/k={k}"
        report = Report("john_sandwich")
        report.add("john_upper", case, float(np.max(ellipsoid / body)), bound)
        report.add("john_lower", case, float(np.max(body / ellipsoid)), bound)
        report.add("john_outer", case, float(np.max(ellipsoid / body)), 1.0 + model.mvee_tol)
        return report.rows

    combos = [(spec, k) for spec in spaces for k in range(1, max_k + 1)]
    seeds = spawn_seeds(seed, len(combos))
    jobs = [lambda spec=spec, k=k, s=s: one(spec, k, s) for (spec, k), s in zip(combos, seeds)]
    report = Report("john_sandwich", metadata={"seed": seed, "n_vectors": n_vectors})
    for rows in run_jobs(jobs, workers):
        report.extend(rows)
    return report
