"""The invariant batteries behind ``srblab suite``.

``quick`` keeps every battery but shrinks case counts and orbit lengths so the suite
finishes in well under a minute; ``full`` runs the acceptance-scale parameters.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Tuple

import numpy as np

from .bounds import BatteryConfig, verify_john_sandwich, verify_section2_bounds, verify_volume_axioms
from .cocycle import (
    SmoothSystem,
    chart_quality,
    iterate,
    kuratowski_growth_bound,
    lyapunov_spectrum,
    orbit,
    oseledets_frames,
)
from .config import BURN_IN, DEFAULT_SEED, parse_space_spec
from .errors import InputError
from .manifolds import (
    LeafRun,
    backward_shooting_report,
    change_of_variables_report,
    chart_frame,
    chart_validation_report,
    distortion_multiplicativity,
    distortion_table,
    expansion_report,
    graph_contraction_report,
    leaf_invariance_residual,
    leaf_run,
)
from .report import Report
from .space import Frame, NormedSpace
from .srb import (
    density_report,
    empirical_conditional,
    entropy_formula_report,
    flat_histogram_report,
    l1_trend_report,
    srb_density,
    transformation_rule_report,
)
from .systems import build_test_system
from .tasks import spawn_seeds
from .volume import unit_ball_coord_volume

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SuiteLevel:
    axiom_cases: int
    battery_cases: int
    john_vectors: int
    target_rel_err: float
    lyap_steps: int
    solenoid_steps: int
    orbit_sizes: Tuple[int, ...]
    l1_max: float


LEVELS: Dict[str, SuiteLevel] = {
    "quick": SuiteLevel(8, 4, 1_000, 1e-2, 2_000, 10_000, (100_000, 300_000), 0.15),
    "full": SuiteLevel(200, 67, 10_000, 1e-3, 20_000, 100_000, (100_000, 1_000_000, 10_000_000), 0.05),
}

ANALYTIC_BALLS = (("lp:inf:2", 4.0), ("lp:1:2", 2.0), ("lp:2:2", math.pi))


def analytic_volumes_report(seed: int, target_rel_err: float) -> Report:
    """Coordinate volumes of the unit balls of the plane against 4, 2 and pi."""
    report = Report("analytic_volumes", metadata={"seed": seed, "target_rel_err": target_rel_err})
    for spec, exact in ANALYTIC_BALLS:
        space = NormedSpace.from_config(parse_space_spec(spec))
        est = unit_ball_coord_volume(Frame(space, np.eye(2)), seed, target_rel_err)
        report.add("unit_ball_volume", space.label, abs(est.value - exact), 3.0 * est.std_error,
                   note=f"estimate {est.value:.6f}")
    return report


def lyapunov_report(level: SuiteLevel, seed: int) -> Report:
    """Exact exponents of linear cocycles, solenoid exponents and the nested-frame j-sums."""
    report = Report("lyapunov", metadata={"seed": seed, "solenoid_steps": level.solenoid_steps})
    diag = build_test_system("diag_linear", {"diag": [2.0, 0.5]}, seed=seed)
    spectrum = lyapunov_spectrum(diag, n_steps=level.lyap_steps, seed=seed)
    for j, exact in enumerate((math.log(2.0), -math.log(2.0))):
        report.add("lyapunov.exact", f"diag_linear/lambda{j + 1}", abs(spectrum.raw_exponents[j] - exact), 1e-9)

    cat = build_test_system("linear", {"matrix": [[2.0, 1.0], [1.0, 1.0]]}, space=NormedSpace.lp(2, 2.0), seed=seed)
    spectrum = lyapunov_spectrum(cat, n_steps=level.lyap_steps, seed=seed)
    report.add("lyapunov.unimodular_sum", "linear/l2", abs(float(spectrum.partial_sums[-1])), 1e-9)

    solenoid = build_test_system("solenoid", seed=seed)
    spectrum = lyapunov_spectrum(solenoid, n_steps=level.solenoid_steps, seed=seed)
    tol = 1e-3 if level.solenoid_steps >= 100_000 else 5e-3
    for j, exact in enumerate(solenoid.known_answers.exponents or ()):
        report.add("lyapunov.known", f"solenoid/lambda{j + 1}", abs(spectrum.raw_exponents[j] - exact), tol)
    report.values["solenoid_exponents"] = spectrum.raw_exponents.tolist()

    for name, system in (("solenoid", solenoid), ("galerkin", build_test_system("dissipative_galerkin", seed=seed))):
        nested = lyapunov_spectrum(system, n_steps=level.lyap_steps, seed=seed, k=2)
        for j in (1, 2):
            alone = lyapunov_spectrum(system, n_steps=level.lyap_steps, seed=seed, k=j)
            sigma = math.hypot(nested.partial_sum_errors[j - 1], alone.partial_sum_errors[-1])
            report.add("lyapunov.nested_j_sum", f"{name}/j={j}",
                       abs(nested.partial_sums[j - 1] - alone.partial_sums[-1]), 3.0 * sigma, slack=1e-9)

    galerkin = build_test_system("dissipative_galerkin", seed=seed)
    history = orbit(galerkin, iterate(galerkin, galerkin.initial_point, 100), 200)
    report.add("kuratowski_growth", "galerkin", kuratowski_growth_bound(history), 0.0)
    return report


def _leaf_systems(seed: int) -> List[Tuple[str, SmoothSystem]]:
    return [
        ("solenoid/l_inf", build_test_system("solenoid", seed=seed)),
        ("solenoid/l2", build_test_system("solenoid", space=NormedSpace.lp(3, 2.0), seed=seed)),
        ("galerkin", build_test_system("dissipative_galerkin", seed=seed)),
        ("diag_linear", build_test_system("diag_linear", {"diag": [2.0, 0.5]}, seed=seed)),
        ("toral", build_test_system("toral_automorphism", seed=seed)),
    ]


def manifold_report(name: str, run: LeafRun, seed: int, full: bool) -> Report:
    """Graph-transform, leaf and distortion invariants for one converged leaf."""
    leaf = run.leaf
    system = leaf.chart.system
    report = Report(f"manifolds_{name.replace('/', '_')}", metadata={"system": name, "seed": seed,
                                                                       "index": leaf.chart.index})
    report.add("leaf.lipschitz", name, leaf.lipschitz(), 0.1)
    report.add("leaf.invariance_residual", name, leaf_invariance_residual(leaf), 1e-4)
    report.add("leaf.passes_through_base", name, float(system.space.norm(leaf.g(np.zeros(leaf.m_u)) @ leaf.chart.stable.T)), 1e-8)
    if system.kind in ("diag_linear", "linear", "toral_automorphism"):
        report.add("leaf.linear_flat", name, leaf.sup_norm(), 1e-12)
    index = leaf.chart.index
    source = chart_frame(run.frames, index - 1, leaf.radius)
    report.extend(graph_contraction_report(source, leaf.chart, seed=seed).rows)
    report.extend(expansion_report(run.frames, leaf, run.params).rows)
    quality = chart_quality(run.frames, run.params, start=index - 10, n_points=8, seed=seed)
    l_tilde = float(quality.l_tilde.max())
    report.extend(chart_validation_report(run.frames, index - 5, run.params, leaf.radius, l_tilde, seed=seed).rows)
    report.extend(change_of_variables_report(leaf, n_regions=50 if full else 10, seed=seed).rows)
    report.extend(backward_shooting_report(run.frames, leaf).rows)

    table = distortion_table(leaf, seed=seed)
    report.add("distortion.reference", name, float(np.abs(table.log_partial[:, table.reference]).max()), 0.0)
    report.add("distortion.multiplicative", name,
               distortion_multiplicativity(table, max(1, table.depth // 2)) if table.depth > 1 else 0.0, 1e-12)
    if system.kind in ("diag_linear", "linear", "toral_automorphism"):
        report.add("distortion.linear_unity", name, float(np.abs(table.log_delta).max()), 1e-12)
    if not table.exact:
        report.add("distortion.rate", name, table.rho, 1.0)
        report.add("distortion.r_squared", name, 0.99, table.r_squared)
    report.values.update({"rho": table.rho, "r_squared": table.r_squared, "lipschitz": table.lipschitz,
                          "depth": table.depth, "fit_depth": table.fit_depth, "contraction": leaf.contraction})
    report.tables["distortion_increments"] = table.records()
    return report


def refinement_report(system: SmoothSystem, seed: int) -> Report:
    """The log Delta Lipschitz constant on grids of 33 and 65 nodes."""
    coarse = distortion_table(leaf_run(system, seed=seed, n_nodes=33).leaf, seed=seed)
    fine = distortion_table(leaf_run(system, seed=seed, n_nodes=65).leaf, seed=seed)
    report = Report("distortion_refinement", metadata={"system": system.kind, "space": system.space.label})
    report.add("distortion.refinement", system.space.label, abs(fine.lipschitz - coarse.lipschitz),
               0.1 * max(fine.lipschitz, coarse.lipschitz), slack=1e-12)
    report.values.update({"coarse": coarse.lipschitz, "fine": fine.lipschitz})
    return report


def entropy_unstable_dimension(system: SmoothSystem) -> int:
    return sum(1 for v in system.known_answers.exponents or () if v > 0)


def srb_report(level: SuiteLevel, seed: int) -> List[Report]:
    """SRB density invariants, orbit-histogram oracles and the entropy formula."""
    reports = []
    solenoid = build_test_system("solenoid", seed=seed)
    run = leaf_run(solenoid, seed=seed)
    density = srb_density(distortion_table(run.leaf, seed=seed), seed)
    reports.append(density_report(density))
    reports.append(transformation_rule_report(density, seed))

    seeds = spawn_seeds(seed, len(level.orbit_sizes) + 1)
    results = [empirical_conditional(solenoid, density, n, seed=s) for n, s in zip(level.orbit_sizes, seeds)]
    oracle = Report("srb_oracle", metadata={"seed": seed, "orbit_sizes": list(level.orbit_sizes)})
    final = results[-1]
    oracle.add("srb.l1_distance", f"n={final.n_orbit}", final.l1, level.l1_max, note=f"hits {final.hits}")
    oracle.tables["histogram"] = final.records()
    reports.append(oracle)
    reports.append(l1_trend_report(results))

    toral = build_test_system("toral_automorphism", seed=seed)
    toral_run = leaf_run(toral, seed=seed)
    toral_density = srb_density(distortion_table(toral_run.leaf, seed=seed), seed)
    flat = empirical_conditional(toral, toral_density, level.orbit_sizes[-1], seed=seeds[-1])
    reports.append(flat_histogram_report(flat))

    entropy = Report("entropy_formula", metadata={"seed": seed})
    for system in (
        solenoid,
        toral,
        build_test_system("dissipative_galerkin", {"nonlinearity_eps": 0.0, "diag": [2.0, 0.4, 0.2, 0.1]}, seed=seed),
        build_test_system("diag_linear", {"diag": [2.0, 0.5]}, seed=seed),
    ):
        spectrum = lyapunov_spectrum(system, n_steps=level.solenoid_steps, seed=seed)
        history = orbit(system, iterate(system, system.initial_point, BURN_IN), 400)
        frames = oseledets_frames(history, entropy_unstable_dimension(system), seed)
        part = entropy_formula_report(system, spectrum, frames, seed)
        entropy.extend(part.rows)
        entropy.values[system.kind] = dict(part.values)
    reports.append(entropy)
    return reports


def run_suite(level: str = "quick", seed: int = DEFAULT_SEED, workers: int = 1) -> List[Report]:
    """Every battery in a fixed order; results do not depend on ``workers``."""
    if level not in LEVELS:
        raise InputError(f"unknown suite level {level}, expected one of {sorted(LEVELS)}")
    cfg = LEVELS[level]
    battery = BatteryConfig(n_cases=cfg.battery_cases, seed=seed, target_rel_err=cfg.target_rel_err,
                            workers=workers, metadata={"level": level})
    axioms = replace(battery, n_cases=cfg.axiom_cases)
    steps: List[Tuple[str, Callable[[], List[Report]]]] = [
        ("volume axioms", lambda: [verify_volume_axioms(axioms)]),
        ("analytic volumes", lambda: [analytic_volumes_report(seed, cfg.target_rel_err)]),
        ("john sandwich", lambda: [verify_john_sandwich(n_vectors=cfg.john_vectors, seed=seed, workers=workers)]),
        ("inequality battery", lambda: [verify_section2_bounds(battery)]),
        ("lyapunov", lambda: [lyapunov_report(cfg, seed)]),
        ("manifolds", lambda: [manifold_report(name, leaf_run(system, seed=seed), seed, level == "full")
                               for name, system in _leaf_systems(seed)]),
        ("refinement", lambda: [refinement_report(build_test_system("solenoid", space=NormedSpace.lp(3, 2.0), seed=seed), seed)]),
        ("srb", lambda: srb_report(cfg, seed)),
    ]
    reports: List[Report] = []
    for title, step in steps:
        logger.info(f"Suite ({level}): running {title}")
        produced = step()
        for report in produced:
            report.metadata.setdefault("seed", seed)
            report.metadata.setdefault("level", level)
        reports.extend(produced)
    failures = sum(len(r.failures) for r in reports)
    logger.info(f"Suite ({level}) finished: {sum(len(r.rows) for r in reports)} rows, {failures} failures")
    return reports
