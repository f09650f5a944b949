"""SRB conditional densities on unstable leaves, their orbit-histogram check and the
entropy formula."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline, RegularGridInterpolator

from .cocycle import LyapunovReport, OseledetsFrames, SmoothSystem, log_unstable_jacobian
from .config import (
    BURN_IN,
    ENTROPY_ROUTE_TOL,
    ENTROPY_TOL,
    HISTOGRAM_BINS,
    MIN_WINDOW_HITS,
    ORBIT_CHAINS,
    SLAB_THICKNESS,
    TARGET_REL_ERR,
)
from .errors import InputError, InsufficientDataError, UnsupportedDimensionError
from .manifolds import DistortionTable, LeafGraph, distortion_table, leaf_volume
from .report import Report, plot_series
from .volume import VolumeEstimate

logger = logging.getLogger(__name__)

FLAT_HISTOGRAM_SIGMAS = 5.0
ROUTE_SAMPLE = 200


def _node_interpolant(leaf: LeafGraph, values: np.ndarray):
    if leaf.m_u == 1:
        spline = CubicSpline(leaf.nodes, values)
        return lambda u: spline(np.asarray(u)[..., 0])
    grid = RegularGridInterpolator(
        (leaf.nodes, leaf.nodes), values.reshape(leaf.nodes.size, leaf.nodes.size),
        method="cubic", bounds_error=False, fill_value=None,
    )
    return lambda u: grid(np.asarray(u))


@dataclass(frozen=True)
class SrbDensity:
    """q = Delta(x', .) / int Delta dnu at the leaf nodes."""

    table: DistortionTable
    q: np.ndarray
    normalizer: VolumeEstimate
    uncertainty: np.ndarray  # absolute, per node

    @property
    def leaf(self) -> LeafGraph:
        return self.table.leaf

    def q_at(self, u: np.ndarray) -> np.ndarray:
        return _node_interpolant(self.leaf, self.q)(u)

    def mass(self, region: Optional[np.ndarray] = None, seed: int = 0) -> VolumeEstimate:
        return leaf_volume(self.leaf, region, weight=self.q_at, seed=seed)

    def bin_masses(self, edges: np.ndarray, seed: int = 0) -> np.ndarray:
        if self.leaf.m_u != 1:
            raise UnsupportedDimensionError("bin masses are defined for m_u = 1")
        return np.array([self.mass(np.array([[a, b]]), seed).value for a, b in zip(edges[:-1], edges[1:])])

    def records(self) -> List[Dict[str, float]]:
        u = self.leaf.grid_points()
        return [
            {**{f"u{a}": float(u[n, a]) for a in range(u.shape[1])},
             "log_delta": float(self.table.log_delta[n]), "q": float(self.q[n]),
             "q_err": float(self.uncertainty[n])}
            for n in range(u.shape[0])
        ]


def srb_density(table: DistortionTable, seed: int = 0, target_rel_err: float = TARGET_REL_ERR) -> SrbDensity:
    leaf = table.leaf
    delta = np.exp(table.log_delta)
    weight = _node_interpolant(leaf, delta)
    normalizer = leaf_volume(leaf, weight=weight, seed=seed, target_rel_err=target_rel_err)
    q = delta / normalizer.value
    rel = 2.0 * table.tail_bound + normalizer.rel_error
    logger.info(
        f"SRB density on the leaf at x_{leaf.chart.index}: normalizer {normalizer.value:.8g} "
        f"(+/- {normalizer.std_error:.2e}), q in [{q.min():.6g}, {q.max():.6g}]"
    )
    return SrbDensity(table, q, normalizer, q * rel)


@dataclass(frozen=True)
class EmpiricalConditional:
    edges: np.ndarray
    histogram: np.ndarray  # normalized hit frequencies per bin
    masses: np.ndarray  # predicted bin masses, normalized
    hits: int
    n_orbit: int
    l1: float

    def records(self) -> List[Dict[str, float]]:
        return [
            {"u_low": float(a), "u_high": float(b), "empirical": float(h), "predicted": float(m)}
            for a, b, h, m in zip(self.edges[:-1], self.edges[1:], self.histogram, self.masses)
        ]


def window_hits(
    system: SmoothSystem,
    leaf: LeafGraph,
    n_orbit: int,
    thickness: float = SLAB_THICKNESS,
    seed: int = 0,
    chains: int = ORBIT_CHAINS,
    burn_in: int = BURN_IN,
) -> np.ndarray:
    """Unstable coordinates of the orbit points in the slab |a| <= r, |S(b - g(a))| <= thickness.

    ``chains`` orbits started near the system's initial point run side by side for
    n_orbit / chains steps each after ``burn_in`` discarded steps.
    """
    if leaf.m_u != 1:
        raise UnsupportedDimensionError("orbit histograms are binned over one unstable coordinate")
    chains = max(1, min(chains, n_orbit))
    rng = np.random.default_rng(seed)
    x = system.wrap(system.initial_point + 1e-3 * rng.standard_normal((chains, system.dim)))
    for _ in range(burn_in):
        x = system.map(x)
    chart = leaf.chart
    space = system.space
    found: List[np.ndarray] = []
    for _ in range(math.ceil(n_orbit / chains)):
        x = system.map(x)
        a, b = chart.coordinates(system.displacement(chart.point, x))
        inside = np.abs(a[:, 0]) <= leaf.radius
        if np.any(inside):
            gap = (b[inside] - leaf.g(a[inside])) @ chart.stable.T
            close = space.norm(gap) <= thickness
            found.append(a[inside][close, 0])
    return np.concatenate(found) if found else np.zeros(0)


def empirical_conditional(
    system: SmoothSystem,
    density: SrbDensity,
    n_orbit: int,
    thickness: float = SLAB_THICKNESS,
    bins: int = HISTOGRAM_BINS,
    seed: int = 0,
    chains: int = ORBIT_CHAINS,
    min_hits: int = MIN_WINDOW_HITS,
) -> EmpiricalConditional:
    """Histogram of orbit hits near the leaf against the bin masses of q dnu."""
    leaf = density.leaf
    hits = window_hits(system, leaf, n_orbit, thickness, seed, chains)
    if hits.size < min_hits:
        raise InsufficientDataError(
            f"only {hits.size} orbit points fell in the window around the leaf (need {min_hits}); "
            "increase --steps or the slab thickness",
            hits=int(hits.size),
        )
    edges = np.linspace(-leaf.radius, leaf.radius, bins + 1)
    counts, _ = np.histogram(hits, bins=edges)
    histogram = counts / counts.sum()
    masses = density.bin_masses(edges, seed)
    masses = masses / masses.sum()
    l1 = float(np.abs(histogram - masses).sum())
    logger.info(f"{hits.size} window hits from {n_orbit} orbit points, L1 distance {l1:.4f}")
    return EmpiricalConditional(edges, histogram, masses, int(hits.size), n_orbit, l1)


def flat_histogram_report(result: EmpiricalConditional, sigmas: float = FLAT_HISTOGRAM_SIGMAS) -> Report:
    """|h_b * bins - 1| within ``sigmas`` counting errors, for leaves with uniform q."""
    bins = result.histogram.size
    bound = sigmas / math.sqrt(result.hits / bins)
    report = Report("flat_histogram", metadata={"hits": result.hits, "bins": bins, "sigmas": sigmas})
    for n, h in enumerate(result.histogram):
        report.add("flat_histogram", f"bin{n}", abs(h * bins - 1.0), bound)
    return report


def l1_trend_report(results: Sequence[EmpiricalConditional], allowed_inversions: int = 1) -> Report:
    """L1 distances should shrink as the orbit grows; ``allowed_inversions`` increases are tolerated."""
    ordered = sorted(results, key=lambda r: r.n_orbit)
    report = Report("l1_trend", metadata={"n_orbit": [r.n_orbit for r in ordered]})
    inversions = 0
    for before, after in zip(ordered[:-1], ordered[1:]):
        if after.l1 > before.l1:
            inversions += 1
        report.add("l1_trend.step", f"{before.n_orbit}->{after.n_orbit}", after.l1, before.l1,
                   vacuous=after.l1 > before.l1 and inversions <= allowed_inversions,
                   note="tolerated inversion" if after.l1 > before.l1 else "")
    report.add("l1_trend.inversions", "all", inversions, allowed_inversions)
    if ordered:
        report.add("l1_trend.overall", "first->last", ordered[-1].l1, ordered[0].l1)
    report.values["l1"] = [r.l1 for r in ordered]
    return report


def transformation_rule_report(density: SrbDensity, seed: int = 0, tol: float = 1e-6) -> Report:
    """log q_{i-1}(f^-1 y) - log J^u(f^-1 y) - log q_i(y) is the same constant at every node."""
    table = density.table
    leaf = table.leaf
    if len(leaf.lineage) < 2:
        raise InputError("the transformation rule needs a lineage of at least two leaves")
    prev = replace(leaf.lineage[0], lineage=leaf.lineage[1:])
    prev_density = srb_density(distortion_table(prev, seed=seed), seed)
    pre = table.params[1]
    gap = np.log(prev_density.q_at(pre)) - table.log_ju[1] - np.log(density.q)
    spread = float(gap.max() - gap.min())
    bound = tol + 2.0 * (table.tail_bound + prev_density.table.tail_bound)
    report = Report("transformation_rule", metadata={"index": leaf.chart.index, "seed": seed})
    report.add("srb.transformation_rule", f"x{leaf.chart.index}", spread, bound,
               note=f"normalizer ratio {math.exp(float(np.mean(gap))):.10g}")
    return report


def density_report(density: SrbDensity) -> Report:
    """q > 0 at every node and int q dnu = 1."""
    report = Report("srb_density", metadata={"index": density.leaf.chart.index})
    report.add("srb.positive", "min_q", -float(density.q.min()), 0.0)
    total = density.mass()
    err = 3.0 * total.std_error + 2.0 * density.table.tail_bound + 1e-9
    report.add("srb.normalized", "total_mass", abs(total.value - 1.0), err)
    report.values.update({"rho": density.table.rho, "r_squared": density.table.r_squared,
                          "fit_depth": density.table.fit_depth,
                          "lipschitz_log_delta": density.table.lipschitz})
    return report


def unstable_jacobian_average(
    frames: OseledetsFrames,
    sample: int = ROUTE_SAMPLE,
    seed: int = 0,
    target_rel_err: float = TARGET_REL_ERR,
) -> tuple[float, float]:
    """Orbit average of log J^u over the usable frame range, with its standard error.

    m_u = 1 uses every index; larger unstable dimensions average ``sample`` evenly
    spaced Monte Carlo determinants.
    """
    indices = np.arange(frames.first, frames.last)
    if frames.m_u > 1 and indices.size > sample:
        indices = np.unique(np.linspace(frames.first, frames.last - 1, sample).astype(int))
    values = np.array([log_unstable_jacobian(frames, int(i), seed, target_rel_err)[0] for i in indices])
    err = float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else math.inf
    return float(values.mean()), err


def entropy_formula_report(
    system: SmoothSystem,
    spectrum: LyapunovReport,
    frames: Optional[OseledetsFrames] = None,
    seed: int = 0,
) -> Report:
    """h(mu) = sum of positive exponents, by the spectrum and by averaging log J^u.

    Rows are vacuous when the natural invariant measure of the system is not SRB; the
    comparison with a known entropy is skipped when none is known.
    """
    known = system.known_answers
    route1 = spectrum.positive_sum
    report = Report(
        "entropy_formula",
        metadata={"kind": system.kind, "space": system.space.label, "seed": seed, "srb": known.srb,
                  "n_steps": spectrum.n_steps},
    )
    report.values["route_exponents"] = route1
    note = "" if known.srb else "natural invariant measure is not SRB"
    if known.entropy is not None:
        report.values["known_entropy"] = known.entropy
        report.add("entropy.exponents_vs_known", system.kind, abs(route1 - known.entropy), ENTROPY_TOL,
                   vacuous=not known.srb, note=note)
    if frames is not None:
        route2, err = unstable_jacobian_average(frames, seed=seed)
        report.values.update({"route_jacobian": route2, "route_jacobian_error": err})
        if known.entropy is not None:
            report.add("entropy.jacobian_vs_known", system.kind, abs(route2 - known.entropy), ENTROPY_TOL,
                       vacuous=not known.srb, note=note)
        report.add("entropy.routes_agree", system.kind, abs(route1 - route2), ENTROPY_ROUTE_TOL,
                   vacuous=not known.srb, note=note)
    if not known.srb:
        logger.info(f"{system.kind}: entropy rows are informative only, {note}")
    return report


def plot_conditional(path: str, density: SrbDensity, result: Optional[EmpiricalConditional] = None) -> str:
    leaf = density.leaf
    series = [("q", leaf.nodes, density.q)]
    steps = []
    if result is not None:
        centers = 0.5 * (result.edges[1:] + result.edges[:-1])
        # frequencies over the mean leaf length of a bin approximate a density against nu
        mean_length = leaf_volume(leaf).value / result.histogram.size
        series.append(("orbit histogram", centers, result.histogram / mean_length))
        steps.append("orbit histogram")
    return plot_series(path, series, f"SRB conditional density at x_{leaf.chart.index}", "u", "q", steps=steps)
