"""Command-line surface. Library errors become exit codes only in :func:`run`."""

from __future__ import annotations

import logging
import os
import re
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import typer

try:
    from typer._click.exceptions import UsageError
except ImportError:  # typer releases that still depend on click directly
    from click.exceptions import UsageError  # type: ignore[no-redef]

from .bounds import BatteryConfig, verify_section2_bounds, verify_volume_axioms
from .cocycle import iterate, lyapunov_spectrum, orbit, oseledets_frames
from .config import (
    BURN_IN,
    CHART_RADIUS,
    DEFAULT_SEED,
    DISTORTION_TOL,
    LEAF_HISTORY_STEPS,
    TARGET_REL_ERR,
    RunConfig,
    SystemConfig,
    build_run_config,
    load_config_file,
    parse_space_spec,
    parse_system_spec,
)
from .errors import EXIT_INPUT, EXIT_OK, InputError, LabError, VerificationFailure
from .geometry import complement, gap_distances, projection_and_angle
from .manifolds import (
    distortion_table,
    leaf_invariance_residual,
    leaf_records,
    leaf_run,
    plot_leaf,
    pushforward_density,
)
from .report import Report, format_float, plot_series, table_to_csv, write_report
from .space import Frame, NormedSpace
from .srb import density_report, empirical_conditional, entropy_formula_report, plot_conditional, srb_density
from .suite import entropy_unstable_dimension, run_suite
from .systems import system_from_config
from .volume import det_restricted, induced_volume_parallelepiped, orthogonality_defect, unit_ball_coord_volume

logger = logging.getLogger(__name__)

app = typer.Typer(
    name="srblab",
    help="Induced volumes, Lyapunov exponents, unstable manifolds and SRB densities on normed spaces.",
    add_completion=False,
    no_args_is_help=True,
    rich_markup_mode="rich",
)

SpaceOpt = typer.Option(None, "--space", help="Space spec, e.g. lp:inf:2 or weighted_sup:1,0.5")
SystemOpt = typer.Option(None, "--system", help="System spec, e.g. solenoid:2,0.25,0.05@lp:2:3")
ConfigOpt = typer.Option(None, "--config", help="YAML run configuration")
SeedOpt = typer.Option(None, "--seed", help=f"Master seed (default {DEFAULT_SEED})")
StepsOpt = typer.Option(None, "--steps", help="Orbit length or sample count")
TolOpt = typer.Option(None, "--tol", help="Target relative error or tolerance")
OutOpt = typer.Option(None, "--out", help="Directory for CSV/JSON/SVG artifacts")
FormatOpt = typer.Option(None, "--format", help="csv, json or both")
PlotOpt = typer.Option(None, "--plot/--no-plot", help="Also write SVG plots")
WorkersOpt = typer.Option(None, "--workers", help="Worker threads for independent cases")


@app.callback()
def main(
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging"),
    quiet: bool = typer.Option(False, "--quiet", "-q", help="Warnings and errors only"),
) -> None:
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    elif quiet:
        logging.getLogger().setLevel(logging.WARNING)


def _settings(command: str, config: Optional[str], space: Optional[str] = None, system: Optional[str] = None,
              **flags: Any) -> RunConfig:
    file_values = load_config_file(config) if config else {}
    cli_values: Dict[str, Any] = {"command": command, **flags}
    if space:
        cli_values["space"] = parse_space_spec(space)
    if system:
        cli_values["system"] = parse_system_spec(system)
    return build_run_config(file_values, cli_values)


def _space(cfg: RunConfig) -> NormedSpace:
    if cfg.space is None:
        raise InputError("this command needs --space (or a space entry in the config file)")
    return NormedSpace.from_config(cfg.space)


def _system(cfg: RunConfig):
    if cfg.system is None:
        raise InputError("this command needs --system (or a system entry in the config file)")
    system_cfg: SystemConfig = cfg.system
    if system_cfg.space is None and cfg.space is not None:
        system_cfg = system_cfg.model_copy(update={"space": cfg.space})
    return system_from_config(system_cfg, seed=cfg.seed)


def _numbers(text: str) -> List[float]:
    try:
        return [float(part) for part in re.split(r"[\s,]+", text.strip()) if part]
    except ValueError as e:
        raise InputError(f"Could not parse numbers from '{text}': {e}") from e


def parse_matrix(text: str, dim: int) -> np.ndarray:
    """Row-major entries separated by spaces or commas."""
    values = _numbers(text)
    if len(values) != dim * dim:
        raise InputError(f"--matrix needs {dim * dim} entries for a {dim}x{dim} map, got {len(values)}")
    return np.asarray(values).reshape(dim, dim)


def parse_basis(text: str, dim: int) -> np.ndarray:
    """Columns as ``e1,e3`` or as explicit vectors ``1,0,0;0,1,1``."""
    if re.fullmatch(r"\s*e\d+(\s*,\s*e\d+)*\s*", text):
        indices = [int(part.strip()[1:]) for part in text.split(",")]
        if any(i < 1 or i > dim for i in indices):
            raise InputError(f"basis vectors must be among e1..e{dim}, got {text}")
        return np.eye(dim)[:, [i - 1 for i in indices]]
    columns = [_numbers(part) for part in text.split(";") if part.strip()]
    if not columns or any(len(c) != dim for c in columns):
        raise InputError(f"each basis vector needs {dim} entries, got '{text}'")
    return np.asarray(columns).T


def _emit(report: Report, cfg: RunConfig, stem: str) -> None:
    if cfg.out:
        write_report(report, cfg.out, stem, cfg.format)


def _require_pass(report: Report) -> None:
    if report.failures:
        first = report.failures[0]
        raise VerificationFailure(
            f"{report.title}: {len(report.failures)} failing row(s), first {first.statement} [{first.case}]",
            failures=len(report.failures),
        )


@app.command()
def volume(
    basis: str = typer.Option(..., "--basis", help="Frame columns, e.g. e1,e2"),
    space: Optional[str] = SpaceOpt, config: Optional[str] = ConfigOpt, seed: Optional[int] = SeedOpt,
    tol: Optional[float] = TolOpt, out: Optional[str] = OutOpt, format: Optional[str] = FormatOpt,
) -> None:
    """Unit-ball coordinate volume, induced parallelepiped volume and orthogonality defect."""
    cfg = _settings("volume", config, space, seed=seed, tol=tol, out=out, format=format)
    ambient = _space(cfg)
    frame = Frame(ambient, parse_basis(basis, ambient.dim))
    target = cfg.tol or TARGET_REL_ERR
    coord = unit_ball_coord_volume(frame, cfg.seed, target)
    induced = induced_volume_parallelepiped(frame, cfg.seed, target)
    defect = orthogonality_defect(frame)
    typer.echo(f"unit_ball_coord_volume {format_float(coord.value)} +/- {format_float(coord.std_error)}")
    typer.echo(f"induced_volume {format_float(induced.value)} +/- {format_float(induced.std_error)}")
    typer.echo(f"orthogonality_defect {format_float(defect)}")
    report = Report("volume", metadata={"space": ambient.label, "seed": cfg.seed, "k": frame.k})
    report.values.update({"unit_ball_coord_volume": coord.value, "coord_std_error": coord.std_error,
                          "induced_volume": induced.value, "induced_std_error": induced.std_error,
                          "orthogonality_defect": defect, "method": coord.method})
    _emit(report, cfg, "volume")


@app.command()
def det(
    matrix: str = typer.Option(..., "--matrix", help="Row-major entries, e.g. \"2 0 0 3\""),
    basis: str = typer.Option(..., "--basis", help="Frame columns, e.g. e1,e2"),
    space: Optional[str] = SpaceOpt, config: Optional[str] = ConfigOpt, seed: Optional[int] = SeedOpt,
    tol: Optional[float] = TolOpt, out: Optional[str] = OutOpt, format: Optional[str] = FormatOpt,
) -> None:
    """det(A|E) for the span E of the basis."""
    cfg = _settings("det", config, space, seed=seed, tol=tol, out=out, format=format)
    ambient = _space(cfg)
    a = parse_matrix(matrix, ambient.dim)
    result = det_restricted(a, Frame(ambient, parse_basis(basis, ambient.dim)), cfg.seed, cfg.tol or TARGET_REL_ERR)
    typer.echo(format_float(result.value))
    report = Report("det", metadata={"space": ambient.label, "seed": cfg.seed})
    report.values.update({"value": result.value, "log_value": result.log_value, "std_error_log": result.std_error_log,
                          "method": result.method, "degenerate": result.degenerate})
    _emit(report, cfg, "det")


@app.command()
def geometry(
    basis: str = typer.Option(..., "--basis", help="Columns of E"),
    other: Optional[str] = typer.Option(None, "--other", help="Columns of a second subspace E'"),
    along: Optional[str] = typer.Option(None, "--complement", help="Columns of a complement F of E"),
    space: Optional[str] = SpaceOpt, config: Optional[str] = ConfigOpt, out: Optional[str] = OutOpt,
    format: Optional[str] = FormatOpt,
) -> None:
    """Gap distances, projection norm and angle of a splitting."""
    cfg = _settings("geometry", config, space, out=out, format=format)
    ambient = _space(cfg)
    e = Frame(ambient, parse_basis(basis, ambient.dim))
    split = projection_and_angle(e, Frame(ambient, parse_basis(along, ambient.dim))) if along else complement(e)
    report = Report("geometry", metadata={"space": ambient.label, "seed": cfg.seed})
    report.values.update({"proj_norm": split.proj_norm, "angle": split.angle})
    typer.echo(f"proj_norm {format_float(split.proj_norm)}")
    typer.echo(f"angle {format_float(split.angle)}")
    if other:
        delta_a, d_h = gap_distances(e, Frame(ambient, parse_basis(other, ambient.dim)))
        report.values.update({"delta_a": delta_a, "d_H": d_h})
        typer.echo(f"delta_a {format_float(delta_a)}")
        typer.echo(f"d_H {format_float(d_h)}")
    _emit(report, cfg, "geometry")


@app.command("verify-sec2")
def verify_sec2(
    cases: int = typer.Option(30, "--cases", help="Cases per (space, k) pair"),
    config: Optional[str] = ConfigOpt, seed: Optional[int] = SeedOpt, tol: Optional[float] = TolOpt,
    out: Optional[str] = OutOpt, format: Optional[str] = FormatOpt, workers: Optional[int] = WorkersOpt,
) -> None:
    """Volume axioms and the parallelepiped, determinant and perturbation inequality battery."""
    cfg = _settings("verify-sec2", config, seed=seed, tol=tol, out=out, format=format, workers=workers)
    battery = BatteryConfig(n_cases=cases, seed=cfg.seed, target_rel_err=cfg.tol or TARGET_REL_ERR, workers=cfg.workers)
    reports = [verify_volume_axioms(battery), verify_section2_bounds(battery)]
    for report in reports:
        typer.echo(f"{report.title}: {len(report.rows)} rows, {len(report.failures)} failures, "
                   f"{report.vacuous_count} vacuous")
        for key in sorted(report.fitted):
            typer.echo(f"  fitted {key} = {format_float(float(report.fitted[key]))}")
        _emit(report, cfg, report.title)
    for report in reports:
        _require_pass(report)


@app.command()
def lyap(
    system: Optional[str] = SystemOpt, space: Optional[str] = SpaceOpt, config: Optional[str] = ConfigOpt,
    seed: Optional[int] = SeedOpt, steps: Optional[int] = StepsOpt, out: Optional[str] = OutOpt,
    format: Optional[str] = FormatOpt, plot: Optional[bool] = PlotOpt,
    k: Optional[int] = typer.Option(None, "--k", help="Number of exponents"),
    rebase_every: int = typer.Option(1, "--rebase-every", help="Steps between QR re-basings"),
) -> None:
    """Lyapunov exponents as determinant growth rates."""
    cfg = _settings("lyap", config, space, system, seed=seed, steps=steps, out=out, format=format, plot=plot)
    smooth = _system(cfg)
    spectrum = lyapunov_spectrum(smooth, n_steps=cfg.steps or 10_000, k=k, rebase_every=rebase_every, seed=cfg.seed)
    typer.echo(", ".join(f"{v:.6f}" for v in spectrum.raw_exponents))
    report = Report("lyapunov", metadata={"system": smooth.kind, "space": smooth.space.label, "seed": cfg.seed})
    report.values.update(spectrum.to_dict())
    _emit(report, cfg, "lyap")
    if cfg.plot and cfg.out:
        series = [(f"lambda{j + 1}", spectrum.trace_steps, spectrum.traces[:, j]) for j in range(spectrum.traces.shape[1])]
        plot_series(os.path.join(cfg.out, "lyap_traces.svg"), series, f"running exponents, {smooth.kind}",
                    "steps", "exponent")


@app.command()
def unstable(
    system: Optional[str] = SystemOpt, space: Optional[str] = SpaceOpt, config: Optional[str] = ConfigOpt,
    seed: Optional[int] = SeedOpt, steps: Optional[int] = StepsOpt, out: Optional[str] = OutOpt,
    format: Optional[str] = FormatOpt, plot: Optional[bool] = PlotOpt,
    radius: float = typer.Option(CHART_RADIUS, "--radius", help="Chart radius"),
    nodes: Optional[int] = typer.Option(None, "--nodes", help="Grid nodes per unstable axis (odd)"),
) -> None:
    """Local unstable manifold at the end of a stored orbit."""
    cfg = _settings("unstable", config, space, system, seed=seed, steps=steps, out=out, format=format, plot=plot)
    smooth = _system(cfg)
    run = leaf_run(smooth, n_steps=cfg.steps or LEAF_HISTORY_STEPS, seed=cfg.seed, radius=radius, n_nodes=nodes)
    leaf = run.leaf
    residual = leaf_invariance_residual(leaf)
    typer.echo(f"lipschitz {format_float(leaf.lipschitz())}")
    typer.echo(f"invariance_residual {format_float(residual)}")
    typer.echo(f"contraction {format_float(leaf.contraction)}")
    report = Report("unstable", metadata={"system": smooth.kind, "space": smooth.space.label, "seed": cfg.seed,
                                          "index": leaf.chart.index, "radius": radius})
    report.add("leaf.lipschitz", smooth.kind, leaf.lipschitz(), 0.1)
    report.add("leaf.invariance_residual", smooth.kind, residual, 1e-4)
    records = leaf_records(leaf)
    for record, density in zip(records, pushforward_density(leaf, cfg.seed)):
        record["pushforward_density"] = float(density)
    report.tables["leaf"] = records
    _emit(report, cfg, "unstable")
    if cfg.plot and cfg.out and leaf.m_u == 1:
        plot_leaf(os.path.join(cfg.out, "leaf.svg"), leaf)


@app.command()
def distortion(
    system: Optional[str] = SystemOpt, space: Optional[str] = SpaceOpt, config: Optional[str] = ConfigOpt,
    seed: Optional[int] = SeedOpt, steps: Optional[int] = StepsOpt, tol: Optional[float] = TolOpt,
    out: Optional[str] = OutOpt, format: Optional[str] = FormatOpt, plot: Optional[bool] = PlotOpt,
) -> None:
    """Distortion products log Delta along the leaf lineage."""
    cfg = _settings("distortion", config, space, system, seed=seed, steps=steps, tol=tol, out=out, format=format,
                    plot=plot)
    smooth = _system(cfg)
    run = leaf_run(smooth, n_steps=cfg.steps or LEAF_HISTORY_STEPS, seed=cfg.seed)
    table = distortion_table(run.leaf, tol=cfg.tol or DISTORTION_TOL, seed=cfg.seed)
    typer.echo(f"depth {table.depth}")
    typer.echo(f"rho {format_float(table.rho)}")
    typer.echo(f"r_squared {format_float(table.r_squared)}")
    typer.echo(f"fit_depth {table.fit_depth}")
    typer.echo(f"lipschitz {format_float(table.lipschitz)}")
    report = Report("distortion", metadata={"system": smooth.kind, "space": smooth.space.label, "seed": cfg.seed})
    report.values.update({"rho": table.rho, "r_squared": table.r_squared, "tail_bound": table.tail_bound,
                          "lipschitz": table.lipschitz, "depth": table.depth, "fit_depth": table.fit_depth,
                          "exact": table.exact})
    report.tables["leaf"] = leaf_records(run.leaf, table)
    report.tables["increments"] = table.records()
    _emit(report, cfg, "distortion")
    if cfg.plot and cfg.out and table.depth:
        k = np.arange(1, table.depth + 1)
        plot_series(os.path.join(cfg.out, "distortion.svg"),
                    [("log10 max increment", k, np.log10(np.maximum(table.increments, 1e-300)))],
                    "distortion increments", "N", "log10 |log Delta_N - log Delta_N-1|")


@app.command("srb-density")
def srb_density_command(
    system: Optional[str] = SystemOpt, space: Optional[str] = SpaceOpt, config: Optional[str] = ConfigOpt,
    seed: Optional[int] = SeedOpt, steps: Optional[int] = StepsOpt, out: Optional[str] = OutOpt,
    format: Optional[str] = FormatOpt, plot: Optional[bool] = PlotOpt,
    bins: int = typer.Option(64, "--bins", help="Histogram bins over the leaf"),
) -> None:
    """Predicted SRB conditional density q on a leaf against an orbit histogram."""
    cfg = _settings("srb-density", config, space, system, seed=seed, steps=steps, out=out, format=format, plot=plot)
    smooth = _system(cfg)
    run = leaf_run(smooth, seed=cfg.seed)
    density = srb_density(distortion_table(run.leaf, seed=cfg.seed), cfg.seed)
    report = density_report(density)
    report.metadata.update({"system": smooth.kind, "space": smooth.space.label, "seed": cfg.seed})
    result = empirical_conditional(smooth, density, cfg.steps or 1_000_000, bins=bins, seed=cfg.seed)
    typer.echo(f"hits {result.hits}")
    typer.echo(f"l1 {format_float(result.l1)}")
    report.values.update({"l1": result.l1, "hits": result.hits, "n_orbit": result.n_orbit})
    report.tables["density"] = density.records()
    report.tables["histogram"] = result.records()
    _emit(report, cfg, "srb_density")
    if cfg.plot and cfg.out and density.leaf.m_u == 1:
        plot_conditional(os.path.join(cfg.out, "srb_density.svg"), density, result)


@app.command("entropy-check")
def entropy_check(
    system: Optional[str] = SystemOpt, space: Optional[str] = SpaceOpt, config: Optional[str] = ConfigOpt,
    seed: Optional[int] = SeedOpt, steps: Optional[int] = StepsOpt, out: Optional[str] = OutOpt,
    format: Optional[str] = FormatOpt,
) -> None:
    """Entropy formula: positive exponents and the orbit average of log J^u against the known entropy."""
    cfg = _settings("entropy-check", config, space, system, seed=seed, steps=steps, out=out, format=format)
    smooth = _system(cfg)
    spectrum = lyapunov_spectrum(smooth, n_steps=cfg.steps or 100_000, seed=cfg.seed)
    m_u = entropy_unstable_dimension(smooth)
    frames = None
    if m_u:
        history = orbit(smooth, iterate(smooth, smooth.initial_point, BURN_IN), 400)
        frames = oseledets_frames(history, m_u, cfg.seed)
    report = entropy_formula_report(smooth, spectrum, frames, cfg.seed)
    for key in sorted(report.values):
        typer.echo(f"{key} {format_float(report.values[key])}")
    _emit(report, cfg, "entropy")
    _require_pass(report)


@app.command()
def suite(
    level: str = typer.Option("quick", "--level", help="quick or full"),
    config: Optional[str] = ConfigOpt, seed: Optional[int] = SeedOpt, out: Optional[str] = OutOpt,
    format: Optional[str] = FormatOpt, workers: Optional[int] = WorkersOpt,
) -> None:
    """Run every invariant battery; exit 3 when any row fails."""
    cfg = _settings("suite", config, seed=seed, out=out, format=format, workers=workers, level=level)
    reports = run_suite(cfg.level, cfg.seed, cfg.workers)
    failures = 0
    for n, report in enumerate(reports):
        typer.echo(f"{report.title}: {len(report.rows)} rows, {len(report.failures)} failures")
        failures += len(report.failures)
        _emit(report, cfg, f"{n:02d}_{report.title}")
    if cfg.out:
        summary = [{"report": r.title, "rows": len(r.rows), "failures": len(r.failures), "vacuous": r.vacuous_count}
                   for r in reports]
        with open(os.path.join(cfg.out, "summary.csv"), "w", newline="") as f:
            f.write(table_to_csv(summary, {"seed": cfg.seed, "level": cfg.level}))
    if failures:
        raise VerificationFailure(f"suite ({cfg.level}) has {failures} failing row(s)", failures=failures)


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Run the CLI and return its exit code: 0 ok, 1 input, 2 numerical, 3 verification."""
    try:
        result = app(args=list(argv) if argv is not None else None, standalone_mode=False)
    except LabError as e:
        logger.error(f"{type(e).__name__}: {e.detail}")
        return e.exit_code
    except UsageError as e:
        e.show()
        return EXIT_INPUT
    except typer.Abort:
        logger.error("Aborted")
        return EXIT_INPUT
    return result if isinstance(result, int) else EXIT_OK
