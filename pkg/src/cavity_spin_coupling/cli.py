"""Command-line front end, ``cavity-spin <command> --config run.ini``."""

from argparse import ArgumentParser
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path
import logging
import math
import sys

import numpy as np

from cavity_spin_coupling.__about__ import __version__
from cavity_spin_coupling.config import Command, RunConfig, load_config
from cavity_spin_coupling.constants import MHZ
from cavity_spin_coupling.errors import (
    BranchResolutionError,
    ConfigError,
    GridError,
    NoTransitionError,
    ParameterError,
    SingularSystemError,
    SpectrumFormatError,
)
from cavity_spin_coupling.estimation.engine import FitResult
from cavity_spin_coupling.estimation.fits import (
    MAP_PARAMETERS,
    CouplingVsN,
    fit_dispersive_track,
    fit_full_s11_map,
    fit_kappa_lorentzian,
    fit_rabi_branches,
    seed_map_parameters,
    sqrtN_regression,
)
from cavity_spin_coupling.estimation.profile import (
    PositionProfile,
    SinusoidProfile,
    average_coupling_over_length,
    fit_position_sinusoid,
)
from cavity_spin_coupling.estimation.tracks import (
    DipTrack,
    LinewidthTrack,
    extract_dip_track,
    extract_linewidth_track,
)
from cavity_spin_coupling.io import (
    SCALE_PREFIX,
    ReportTable,
    generate_synthetic,
    ingest_spectrum_csv,
    read_coupling_vs_n_csv,
    read_dip_track_csv,
    read_kappa_csv,
    read_position_csv,
    write_dip_track_csv,
    write_linewidth_csv,
    write_spectrum_csv,
)
from cavity_spin_coupling.model import (
    dispersive_shift,
    kappa_broadening,
    polarized_spin_count,
    rabi_branches,
    single_spin_coupling_estimate,
)
from cavity_spin_coupling.plotting import Overlay, Plottable, PlotStyle, emit_plot, sinusoid_overlay
from cavity_spin_coupling.provenance import Program, RunOutcome, playback, recorded
from cavity_spin_coupling.splitting import (
    ThresholdScan,
    asymptotic_threshold_ratio,
    count_minima_on_resonance,
    derive_quantities,
    exact_threshold_ratio,
    merge_point_scan,
    scan_minima_counts,
)

logger = logging.getLogger(__name__)

PROG = "cavity-spin"
DESCRIPTION = "Simulate and fit reflection spectra of a microwave cavity coupled to a spin ensemble"
PLAYBACK = "playback"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NOT_CONVERGED = 4
EXIT_INTERNAL = 5

DATA_ERRORS = (
    SpectrumFormatError,
    GridError,
    BranchResolutionError,
    ParameterError,
    NoTransitionError,
)

COMMAND_HELP = {
    Command.SIMULATE: "Simulate a reflection map with optional noise",
    Command.FIT_DISPERSIVE: "Fit the dispersive cavity shift to a single-dip track",
    Command.FIT_KAPPA: "Fit the spin-broadened cavity linewidth versus field",
    Command.FIT_BRANCHES: "Fit both branches of an anticrossing",
    Command.FIT_MAP: "Fit the reflection model to every pixel of a map",
    Command.THRESHOLD_SCAN: "Locate the coupling where the on-resonance dips merge",
    Command.NSCALE: "Fit the collective coupling versus the square root of the spin number",
    Command.POSITION: "Fit coupling versus sample position and average it over a sample",
}


@dataclass
class _Run:
    """Collects what a command reports and writes."""

    config: RunConfig
    report: ReportTable
    outputs: list[Path] = field(default_factory=list[Path])
    fits: list[FitResult] = field(default_factory=list[FitResult])

    @property
    def directory(self) -> Path:
        return self.config.io.output_dir

    def fitted(self, result: FitResult, provenance: str) -> FitResult:
        self.fits.append(result)
        self.report.add_fit(result, provenance)
        return result

    def plot(self, data: Plottable, name: str, overlays: list[Overlay] | None = None) -> None:
        if self.config.io.plot:
            style = PlotStyle(title=self.config.title, overlays=overlays or [])
            self.outputs.append(emit_plot(data, self.directory / name, style))


def _is_spectrum_file(path: Path) -> bool:
    with open(path, encoding="utf-8") as handle:
        return handle.readline().startswith(SCALE_PREFIX)


def _input(config: RunConfig) -> Path:
    if config.io.input is None:
        raise ConfigError(f"{config.command} needs [io] input")
    return config.io.input


def _load_track(run: _Run, expect_branches: int) -> DipTrack:
    path = _input(run.config)
    if not _is_spectrum_file(path):
        return read_dip_track_csv(path)
    track = extract_dip_track(ingest_spectrum_csv(path), expect_branches=expect_branches)
    run.outputs.append(write_dip_track_csv(track, run.directory / "dip_track.csv"))
    return track


def _field_span(field_t: np.ndarray, points: int = 400) -> np.ndarray:
    return np.linspace(field_t.min(), field_t.max(), points)


def _simulate(run: _Run) -> None:
    config = run.config
    cav, spins = config.parameters.cavity(), config.parameters.spins()
    spectrum, truth = generate_synthetic(config)
    run.outputs.append(truth)
    run.outputs.append(write_spectrum_csv(spectrum, run.directory / "spectrum.csv", config.io.scale))

    derived = derive_quantities(cav, spins)
    verdict = count_minima_on_resonance(cav, derived.g_c, spins.gamma_s)
    run.report.add("g_c", derived.g_c, "configured")
    run.report.add("cooperativity_C", derived.cooperativity_C, "derived")
    run.report.add("minima_on_resonance", verdict.minima_count, "numeric count")
    run.report.notes["regime"] = str(derived.regime_label)
    run.report.notes["exact_condition"] = str(verdict.exact_condition_holds).lower()
    parameters = config.parameters
    if cav.mode_volume is not None:
        estimate = single_spin_coupling_estimate(parameters.magnetic_moment, cav)
        run.report.add("g_s_estimate", estimate, "mode volume estimate")
    if parameters.n_total is not None and parameters.temperature is not None:
        count = polarized_spin_count(
            parameters.n_total, cav.omega_c / (2 * math.pi), parameters.temperature
        )
        run.report.add("n_polarized_estimate", count, "thermal polarization")

    expect = verdict.minima_count
    try:
        track = extract_dip_track(spectrum, expect_branches=expect)
    except BranchResolutionError as error:
        logger.warning("%s, writing a single-dip track instead", error)
        expect = 1
        track = extract_dip_track(spectrum, expect_branches=1)
    run.outputs.append(write_dip_track_csv(track, run.directory / "dip_track.csv"))

    fields = _field_span(spectrum.field_axis)
    delta = spins.field_to_omega * (fields - spins.resonance_field)
    if expect == 2:
        upper, lower = rabi_branches(delta, cav.omega_c, derived.g_c)
        overlays = [Overlay("upper", fields, upper), Overlay("lower", fields, lower)]
    else:
        shift = dispersive_shift(delta, cav.omega_c, derived.g_c, spins.gamma_s)
        overlays = [Overlay("dispersive shift", fields, shift)]
    run.plot(spectrum, "map.svg", overlays)


def _fit_dispersive(run: _Run) -> None:
    conversion = run.config.parameters.field_to_omega
    track = _load_track(run, expect_branches=1)
    result = run.fitted(fit_dispersive_track(track, conversion), "fit-dispersive")
    p = result.parameters
    fields = _field_span(track.field)
    delta = p["shift_sign"] * conversion * (fields - p["resonance_field"])
    curve = dispersive_shift(delta, p["omega_c"], p["g_c"], p["gamma_s"])
    run.plot(track, "track.svg", [Overlay("fit", fields, curve)])


def _fit_kappa(run: _Run) -> None:
    conversion = run.config.parameters.field_to_omega
    path = _input(run.config)
    if _is_spectrum_file(path):
        track = extract_linewidth_track(ingest_spectrum_csv(path))
        run.outputs.append(write_linewidth_csv(track, run.directory / "linewidth_track.csv"))
    else:
        field_t, kappa = read_kappa_csv(path)
        track = LinewidthTrack(field=field_t, kappa=kappa)
    result = run.fitted(fit_kappa_lorentzian(track.field, track.kappa, conversion), "fit-kappa")
    p = result.parameters
    fields = _field_span(track.field)
    curve = kappa_broadening(
        conversion * (fields - p["resonance_field"]), p["kappa_c"], p["g_c"], p["gamma_s"]
    )
    run.plot(track, "linewidth.svg", [Overlay("fit", fields, curve)])


def _fit_branches(run: _Run) -> None:
    conversion = run.config.parameters.field_to_omega
    track = _load_track(run, expect_branches=2)
    result = run.fitted(fit_rabi_branches(track, conversion), "fit-branches")
    p = result.parameters
    run.report.notes["splitting_2g_c_MHz"] = f"{2 * p['g_c'] / MHZ:.6g}"
    fields = _field_span(track.field)
    upper, lower = rabi_branches(conversion * (fields - p["resonance_field"]), p["omega_c"], p["g_c"])
    run.plot(track, "track.svg", [Overlay("upper fit", fields, upper), Overlay("lower fit", fields, lower)])


def _fit_map(run: _Run) -> None:
    config = run.config
    conversion = config.parameters.field_to_omega
    spectrum = ingest_spectrum_csv(_input(config))
    configured = config.parameters.fit_values()
    unknown = set(config.fit.frozen) - set(MAP_PARAMETERS)
    if unknown:
        raise ConfigError(f"[fit] frozen names unknown parameters {sorted(unknown)}")
    unset = set(config.fit.frozen) - set(configured)
    if unset:
        raise ConfigError(f"[fit] frozen parameters {sorted(unset)} need values in [parameters]")
    initial = seed_map_parameters(spectrum, conversion) | configured
    result = run.fitted(
        fit_full_s11_map(spectrum, initial, config.fit.frozen, conversion), "fit-map"
    )
    p = result.parameters
    run.report.notes["kappa_e_over_kappa_c"] = f"{p['kappa_e'] / p['kappa_c']:.6g}"
    fields = _field_span(spectrum.field_axis)
    upper, lower = rabi_branches(conversion * (fields - p["resonance_field"]), p["omega_c"], p["g_c"])
    run.plot(spectrum, "map.svg", [Overlay("upper", fields, upper), Overlay("lower", fields, lower)])


def _threshold_scan(run: _Run) -> None:
    config = run.config
    parameters = config.parameters
    parameters.require("gamma_s")
    assert parameters.gamma_s is not None
    gamma_s = parameters.gamma_s
    cav = parameters.cavity()
    g_c_range = config.grid.g_c_range or (0.3 * gamma_s, 1.2 * gamma_s)
    critical = merge_point_scan(cav, gamma_s, g_c_range, config.grid.scan_steps)
    exact = exact_threshold_ratio(cav.kappa_c, gamma_s)
    run.report.add("g_c", critical, "dip merge scan")
    run.report.add("critical_ratio", critical / gamma_s, "dip merge scan")
    run.report.add("exact_condition_ratio", exact, "analytic condition")
    run.report.add("asymptotic_ratio", asymptotic_threshold_ratio(), "kappa_c >> gamma_s limit")
    samples = np.linspace(*g_c_range, config.grid.scan_steps)
    scan = ThresholdScan(
        ratio=[float(g) / gamma_s for g in samples],
        minima_count=scan_minima_counts(cav, gamma_s, [float(g) for g in samples]),
        critical_ratio=critical / gamma_s,
        exact_ratio=exact,
    )
    run.plot(scan, "scan.svg")


def _sample_series(config: RunConfig, column: str) -> tuple[np.ndarray, np.ndarray] | None:
    data = config.data
    values = getattr(data, column)
    if values is None or data.g_c is None:
        return None
    if values.shape != data.g_c.shape:
        raise ConfigError(f"[data] {column} and g_c must have equal lengths")
    return values, data.g_c


def _nscale(run: _Run) -> None:
    config = run.config
    inline = _sample_series(config, "n")
    if inline is not None:
        n, g_c = inline
        errors = config.data.g_c_err
        weight = None if errors is None else 1 / errors**2
        data = CouplingVsN(n=n, g_c=g_c, weight=weight, excluded=config.data.excluded)
    else:
        n, g_c, weight, excluded = read_coupling_vs_n_csv(_input(config))
        data = CouplingVsN(n=n, g_c=g_c, weight=weight, excluded=excluded)
    result = run.fitted(sqrtN_regression(data), "sqrt(N) regression")
    if config.parameters.mode_volume is not None:
        estimate = single_spin_coupling_estimate(
            config.parameters.magnetic_moment, config.parameters.cavity()
        )
        run.report.add("g_s_estimate", estimate, "mode volume estimate")
    root_n = np.linspace(0, math.sqrt(float(n.max())), 200)
    line = result.parameters["g_s"] * root_n / MHZ
    run.plot(data, "nscale.svg", [Overlay("g_s √N", root_n, line, "-")])


def _position(run: _Run) -> None:
    config = run.config
    inline = _sample_series(config, "position")
    position, g_c = inline if inline is not None else read_position_csv(_input(config))
    profile = PositionProfile(position=position, g_c=g_c)
    fit = SinusoidProfile.from_fit(run.fitted(fit_position_sinusoid(profile), "position fit"))
    if config.fit.sample_length is not None:
        center = config.fit.sample_center
        if center is None:
            center = float(position[np.argmax(fit(position))])
        average = average_coupling_over_length(fit, config.fit.sample_length, center, config.fit.averaging)
        run.report.add("g_c_average", average, f"{config.fit.averaging} over sample length")
    run.plot(profile, "position.svg", [sinusoid_overlay(fit, position)])


HANDLERS: dict[Command, Callable[[_Run], None]] = {
    Command.SIMULATE: _simulate,
    Command.FIT_DISPERSIVE: _fit_dispersive,
    Command.FIT_KAPPA: _fit_kappa,
    Command.FIT_BRANCHES: _fit_branches,
    Command.FIT_MAP: _fit_map,
    Command.THRESHOLD_SCAN: _threshold_scan,
    Command.NSCALE: _nscale,
    Command.POSITION: _position,
}


def execute(config: RunConfig) -> RunOutcome:
    """Run one command and write its report, tables and plots.

    Returns:
        Outcome with exit code 0, or 4 when a fit did not converge.

    Raises:
        Any error of the underlying modules.
    """
    config.io.output_dir.mkdir(parents=True, exist_ok=True)
    run = _Run(config=config, report=ReportTable(title=config.title))
    HANDLERS[config.command](run)
    run.outputs.extend(run.report.write(config.io.output_dir))
    converged = all(result.converged for result in run.fits)
    if not converged:
        logger.error("A fit did not converge, results are the best point found")
    return RunOutcome(
        exit_code=EXIT_OK if converged else EXIT_NOT_CONVERGED,
        outputs=run.outputs,
        summary=run.report.to_text(),
    )


def exit_code_for(error: Exception) -> int:
    """Process exit status for an error raised by a run.

    >>> exit_code_for(ConfigError("bad key"))
    2
    >>> exit_code_for(GridError("empty axis"))
    3
    >>> exit_code_for(RuntimeError("bug"))
    5
    """
    if isinstance(error, ConfigError):
        return EXIT_CONFIG
    if isinstance(error, DATA_ERRORS):
        return EXIT_DATA
    if isinstance(error, SingularSystemError):
        return EXIT_NOT_CONVERGED
    return EXIT_INTERNAL


def run_command(config: RunConfig, argv: list[str] | None = None) -> RunOutcome:
    """Run a command, record it in the output crate and map errors to an exit code.

    Args:
        config: The validated configuration.
        argv: Command line to record. Uses sys.argv when None.

    Returns:
        The outcome; on error the exit code is nonzero and no outputs are listed.
    """
    program = Program(
        name=PROG, description=DESCRIPTION, subcommand=str(config.command), version=__version__
    )
    try:
        return recorded(program, argv)(execute)(config)
    except Exception as error:
        code = exit_code_for(error)
        if code == EXIT_INTERNAL:
            logger.exception("Internal error while running %s", config.command)
        else:
            logger.error("%s: %s", config.command, error)
        return RunOutcome(exit_code=code)


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog=PROG, description=DESCRIPTION)
    parser.add_argument("--version", action="version", version=__version__)
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in Command:
        subparser = subparsers.add_parser(command.value, help=COMMAND_HELP[command])
        subparser.add_argument("--config", type=Path, required=True, help="Run configuration INI file")
        subparser.add_argument("--out", type=Path, help="Output directory, overrides [io] output_dir")
        subparser.add_argument("--seed", type=int, help="Noise seed, overrides [noise] seed")
        subparser.add_argument("--quiet", action="store_true", help="Only log warnings and errors")
    replay = subparsers.add_parser(PLAYBACK, help="Print the command lines recorded in an output directory")
    replay.add_argument("crate_root", type=Path, help="Output directory holding ro-crate-metadata.json")
    return parser


def replay_runs(crate_root: Path) -> int:
    """Print the recorded runs of a crate, oldest first, so they can be re-run."""
    commands = playback(crate_root)
    if not commands:
        logger.error("No recorded runs in %s", crate_root)
        return EXIT_CONFIG
    print(commands)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    """Entry point of the ``cavity-spin`` console script."""
    args_list = sys.argv[1:] if argv is None else argv
    args = build_parser().parse_args(args_list)
    if args.command == PLAYBACK:
        return replay_runs(args.crate_root)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(args.config, command=args.command, seed=args.seed, output_dir=args.out)
    except ConfigError as error:
        logger.error("%s", error)
        return EXIT_CONFIG
    outcome = run_command(config, [PROG, *args_list])
    if outcome.exit_code in (EXIT_OK, EXIT_NOT_CONVERGED) and not args.quiet:
        print(outcome.summary)
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
