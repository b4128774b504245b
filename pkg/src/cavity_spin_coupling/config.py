"""Run configuration files.

A run is described by an INI file. Rates and frequencies are given in MHz (the ordinary
frequency, angular value divided by 2π), fields in gauss, positions in mm and the field
conversion in MHz/G. :func:`load_config` converts everything to internal units.
See ``docs/config.md`` for every key.
"""

from collections.abc import Callable
from configparser import ConfigParser, Error as ConfigParserError, SectionProxy
from dataclasses import dataclass, field, replace
from enum import StrEnum
from pathlib import Path
from typing import Literal
import logging
import math

import numpy as np
from numpy.typing import NDArray

from cavity_spin_coupling.constants import (
    CODATA,
    DEFAULT_FIELD_TO_OMEGA,
    GAUSS,
    MHZ,
    MM,
    from_gauss,
    from_mhz,
)
from cavity_spin_coupling.errors import ConfigError, NoiseModelError
from cavity_spin_coupling.model import CavityParams, SpinEnsembleParams

logger = logging.getLogger(__name__)

type FloatArray = NDArray[np.float64]

SECTIONS = ("run", "parameters", "grid", "fit", "noise", "io", "data")
NOISE_MODELS = ("none", "additive", "multiplicative")


class Command(StrEnum):
    """What a run does."""

    SIMULATE = "simulate"
    FIT_DISPERSIVE = "fit-dispersive"
    FIT_KAPPA = "fit-kappa"
    FIT_BRANCHES = "fit-branches"
    FIT_MAP = "fit-map"
    THRESHOLD_SCAN = "threshold-scan"
    NSCALE = "nscale"
    POSITION = "position"


@dataclass(frozen=True)
class ParameterBlock:
    """Physical parameters in internal units, None when not configured."""

    omega_c: float | None = None
    kappa_c: float | None = None
    kappa_e: float | None = None
    gamma_s: float | None = None
    g_c: float | None = None
    g_s: float | None = None
    n_polarized: float | None = None
    resonance_field: float | None = None
    field_to_omega: float = DEFAULT_FIELD_TO_OMEGA
    mode_volume: float | None = None
    """Cavity mode volume in m³."""
    magnetic_moment: float = CODATA.bohr_magneton_muB
    """Spin magnetic moment in J/T for the single-spin coupling estimate."""
    n_total: float | None = None
    """Total number of spins, for the thermal polarization estimate."""
    temperature: float | None = None
    """Sample temperature in K."""

    def require(self, *names: str) -> None:
        """Raise a ConfigError naming every listed parameter that is not configured."""
        missing = [name for name in names if getattr(self, name) is None]
        if missing:
            raise ConfigError(f"[parameters] is missing {', '.join(missing)}")

    def cavity(self) -> CavityParams:
        self.require("omega_c", "kappa_c")
        assert self.omega_c is not None and self.kappa_c is not None
        return CavityParams(
            omega_c=self.omega_c,
            kappa_c=self.kappa_c,
            kappa_e=self.kappa_e,
            mode_volume=self.mode_volume,
        )

    def spins(self) -> SpinEnsembleParams:
        self.require("gamma_s", "resonance_field")
        if self.g_c is None and (self.g_s is None or self.n_polarized is None):
            raise ConfigError("[parameters] needs g_c, or both g_s and n_polarized")
        assert self.gamma_s is not None and self.resonance_field is not None
        return SpinEnsembleParams(
            gamma_s=self.gamma_s,
            resonance_field=self.resonance_field,
            g_s=self.g_s or 0.0,
            n_polarized=self.n_polarized or 0.0,
            field_to_omega=self.field_to_omega,
            g_c=self.g_c,
        )

    def fit_values(self) -> dict[str, float]:
        """Configured parameters usable as fit starting values or frozen values."""
        names = ("g_c", "gamma_s", "kappa_c", "kappa_e", "omega_c", "resonance_field")
        return {name: value for name in names if (value := getattr(self, name)) is not None}


@dataclass(frozen=True)
class GridBlock:
    """Simulation axes and the coupling range of a threshold scan."""

    field_axis: FloatArray | None = None
    """Magnetic field axis in tesla."""
    frequency_axis: FloatArray | None = None
    """Probe angular frequency axis in rad/s."""
    g_c_range: tuple[float, float] | None = None
    """(low, high) collective coupling of a threshold scan in rad/s."""
    scan_steps: int = 64


@dataclass(frozen=True)
class FitBlock:
    """Options of the fitting commands."""

    frozen: tuple[str, ...] = ()
    """Parameters held at their configured value."""
    averaging: Literal["rms", "mean"] = "rms"
    sample_length: float | None = None
    """Sample length in meters for the position command."""
    sample_center: float | None = None
    """Sample center in meters for the position command."""


@dataclass(frozen=True)
class NoiseBlock:
    """Noise added to simulated spectra."""

    model: Literal["none", "additive", "multiplicative"] = "additive"
    sigma: float = 0.0
    """Standard deviation, of linear power for additive noise, relative for multiplicative."""
    seed: int | None = None

    @property
    def enabled(self) -> bool:
        """Whether noise is drawn at all, a zero sigma leaves the spectrum clean."""
        return self.model != "none" and self.sigma > 0


@dataclass(frozen=True)
class IOBlock:
    """Input and output locations."""

    output_dir: Path
    input: Path | None = None
    scale: Literal["linear", "dB"] = "linear"
    """Scale of written spectrum files."""
    plot: bool = True
    """Whether to write SVG plots."""


@dataclass(frozen=True)
class DataBlock:
    """Sample series given inline instead of in a CSV file."""

    n: FloatArray | None = None
    g_c: FloatArray | None = None
    """Collective couplings in rad/s."""
    g_c_err: FloatArray | None = None
    """Standard errors of g_c in rad/s."""
    excluded: NDArray[np.bool_] | None = None
    position: FloatArray | None = None
    """Sample positions in meters."""


@dataclass(frozen=True)
class RunConfig:
    """A complete, validated run description in internal units."""

    command: Command
    source: Path
    """The configuration file."""
    io: IOBlock
    parameters: ParameterBlock = field(default_factory=ParameterBlock)
    grid: GridBlock = field(default_factory=GridBlock)
    fit: FitBlock = field(default_factory=FitBlock)
    noise: NoiseBlock = field(default_factory=NoiseBlock)
    data: DataBlock = field(default_factory=DataBlock)
    title: str = ""
    dataset_license: str | None = None
    """License recorded on the run crate, for example CC-BY-4.0."""

    def with_overrides(self, seed: int | None = None, output_dir: Path | None = None) -> "RunConfig":
        """Apply command-line overrides of the noise seed and output directory."""
        config = self
        if seed is not None:
            config = replace(config, noise=replace(config.noise, seed=seed))
        if output_dir is not None:
            config = replace(config, io=replace(config.io, output_dir=Path(output_dir)))
        return config


def _get[T](section: SectionProxy | None, key: str, convert: Callable[[str], T]) -> T | None:
    if section is None or key not in section:
        return None
    text = section[key].strip()
    try:
        return convert(text)
    except ValueError as error:
        raise ConfigError(f"[{section.name}] {key} = {text!r}: {error}") from error


def _scaled(section: SectionProxy | None, key: str, factor: float) -> float | None:
    value = _get(section, key, float)
    return None if value is None else value * factor


def _floats(text: str) -> FloatArray:
    return np.array([float(item) for item in text.replace(",", " ").split()])


def _array(section: SectionProxy | None, key: str, factor: float = 1.0) -> FloatArray | None:
    values = _get(section, key, _floats)
    return None if values is None else values * factor


def _bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("1", "yes", "true", "on"):
        return True
    if lowered in ("0", "no", "false", "off"):
        return False
    raise ValueError("expected yes or no")


def _axis(
    section: SectionProxy | None, prefix: str, convert: Callable[[FloatArray], FloatArray]
) -> FloatArray | None:
    low = _get(section, f"{prefix}_min", float)
    high = _get(section, f"{prefix}_max", float)
    points = _get(section, f"{prefix}_points", int)
    if low is None and high is None and points is None:
        return None
    if low is None or high is None or points is None:
        raise ConfigError(f"[grid] needs {prefix}_min, {prefix}_max and {prefix}_points together")
    if not high > low or points < 2:
        raise ConfigError(f"[grid] {prefix} axis needs max > min and at least 2 points")
    return convert(np.linspace(low, high, points))


def _parameters(section: SectionProxy | None) -> ParameterBlock:
    kappa_c = _scaled(section, "kappa_c", MHZ)
    kappa_e = _scaled(section, "kappa_e", MHZ)
    ratio = _get(section, "kappa_e_ratio", float)
    if ratio is not None:
        if kappa_e is not None:
            raise ConfigError("[parameters] sets both kappa_e and kappa_e_ratio")
        if kappa_c is None:
            raise ConfigError("[parameters] kappa_e_ratio needs kappa_c")
        kappa_e = ratio * kappa_c
    g_s = _get(section, "g_s", float)
    field_to_omega = _scaled(section, "field_to_omega", MHZ / GAUSS)
    moment = _get(section, "magnetic_moment", float)
    return ParameterBlock(
        omega_c=_scaled(section, "omega_c", MHZ),
        kappa_c=kappa_c,
        kappa_e=kappa_e,
        gamma_s=_scaled(section, "gamma_s", MHZ),
        g_c=_scaled(section, "g_c", MHZ),
        g_s=None if g_s is None else g_s * 2 * math.pi,
        n_polarized=_get(section, "n_polarized", float),
        resonance_field=_scaled(section, "resonance_field", GAUSS),
        field_to_omega=DEFAULT_FIELD_TO_OMEGA if field_to_omega is None else field_to_omega,
        mode_volume=_get(section, "mode_volume", float),
        magnetic_moment=CODATA.bohr_magneton_muB * (1.0 if moment is None else moment),
        n_total=_get(section, "n_total", float),
        temperature=_get(section, "temperature", float),
    )


def _grid(section: SectionProxy | None) -> GridBlock:
    low = _scaled(section, "g_c_min", MHZ)
    high = _scaled(section, "g_c_max", MHZ)
    if (low is None) != (high is None):
        raise ConfigError("[grid] needs g_c_min and g_c_max together")
    if low is not None and high is not None and not 0 <= low < high:
        raise ConfigError("[grid] needs 0 <= g_c_min < g_c_max")
    steps = _get(section, "scan_steps", int) or 64
    if steps < 16:
        raise ConfigError(f"[grid] scan_steps must be at least 16, got {steps}")
    return GridBlock(
        field_axis=_axis(section, "field", from_gauss),
        frequency_axis=_axis(section, "frequency", from_mhz),
        g_c_range=None if low is None or high is None else (low, high),
        scan_steps=steps,
    )


def _fit(section: SectionProxy | None) -> FitBlock:
    frozen = _get(section, "frozen", lambda text: tuple(text.replace(",", " ").split())) or ()
    averaging = _get(section, "averaging", str) or "rms"
    if averaging not in ("rms", "mean"):
        raise ConfigError(f"[fit] averaging must be rms or mean, got {averaging!r}")
    length = _scaled(section, "sample_length", MM)
    if length is not None and length < 0:
        raise ConfigError("[fit] sample_length must be non-negative")
    return FitBlock(
        frozen=frozen,
        averaging=averaging,
        sample_length=length,
        sample_center=_scaled(section, "sample_center", MM),
    )


def _noise(section: SectionProxy | None) -> NoiseBlock:
    model = _get(section, "model", str) or "additive"
    if model not in NOISE_MODELS:
        raise NoiseModelError(model)
    sigma = _get(section, "sigma", float) or 0.0
    if sigma < 0:
        raise ConfigError(f"[noise] sigma must be non-negative, got {sigma}")
    return NoiseBlock(model=model, sigma=sigma, seed=_get(section, "seed", int))


def _io(section: SectionProxy | None, base: Path) -> IOBlock:
    scale = _get(section, "scale", str) or "linear"
    if scale not in ("linear", "dB"):
        raise ConfigError(f"[io] scale must be linear or dB, got {scale!r}")
    source = _get(section, "input", Path)
    output = _get(section, "output_dir", Path) or Path("output")
    plot = _get(section, "plot", _bool)
    return IOBlock(
        output_dir=base / output,
        input=None if source is None else base / source,
        scale=scale,
        plot=True if plot is None else plot,
    )


def _data(section: SectionProxy | None) -> DataBlock:
    excluded = _get(
        section, "excluded", lambda text: np.array([_bool(t) for t in text.replace(",", " ").split()])
    )
    return DataBlock(
        n=_array(section, "n"),
        g_c=_array(section, "g_c", MHZ),
        g_c_err=_array(section, "g_c_err", MHZ),
        excluded=excluded,
        position=_array(section, "position", MM),
    )


def load_config(
    path: Path,
    command: Command | str | None = None,
    seed: int | None = None,
    output_dir: Path | None = None,
) -> RunConfig:
    """Read and validate a run configuration.

    Relative paths in the ``[io]`` section are resolved against the directory of the
    configuration file.

    Args:
        path: INI file to read.
        command: Command chosen on the command line. When given, ``[run] command`` may be
            omitted but must agree if present.
        seed: Overrides ``[noise] seed`` when given.
        output_dir: Overrides ``[io] output_dir`` when given.

    Returns:
        The configuration in internal units.

    Raises:
        ConfigError: If the file cannot be read, has unknown sections, an unknown command,
            malformed values, or enables noise without a seed.
        NoiseModelError: If the noise model is not none, additive or multiplicative.
    """
    path = Path(path)
    parser = ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as handle:
            parser.read_file(handle)
    except (OSError, ConfigParserError) as error:
        raise ConfigError(f"cannot read config {path}: {error}") from error

    unknown = set(parser.sections()) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)} in {path}")

    def section(name: str) -> SectionProxy | None:
        return parser[name] if parser.has_section(name) else None

    run = section("run")
    name = _get(run, "command", str)
    if command is not None and name is not None and name != str(command):
        raise ConfigError(f"{path} is a {name!r} config, not {str(command)!r}")
    name = name if command is None else str(command)
    if name is None:
        raise ConfigError(f"{path} has no [run] command")
    try:
        chosen = Command(name)
    except ValueError:
        choices = ", ".join(c.value for c in Command)
        raise ConfigError(f"unknown command {name!r}, expected one of {choices}") from None

    config = RunConfig(
        command=chosen,
        source=path,
        io=_io(section("io"), path.parent),
        parameters=_parameters(section("parameters")),
        grid=_grid(section("grid")),
        fit=_fit(section("fit")),
        noise=_noise(section("noise")),
        data=_data(section("data")),
        title=_get(run, "title", str) or chosen.value,
        dataset_license=_get(run, "dataset_license", str),
    ).with_overrides(seed=seed, output_dir=output_dir)
    validate_config(config)
    logger.debug("Loaded %s config from %s", chosen, path)
    return config


def validate_config(config: RunConfig) -> None:
    """Check cross-field rules that hold for every command.

    Raises:
        ConfigError: If a non-zero noise sigma is given without a seed.
    """
    if config.noise.enabled and config.noise.seed is None:
        raise ConfigError("[noise] seed is mandatory when noise is enabled")
