"""Reading and writing spectra, dip tracks, sample series and report tables.

Files use the units quantities are reported in: MHz (frequency divided by 2π) for
rates and frequencies, gauss for fields, mm for positions and Hz for the single-spin
coupling. Values are converted to internal angular and SI units on read.
"""

from collections.abc import Iterable, Iterator
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal
import csv
import json
import logging
import math

import numpy as np
from numpy.typing import NDArray

from cavity_spin_coupling.config import RunConfig
from cavity_spin_coupling.constants import MM, from_gauss, from_mhz, to_gauss, to_mhz
from cavity_spin_coupling.errors import ConfigError, GridError, NoiseModelError, SpectrumFormatError
from cavity_spin_coupling.estimation.engine import FitResult
from cavity_spin_coupling.estimation.tracks import Branch, DipTrack, LinewidthTrack
from cavity_spin_coupling.model import SpectrumMap, simulate_map

logger = logging.getLogger(__name__)

type FloatArray = NDArray[np.float64]

SCALE_PREFIX = "# scale:"
AXIS_CORNER = "field_G\\freq_MHz"
NOISE_FLOOR = 1e-12
"""Smallest linear power left by noise, -120 dB, so noisy maps stay writable in dB."""


def to_linear(spectrum: SpectrumMap) -> SpectrumMap:
    """Convert a power-dB map to linear |S11|².

    >>> dB = SpectrumMap(np.array([0.0]), np.array([1.0]), np.array([[-10.0]]), scale="dB")
    >>> float(to_linear(dB).power[0, 0])
    0.1
    """
    if spectrum.scale == "linear":
        return spectrum
    return SpectrumMap(
        field_axis=spectrum.field_axis,
        frequency_axis=spectrum.frequency_axis,
        power=10 ** (spectrum.power / 10),
    )


def to_db(spectrum: SpectrumMap) -> SpectrumMap:
    """Convert a linear map to power dB, 10 log10 |S11|².

    Raises:
        GridError: If the map contains zero power, which has no dB value.
    """
    if spectrum.scale == "dB":
        return spectrum
    if np.any(spectrum.power <= 0):
        raise GridError("cannot express zero reflected power in dB")
    return SpectrumMap(
        field_axis=spectrum.field_axis,
        frequency_axis=spectrum.frequency_axis,
        power=10 * np.log10(spectrum.power),
        scale="dB",
    )


def _number(path: Path, line: int, text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise SpectrumFormatError(path, line, f"'{text}' is not a number") from None
    if not math.isfinite(value):
        raise SpectrumFormatError(path, line, f"non-finite value '{text}'")
    return value


def _rows(path: Path) -> Iterator[tuple[int, list[str]]]:
    """Non-empty CSV rows with their 1-based line numbers, skipping comments."""
    with open(path, newline="", encoding="utf-8") as handle:
        for number, row in enumerate(csv.reader(handle), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if row[0].lstrip().startswith("#"):
                continue
            yield number, [cell.strip() for cell in row]


def _increasing(path: Path, line: int, values: list[float], name: str) -> None:
    if any(b <= a for a, b in zip(values, values[1:])):
        raise SpectrumFormatError(path, line, f"{name} must be strictly increasing")


def ingest_spectrum_csv(path: Path) -> SpectrumMap:
    """Read a spectrum map from a grid CSV file.

    The first line is ``# scale: linear`` or ``# scale: dB``. The next row holds the probe
    frequencies in MHz after a corner cell, and every following row holds one field in
    gauss followed by the reflected power at each frequency. dB values are converted to
    linear power.

    Args:
        path: CSV file to read.

    Returns:
        Linear-scale spectrum map in internal units.

    Raises:
        SpectrumFormatError: On a malformed header, ragged rows, non-numeric or non-finite
            values, or axes that do not strictly increase. The message names the line.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as handle:
        header = handle.readline().strip()
    if not header.startswith(SCALE_PREFIX):
        raise SpectrumFormatError(path, 1, f"first line must be '{SCALE_PREFIX} linear|dB'")
    scale = header.removeprefix(SCALE_PREFIX).strip()
    if scale not in ("linear", "dB"):
        raise SpectrumFormatError(path, 1, f"unknown scale '{scale}', expected linear or dB")

    rows = iter(_rows(path))
    try:
        axis_line, axis_row = next(rows)
    except StopIteration:
        raise SpectrumFormatError(path, 2, "missing frequency axis row") from None
    frequencies_mhz = [_number(path, axis_line, cell) for cell in axis_row[1:]]
    if not frequencies_mhz:
        raise SpectrumFormatError(path, axis_line, "frequency axis is empty")
    _increasing(path, axis_line, frequencies_mhz, "frequency axis")

    fields_gauss: list[float] = []
    power: list[list[float]] = []
    last_line = axis_line
    for line, row in rows:
        if len(row) != len(frequencies_mhz) + 1:
            raise SpectrumFormatError(
                path, line, f"expected {len(frequencies_mhz) + 1} cells, found {len(row)}"
            )
        fields_gauss.append(_number(path, line, row[0]))
        power.append([_number(path, line, cell) for cell in row[1:]])
        _increasing(path, line, fields_gauss, "field axis")
        last_line = line
    if not fields_gauss:
        raise SpectrumFormatError(path, last_line, "no field rows")

    values = np.array(power)
    if scale == "linear" and np.any(values < 0):
        raise SpectrumFormatError(path, last_line, "linear power must be non-negative")
    spectrum = SpectrumMap(
        field_axis=from_gauss(np.array(fields_gauss)),
        frequency_axis=from_mhz(np.array(frequencies_mhz)),
        power=values,
        scale=scale,
    )
    logger.info("Read %d x %d %s spectrum from %s", *values.shape, scale, path)
    return to_linear(spectrum)


def write_spectrum_csv(
    spectrum: SpectrumMap, path: Path, scale: Literal["linear", "dB"] = "linear"
) -> Path:
    """Write a spectrum map in the grid CSV format read by :func:`ingest_spectrum_csv`.

    Values are written with full precision so a linear map reads back unchanged.
    """
    spectrum = to_db(spectrum) if scale == "dB" else to_linear(spectrum)
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        handle.write(f"{SCALE_PREFIX} {scale}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow([AXIS_CORNER, *(repr(float(f)) for f in to_mhz(spectrum.frequency_axis))])
        for field_gauss, row in zip(to_gauss(spectrum.field_axis), spectrum.power):
            writer.writerow([repr(float(field_gauss)), *(repr(float(v)) for v in row)])
    return path


def _read_table(path: Path, required: list[str], optional: Iterable[str] = ()) -> dict[str, list[str]]:
    """Columns of a CSV file with a header row, by column name."""
    path = Path(path)
    rows = iter(_rows(path))
    try:
        header_line, header = next(rows)
    except StopIteration:
        raise SpectrumFormatError(path, 1, "missing header row") from None
    missing = [name for name in required if name not in header]
    if missing:
        raise SpectrumFormatError(path, header_line, f"missing columns {missing}")
    wanted = [name for name in (*required, *optional) if name in header]
    columns: dict[str, list[str]] = {name: [] for name in wanted}
    lines: list[int] = []
    for line, row in rows:
        if len(row) != len(header):
            raise SpectrumFormatError(
                path, line, f"expected {len(header)} cells, found {len(row)}"
            )
        for name in wanted:
            columns[name].append(row[header.index(name)])
        lines.append(line)
    if not lines:
        raise SpectrumFormatError(path, header_line, "no data rows")
    columns["_line"] = [str(line) for line in lines]
    return columns


def _numbers(path: Path, columns: dict[str, list[str]], name: str) -> FloatArray:
    return np.array(
        [_number(path, int(line), text) for line, text in zip(columns["_line"], columns[name])]
    )


def read_dip_track_csv(path: Path) -> DipTrack:
    """Read a dip track with columns field_G, freq_MHz and branch."""
    path = Path(path)
    columns = _read_table(path, ["field_G", "freq_MHz", "branch"])
    branches = []
    for line, text in zip(columns["_line"], columns["branch"]):
        try:
            branches.append(Branch(text))
        except ValueError:
            raise SpectrumFormatError(path, int(line), f"unknown branch '{text}'") from None
    try:
        return DipTrack(
            field=from_gauss(_numbers(path, columns, "field_G")),
            dip_frequency=from_mhz(_numbers(path, columns, "freq_MHz")),
            branch=tuple(branches),
        )
    except GridError as error:
        raise SpectrumFormatError(path, int(columns["_line"][-1]), str(error)) from error


def write_dip_track_csv(track: DipTrack, path: Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["field_G", "freq_MHz", "branch"])
        for b, f, tag in zip(to_gauss(track.field), to_mhz(track.dip_frequency), track.branch):
            writer.writerow([repr(float(b)), repr(float(f)), str(tag)])
    return path


def read_kappa_csv(path: Path) -> tuple[FloatArray, FloatArray]:
    """Read cavity half-width versus field, columns field_G and kappa_MHz.

    Returns:
        (field in tesla, kappa in rad/s)
    """
    path = Path(path)
    columns = _read_table(path, ["field_G", "kappa_MHz"])
    return (
        from_gauss(_numbers(path, columns, "field_G")),
        from_mhz(_numbers(path, columns, "kappa_MHz")),
    )


def write_linewidth_csv(track: LinewidthTrack, path: Path) -> Path:
    """Write half-width versus field in the format read by :func:`read_kappa_csv`."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["field_G", "kappa_MHz"])
        for b, kappa in zip(to_gauss(track.field), to_mhz(track.kappa)):
            writer.writerow([repr(float(b)), repr(float(kappa))])
    return path


def read_coupling_vs_n_csv(path: Path) -> tuple[FloatArray, FloatArray, FloatArray | None, FloatArray | None]:
    """Read collective coupling per sample, columns n and g_c_MHz.

    Optional columns are ``g_c_err_MHz`` (turned into inverse-variance weights) and
    ``excluded`` (1 or true to leave a sample out of the fit).

    Returns:
        (n, g_c in rad/s, weight or None, excluded mask or None)
    """
    path = Path(path)
    columns = _read_table(path, ["n", "g_c_MHz"], ["g_c_err_MHz", "excluded"])
    weight = None
    if "g_c_err_MHz" in columns:
        errors = from_mhz(_numbers(path, columns, "g_c_err_MHz"))
        if np.any(errors <= 0):
            raise SpectrumFormatError(path, int(columns["_line"][0]), "g_c errors must be positive")
        weight = 1 / errors**2
    excluded = None
    if "excluded" in columns:
        excluded = np.array([text.lower() in ("1", "true", "yes") for text in columns["excluded"]])
    return (
        _numbers(path, columns, "n"),
        from_mhz(_numbers(path, columns, "g_c_MHz")),
        weight,
        excluded,
    )


def read_position_csv(path: Path) -> tuple[FloatArray, FloatArray]:
    """Read coupling versus sample position, columns position_mm and g_c_MHz.

    Returns:
        (position in meters, g_c in rad/s)
    """
    path = Path(path)
    columns = _read_table(path, ["position_mm", "g_c_MHz"])
    return (
        _numbers(path, columns, "position_mm") * MM,
        from_mhz(_numbers(path, columns, "g_c_MHz")),
    )


DISPLAY_UNITS: dict[str, tuple[str, float]] = {
    "g_c": ("MHz", 1 / (2 * math.pi * 1e6)),
    "gamma_s": ("MHz", 1 / (2 * math.pi * 1e6)),
    "kappa_c": ("MHz", 1 / (2 * math.pi * 1e6)),
    "kappa_e": ("MHz", 1 / (2 * math.pi * 1e6)),
    "kappa": ("MHz", 1 / (2 * math.pi * 1e6)),
    "omega_c": ("MHz", 1 / (2 * math.pi * 1e6)),
    "omega_0": ("MHz", 1 / (2 * math.pi * 1e6)),
    "amplitude": ("MHz", 1 / (2 * math.pi * 1e6)),
    "offset": ("MHz", 1 / (2 * math.pi * 1e6)),
    "resonance_field": ("G", 1e4),
    "g_c_average": ("MHz", 1 / (2 * math.pi * 1e6)),
    "g_s": ("Hz", 1 / (2 * math.pi)),
    "g_s_estimate": ("Hz", 1 / (2 * math.pi)),
    "period": ("mm", 1 / MM),
    "phase": ("rad", 1.0),
}
"""Reported unit and conversion factor from internal units, per quantity name.
Angular quantities are reported divided by 2π."""


@dataclass
class ReportRow:
    """One reported quantity."""

    name: str
    value: float
    unit: str
    uncertainty: float | None = None
    """Standard error in the same unit, None for frozen or exact values."""
    provenance: str = ""
    """Where the value came from, for example the fit name or 'frozen'."""

    def formatted_uncertainty(self) -> str:
        return "frozen" if self.uncertainty is None else f"{self.uncertainty:.3g}"


@dataclass
class ReportTable:
    """Quantities reported by a run, printable as text and as JSON."""

    title: str
    rows: list[ReportRow] = field(default_factory=list[ReportRow])
    notes: dict[str, str] = field(default_factory=dict[str, str])

    def add(self, name: str, value: float, provenance: str = "", uncertainty: float | None = None) -> None:
        """Add a quantity given in internal units."""
        unit, factor = DISPLAY_UNITS.get(name, ("", 1.0))
        self.rows.append(
            ReportRow(
                name=name,
                value=value * factor,
                unit=unit,
                uncertainty=None if uncertainty is None else uncertainty * abs(factor),
                provenance=provenance,
            )
        )

    def add_fit(self, result: FitResult, provenance: str) -> None:
        """Add every parameter of a fit with its standard error or a frozen marker."""
        for name, value in result.parameters.items():
            if name in result.frozen:
                self.add(name, value, "frozen")
            else:
                self.add(name, value, provenance, result.uncertainty(name))
        self.notes.update(result.notes)
        self.notes["converged"] = str(result.converged).lower()
        self.notes["iterations"] = str(result.iterations)

    def to_text(self) -> str:
        """Fixed-width table followed by the notes.

        >>> table = ReportTable("demo")
        >>> table.add("g_c", 2 * math.pi * 5.9e6, "fit-branches", 2 * math.pi * 1e4)
        >>> print(table.to_text())
        # demo
        quantity  value  unit  uncertainty  provenance
        g_c         5.9  MHz   0.01         fit-branches
        """
        header = ["quantity", "value", "unit", "uncertainty", "provenance"]
        cells = [
            [row.name, f"{row.value:.6g}", row.unit, row.formatted_uncertainty(), row.provenance]
            for row in self.rows
        ]
        widths = [max(len(line[i]) for line in [header, *cells]) for i in range(len(header))]
        lines = [f"# {self.title}", _align(header, widths)]
        lines.extend(_align(line, widths, numeric=(1,)) for line in cells)
        lines.extend(f"{key}: {value}" for key, value in sorted(self.notes.items()))
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps(
            {"title": self.title, "rows": [asdict(row) for row in self.rows], "notes": self.notes},
            indent=2,
        )

    def write(self, directory: Path, stem: str = "report") -> list[Path]:
        """Write the table as ``<stem>.txt`` and ``<stem>.json``."""
        directory = Path(directory)
        text, machine = directory / f"{stem}.txt", directory / f"{stem}.json"
        text.write_text(self.to_text() + "\n", encoding="utf-8")
        machine.write_text(self.to_json() + "\n", encoding="utf-8")
        return [text, machine]


def _align(cells: list[str], widths: list[int], numeric: tuple[int, ...] = ()) -> str:
    padded = [
        cell.rjust(width) if i in numeric else cell.ljust(width)
        for i, (cell, width) in enumerate(zip(cells, widths))
    ]
    return "  ".join(padded).rstrip()


def add_noise(
    power: FloatArray,
    model: str,
    sigma: float,
    rng: np.random.Generator,
) -> FloatArray:
    """Add noise to linear reflected power, clipping the result at ``NOISE_FLOOR``.

    Args:
        power: Linear |S11|².
        model: "additive" for power + σε, "multiplicative" for power (1 + σε),
            "none" to return the power unchanged.
        sigma: Noise standard deviation.
        rng: Random generator, ε is standard normal.

    Raises:
        NoiseModelError: If the model is unknown.
    """
    match model:
        case "none":
            return power
        case "additive":
            noisy = power + sigma * rng.standard_normal(power.shape)
        case "multiplicative":
            noisy = power * (1 + sigma * rng.standard_normal(power.shape))
        case _:
            raise NoiseModelError(model)
    return np.clip(noisy, NOISE_FLOOR, None)


def truth_record(config: RunConfig) -> dict[str, object]:
    """Generating parameters of a synthetic spectrum in reporting units."""
    p = config.parameters
    spins = p.spins()
    cavity = p.cavity()
    return {
        "omega_c_MHz": to_mhz(cavity.omega_c),
        "kappa_c_MHz": to_mhz(cavity.kappa_c),
        "kappa_e_MHz": to_mhz(cavity.external_loss),
        "gamma_s_MHz": to_mhz(spins.gamma_s),
        "g_c_MHz": to_mhz(spins.collective_g),
        "resonance_field_G": to_gauss(spins.resonance_field),
        "field_to_omega_MHz_per_G": to_mhz(spins.field_to_omega) / to_gauss(1.0),
        "noise": {"model": config.noise.model, "sigma": config.noise.sigma, "seed": config.noise.seed},
    }


def generate_synthetic(config: RunConfig) -> tuple[SpectrumMap, Path]:
    """Simulate a spectrum from a run configuration and add seeded noise.

    The generating parameters are written to ``truth.json`` in the output directory.

    Args:
        config: Configuration with cavity, spin and grid settings.

    Returns:
        The noisy linear map and the path of the truth sidecar.

    Raises:
        ConfigError: If the grid axes or required parameters are missing, or noise is
            enabled without a seed.
        NoiseModelError: If the noise model is unknown.
    """
    grid = config.grid
    if grid.field_axis is None or grid.frequency_axis is None:
        raise ConfigError("[grid] needs field and frequency axes to simulate a spectrum")
    if config.noise.enabled and config.noise.seed is None:
        raise ConfigError("[noise] seed is mandatory when noise is enabled")
    clean = simulate_map(
        config.parameters.cavity(),
        config.parameters.spins(),
        grid.field_axis,
        grid.frequency_axis,
    )
    rng = np.random.default_rng(config.noise.seed)
    spectrum = SpectrumMap(
        field_axis=clean.field_axis,
        frequency_axis=clean.frequency_axis,
        power=(
            add_noise(clean.power, config.noise.model, config.noise.sigma, rng)
            if config.noise.enabled
            else clean.power
        ),
    )
    directory = config.io.output_dir
    directory.mkdir(parents=True, exist_ok=True)
    sidecar = directory / "truth.json"
    sidecar.write_text(json.dumps(truth_record(config), indent=2) + "\n", encoding="utf-8")
    logger.info("Generated %d x %d spectrum, truth written to %s", *spectrum.power.shape, sidecar)
    return spectrum, sidecar
