"""Digitizing reflection dips out of a spectrum map."""

from dataclasses import dataclass
from enum import StrEnum
import logging

import numpy as np
from numpy.typing import NDArray
from scipy.signal import argrelmin

from cavity_spin_coupling.errors import BranchResolutionError, GridError
from cavity_spin_coupling.estimation.engine import FitResult, Model, nlls_solve
from cavity_spin_coupling.model import SpectrumMap

logger = logging.getLogger(__name__)

type FloatArray = NDArray[np.float64]

LOG_FLOOR = 1e-30


class Branch(StrEnum):
    """Which mode a dip belongs to."""

    SINGLE = "single"
    UPPER = "upper"
    LOWER = "lower"


@dataclass(frozen=True)
class DipTrack:
    """Dip frequencies versus magnetic field, one or two per field."""

    field: FloatArray
    """Magnetic field in tesla of each dip."""
    dip_frequency: FloatArray
    """Dip angular frequency in rad/s."""
    branch: tuple[Branch, ...]
    """Branch of each dip."""

    def __post_init__(self) -> None:
        if not len(self.field) == len(self.dip_frequency) == len(self.branch):
            raise GridError("field, dip_frequency and branch must have equal lengths")
        for tag in set(self.branch):
            if np.any(np.diff(self.select(tag)[0]) <= 0):
                raise GridError(f"fields of the {tag} branch must be strictly increasing")

    def select(self, branch: Branch) -> tuple[FloatArray, FloatArray]:
        """Fields and dip frequencies of one branch."""
        mask = np.array([tag == branch for tag in self.branch], dtype=bool)
        return self.field[mask], self.dip_frequency[mask]

    @property
    def branches(self) -> set[Branch]:
        return set(self.branch)


@dataclass(frozen=True)
class LinewidthTrack:
    """Loaded cavity dip position and half-width versus magnetic field."""

    field: FloatArray
    """Magnetic field in tesla."""
    kappa: FloatArray
    """Dip half-width in rad/s."""
    dip_frequency: FloatArray | None = None
    """Dip center in rad/s, when extracted from a map."""
    kappa_e: FloatArray | None = None
    """External loss in rad/s from the depth of the dip, when extracted from a map."""

    def __post_init__(self) -> None:
        if self.field.shape != self.kappa.shape:
            raise GridError("field and kappa must have equal lengths")


def _parabola_vertex(x: FloatArray, y: FloatArray) -> float:
    """Abscissa of the vertex of the parabola through three points."""
    (x0, x1, x2), (y0, y1, y2) = x, y
    numerator = (x1 - x0) ** 2 * (y1 - y2) - (x1 - x2) ** 2 * (y1 - y0)
    denominator = (x1 - x0) * (y1 - y2) - (x1 - x2) * (y1 - y0)
    if denominator == 0:
        return float(x1)
    return float(x1 - 0.5 * numerator / denominator)


def _row_dips(frequencies: FloatArray, power: FloatArray, count: int) -> list[float]:
    """Up to ``count`` deepest dips of one row, refined and sorted by frequency."""
    (minima,) = argrelmin(power)
    if minima.size == 0:
        minima = np.array([int(np.argmin(power))])
        if minima[0] in (0, power.size - 1):
            return []
    deepest = sorted(minima, key=lambda i: power[i])
    step = float(np.median(np.diff(frequencies)))
    chosen: list[int] = []
    for index in deepest:
        if all(abs(frequencies[index] - frequencies[other]) >= 2 * step for other in chosen):
            chosen.append(int(index))
        if len(chosen) == count:
            break
    log_power = np.log(np.maximum(power, LOG_FLOOR))
    return sorted(
        _parabola_vertex(frequencies[i - 1 : i + 2], log_power[i - 1 : i + 2])
        for i in chosen
    )


def extract_dip_track(spectrum: SpectrumMap, expect_branches: int = 1) -> DipTrack:
    """Locate reflection dips row by row.

    Each field row contributes its deepest local minimum (or two deepest for a split
    spectrum), refined by a parabola through the log-power at the three grid points
    around the minimum. Minima closer than two grid steps count as one.

    Args:
        spectrum: Linear-scale spectrum map.
        expect_branches: 1 for a single dispersive dip, 2 for an anticrossing.

    Returns:
        The dip track; rows where two branches were expected but one was found are skipped.

    Raises:
        ValueError: If expect_branches is not 1 or 2 or the map is in dB.
        BranchResolutionError: If two branches were requested and more than half the rows
            show only one.
    """
    if expect_branches not in (1, 2):
        raise ValueError(f"expect_branches must be 1 or 2, got {expect_branches}")
    if spectrum.scale != "linear":
        raise ValueError("dip extraction needs a linear-scale map")

    fields: list[float] = []
    dips: list[float] = []
    tags: list[Branch] = []
    unresolved = 0
    for field, row in zip(spectrum.field_axis, spectrum.power):
        found = _row_dips(spectrum.frequency_axis, row, expect_branches)
        if expect_branches == 1 and found:
            fields.append(float(field))
            dips.append(found[0])
            tags.append(Branch.SINGLE)
        elif expect_branches == 2 and len(found) == 2:
            fields.extend([float(field), float(field)])
            dips.extend(found)
            tags.extend([Branch.LOWER, Branch.UPPER])
        else:
            unresolved += 1

    rows = len(spectrum.field_axis)
    if expect_branches == 2 and unresolved > rows / 2:
        raise BranchResolutionError(1 - unresolved / rows)
    if unresolved:
        logger.info("Skipped %d of %d rows without the expected dips", unresolved, rows)
    return DipTrack(field=np.array(fields), dip_frequency=np.array(dips), branch=tuple(tags))


def _bare_dip(omega: FloatArray, p: FloatArray) -> FloatArray:
    omega_0, kappa, kappa_e = p
    return 1 - kappa_e * (2 * kappa - kappa_e) / ((omega - omega_0) ** 2 + kappa**2)


def _bare_dip_jacobian(omega: FloatArray, p: FloatArray) -> FloatArray:
    omega_0, kappa, kappa_e = p
    u = omega - omega_0
    q = u**2 + kappa**2
    strength = kappa_e * (2 * kappa - kappa_e)
    return np.column_stack(
        [
            -strength * 2 * u / q**2,
            -2 * kappa_e / q + strength * 2 * kappa / q**2,
            -(2 * kappa - 2 * kappa_e) / q,
        ]
    )


BARE_DIP = Model(
    names=("omega_0", "kappa", "kappa_e"),
    function=_bare_dip,
    jacobian=_bare_dip_jacobian,
    positive=frozenset({"kappa", "kappa_e"}),
)
"""Reflected power of a cavity without spins."""


def fit_bare_dip(frequencies: FloatArray, power: FloatArray) -> FitResult:
    """Fit a single Lorentzian reflection dip, undercoupled branch.

    Args:
        frequencies: Probe angular frequencies in rad/s.
        power: Linear |S11|² at those frequencies.

    Returns:
        Fit of omega_0, kappa (loaded half-width) and kappa_e.

    Raises:
        GridError: If the row shows no dip.
    """
    index = int(np.argmin(power))
    depth = 1 - float(power[index])
    if depth <= 0:
        raise GridError("row shows no reflection dip")
    below = frequencies[power < 1 - depth / 2]
    step = float(np.median(np.diff(frequencies)))
    kappa = max(float(below.max() - below.min()) / 2, step) if below.size else step
    kappa_e = kappa * (1 - np.sqrt(max(1 - depth, 0.0)))
    # kappa_e = kappa is a stationary point of the dip depth, start below it
    kappa_e = min(max(kappa_e, 1e-3 * kappa), 0.95 * kappa)
    return nlls_solve(
        BARE_DIP,
        frequencies,
        power,
        {"omega_0": float(frequencies[index]), "kappa": kappa, "kappa_e": kappa_e},
    )


def extract_linewidth_track(spectrum: SpectrumMap) -> LinewidthTrack:
    """Fit the bare-cavity dip shape to every row of a single-dip map.

    The fitted half-width is the loaded cavity half-width kappa at that field.

    Args:
        spectrum: Linear-scale spectrum map in the dispersive regime.

    Returns:
        Dip centers and half-widths versus field.
    """
    if spectrum.scale != "linear":
        raise ValueError("linewidth extraction needs a linear-scale map")
    results = [fit_bare_dip(spectrum.frequency_axis, row) for row in spectrum.power]
    return LinewidthTrack(
        field=spectrum.field_axis.copy(),
        dip_frequency=np.array([r.parameters["omega_0"] for r in results]),
        kappa=np.array([r.parameters["kappa"] for r in results]),
        kappa_e=np.array([r.parameters["kappa_e"] for r in results]),
    )
