"""SVG figures of spectra, dip tracks, threshold scans and sample series.

Figures are drawn on a bare :class:`matplotlib.figure.Figure` so no pyplot state is
shared between calls. Output is byte-for-byte reproducible for identical input.
"""

from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
import logging

import matplotlib
from matplotlib.axes import Axes
from matplotlib.figure import Figure
import numpy as np
from numpy.typing import NDArray

from cavity_spin_coupling.constants import to_gauss, to_mhz
from cavity_spin_coupling.errors import GridError
from cavity_spin_coupling.estimation.fits import CouplingVsN
from cavity_spin_coupling.estimation.profile import PositionProfile, SinusoidProfile
from cavity_spin_coupling.estimation.tracks import DipTrack, LinewidthTrack
from cavity_spin_coupling.io import to_db
from cavity_spin_coupling.model import SpectrumMap
from cavity_spin_coupling.splitting import ThresholdScan

logger = logging.getLogger(__name__)

type FloatArray = NDArray[np.float64]
type Plottable = (
    SpectrumMap | DipTrack | LinewidthTrack | ThresholdScan | CouplingVsN | PositionProfile
)

DETERMINISTIC_RC = {"svg.hashsalt": "cavity-spin-coupling", "svg.fonttype": "path"}
DB_FLOOR = 1e-6
"""Linear power below which map pixels are clipped before taking dB."""


@dataclass(frozen=True)
class Overlay:
    """A model curve drawn on top of a map or track, in internal units."""

    label: str
    x: FloatArray
    """Field in tesla, or the abscissa of the underlying plot in internal units."""
    y: FloatArray
    """Angular frequency in rad/s, or the ordinate in internal units."""
    style: str = "--"


@dataclass(frozen=True)
class PlotStyle:
    """Appearance settings shared by all plots."""

    width: float = 6.0
    """Figure width in inches."""
    height: float = 4.5
    """Figure height in inches."""
    colormap: str = "viridis"
    db_limits: tuple[float, float] | None = None
    """Color scale limits of maps in dB, automatic when None."""
    title: str = ""
    overlays: Sequence[Overlay] = field(default_factory=tuple)


def _map_axes(ax: Axes, spectrum: SpectrumMap, style: PlotStyle) -> None:
    clipped = SpectrumMap(
        field_axis=spectrum.field_axis,
        frequency_axis=spectrum.frequency_axis,
        power=np.maximum(spectrum.power, DB_FLOOR),
    )
    db = spectrum.power if spectrum.scale == "dB" else to_db(clipped).power
    low, high = style.db_limits or (None, None)
    mesh = ax.pcolormesh(
        to_gauss(spectrum.field_axis),
        to_mhz(spectrum.frequency_axis),
        db.T,
        shading="nearest",
        cmap=style.colormap,
        vmin=low,
        vmax=high,
    )
    figure = ax.get_figure()
    assert figure is not None
    figure.colorbar(mesh, ax=ax, label="|S11|² (dB)")
    ax.set_xlabel("Magnetic field (G)")
    ax.set_ylabel("Frequency (MHz)")


def _track_axes(ax: Axes, track: DipTrack) -> None:
    for branch in sorted(track.branches):
        field_t, omega = track.select(branch)
        ax.plot(to_gauss(field_t), to_mhz(omega), "o", markersize=3, label=str(branch))
    ax.set_xlabel("Magnetic field (G)")
    ax.set_ylabel("Dip frequency (MHz)")


def _linewidth_axes(ax: Axes, track: LinewidthTrack) -> None:
    ax.plot(to_gauss(track.field), to_mhz(track.kappa), "o", markersize=3, label="measured")
    ax.set_xlabel("Magnetic field (G)")
    ax.set_ylabel("κ/2π (MHz)")


def _scan_axes(ax: Axes, scan: ThresholdScan) -> None:
    ax.step(scan.ratio, scan.minima_count, where="mid", label="numeric count")
    ax.axvline(scan.critical_ratio, color="k", linestyle="--", label="dips merge")
    ax.axvline(scan.exact_ratio, color="C3", linestyle=":", label="analytic condition")
    ax.set_yticks([1, 2])
    ax.set_xlabel("g_c / γ_s")
    ax.set_ylabel("Minima on resonance")


def _nscale_axes(ax: Axes, data: CouplingVsN) -> None:
    root_n = np.sqrt(data.n)
    excluded = np.zeros_like(root_n, dtype=bool)
    if data.excluded is not None:
        excluded = data.excluded.astype(bool)
    ax.plot(root_n[~excluded], to_mhz(data.g_c[~excluded]), "o", label="fitted")
    if excluded.any():
        ax.plot(root_n[excluded], to_mhz(data.g_c[excluded]), "s", label="excluded")
    ax.set_xlabel("√N")
    ax.set_ylabel("g_c/2π (MHz)")


def _position_axes(ax: Axes, profile: PositionProfile) -> None:
    ax.plot(profile.position * 1e3, to_mhz(profile.g_c), "o", label="measured")
    ax.set_xlabel("Sample position (mm)")
    ax.set_ylabel("g_c/2π (MHz)")


def sinusoid_overlay(fit: SinusoidProfile, position: FloatArray, points: int = 400) -> Overlay:
    """Fitted position profile sampled for drawing, positions in mm and coupling in MHz."""
    z = np.linspace(position.min(), position.max(), points)
    return Overlay("fit", z * 1e3, to_mhz(fit(z)), "-")


def emit_plot(data: Plottable, path: Path, style: PlotStyle | None = None) -> Path:
    """Write a figure of a map, track, scan or sample series as SVG.

    Maps are drawn in dB with fields in G and frequencies in MHz. Overlays are drawn on
    top: for maps and tracks their x is a field in tesla and y an angular frequency or
    rate; for other plots they are used as given.

    Args:
        data: What to draw.
        path: Destination SVG file.
        style: Figure settings and overlay curves.

    Returns:
        The written path.

    Raises:
        GridError: If the data is empty.
        OSError: If the file cannot be written.
    """
    style = style or PlotStyle()
    path = Path(path)
    figure = Figure(figsize=(style.width, style.height))
    ax = figure.add_subplot()
    field_frequency = True
    match data:
        case SpectrumMap():
            _map_axes(ax, data, style)
        case DipTrack():
            if len(data.field) == 0:
                raise GridError("cannot plot an empty dip track")
            _track_axes(ax, data)
        case LinewidthTrack():
            if data.field.size == 0:
                raise GridError("cannot plot an empty linewidth track")
            _linewidth_axes(ax, data)
        case ThresholdScan():
            if not data.ratio:
                raise GridError("cannot plot an empty threshold scan")
            _scan_axes(ax, data)
            field_frequency = False
        case CouplingVsN() | PositionProfile() if data.g_c.size == 0:
            raise GridError("cannot plot an empty sample series")
        case CouplingVsN():
            _nscale_axes(ax, data)
            field_frequency = False
        case PositionProfile():
            _position_axes(ax, data)
            field_frequency = False
    for overlay in style.overlays:
        if field_frequency:
            color = "w" if isinstance(data, SpectrumMap) else "k"
            ax.plot(
                to_gauss(overlay.x), to_mhz(overlay.y), overlay.style, color=color, label=overlay.label
            )
        else:
            ax.plot(overlay.x, overlay.y, overlay.style, label=overlay.label)
    if style.title:
        ax.set_title(style.title)
    if ax.get_legend_handles_labels()[0]:
        ax.legend()
    with matplotlib.rc_context(DETERMINISTIC_RC):
        figure.savefig(path, format="svg", metadata={"Date": None})
    logger.info("Wrote plot %s", path)
    return path
