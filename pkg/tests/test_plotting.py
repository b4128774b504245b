from pathlib import Path

import numpy as np
import pytest

from cavity_spin_coupling.constants import DEFAULT_FIELD_TO_OMEGA, from_gauss, from_mhz
from cavity_spin_coupling.errors import GridError
from cavity_spin_coupling.estimation.fits import CouplingVsN
from cavity_spin_coupling.estimation.profile import PositionProfile, SinusoidProfile
from cavity_spin_coupling.estimation.tracks import Branch, DipTrack, LinewidthTrack
from cavity_spin_coupling.model import CavityParams, SpinEnsembleParams, rabi_branches, simulate_map
from cavity_spin_coupling.plotting import Overlay, PlotStyle, emit_plot, sinusoid_overlay
from cavity_spin_coupling.splitting import ThresholdScan

OMEGA_C = from_mhz(9800.0)
RESONANCE = from_gauss(3470.9)


def _anticrossing():
    cav = CavityParams(omega_c=OMEGA_C, kappa_c=from_mhz(0.5))
    spins = SpinEnsembleParams(gamma_s=from_mhz(0.5), resonance_field=RESONANCE, g_c=from_mhz(5.9))
    return simulate_map(
        cav,
        spins,
        from_gauss(np.linspace(3466.9, 3474.9, 11)),
        OMEGA_C + from_mhz(np.linspace(-15.0, 15.0, 61)),
    )


class Test_emit_plot:
    def test_map_with_branch_overlays(self, tmp_path: Path):
        spectrum = _anticrossing()
        upper, lower = rabi_branches(
            DEFAULT_FIELD_TO_OMEGA * (spectrum.field_axis - RESONANCE), OMEGA_C, from_mhz(5.9)
        )
        style = PlotStyle(
            title="anticrossing",
            overlays=[Overlay("upper", spectrum.field_axis, upper), Overlay("lower", spectrum.field_axis, lower)],
        )
        path = emit_plot(spectrum, tmp_path / "map.svg", style)

        content = path.read_text()
        assert content.startswith("<?xml")
        assert "<svg" in content

    def test_output_is_reproducible(self, tmp_path: Path):
        spectrum = _anticrossing()
        first = emit_plot(spectrum, tmp_path / "first.svg")
        second = emit_plot(spectrum, tmp_path / "second.svg")
        assert first.read_bytes() == second.read_bytes()

    def test_dip_track(self, tmp_path: Path):
        track = DipTrack(
            field=np.array([0.347, 0.347, 0.348, 0.348]),
            dip_frequency=np.array([1.0, 3.0, 1.5, 3.5]),
            branch=(Branch.LOWER, Branch.UPPER, Branch.LOWER, Branch.UPPER),
        )
        assert emit_plot(track, tmp_path / "track.svg").exists()

    def test_linewidth_track(self, tmp_path: Path):
        track = LinewidthTrack(field=np.array([0.347, 0.348]), kappa=np.array([1.0, 2.0]))
        assert emit_plot(track, tmp_path / "linewidth.svg").exists()

    def test_threshold_scan(self, tmp_path: Path):
        scan = ThresholdScan(
            ratio=[0.5, 0.6, 0.7, 0.8], minima_count=[1, 1, 2, 2], critical_ratio=0.644, exact_ratio=0.645
        )
        assert emit_plot(scan, tmp_path / "scan.svg").exists()

    def test_coupling_versus_spin_number(self, tmp_path: Path):
        data = CouplingVsN(
            n=np.array([1e15, 4e15, 9e15]),
            g_c=np.array([1e6, 2e6, 3e6]),
            excluded=np.array([0.0, 0.0, 1.0]),
        )
        overlay = Overlay("line", np.array([0.0, 1e8]), np.array([0.0, 0.3]), "-")
        assert emit_plot(data, tmp_path / "nscale.svg", PlotStyle(overlays=[overlay])).exists()

    def test_position_profile_with_fit(self, tmp_path: Path):
        fit = SinusoidProfile(amplitude=from_mhz(2.0), period=0.03, phase=0.4, offset=0.0)
        position = np.linspace(0.0, 0.02, 9)
        profile = PositionProfile(position=position, g_c=fit(position))
        style = PlotStyle(overlays=[sinusoid_overlay(fit, position)])
        assert emit_plot(profile, tmp_path / "position.svg", style).exists()

    @pytest.mark.parametrize(
        "data",
        [
            DipTrack(field=np.array([]), dip_frequency=np.array([]), branch=()),
            LinewidthTrack(field=np.array([]), kappa=np.array([])),
            ThresholdScan(ratio=[], minima_count=[], critical_ratio=0.6, exact_ratio=0.6),
            CouplingVsN(n=np.array([]), g_c=np.array([])),
            PositionProfile(position=np.array([]), g_c=np.array([])),
        ],
    )
    def test_empty_data(self, tmp_path: Path, data):
        with pytest.raises(GridError, match="empty"):
            emit_plot(data, tmp_path / "empty.svg")
        assert not (tmp_path / "empty.svg").exists()


def test_sinusoid_overlay_in_display_units():
    fit = SinusoidProfile(amplitude=from_mhz(2.0), period=0.03, phase=np.pi / 2, offset=0.0)
    overlay = sinusoid_overlay(fit, np.array([0.0, 0.01]), points=3)
    np.testing.assert_allclose(overlay.x, [0.0, 5.0, 10.0])
    assert overlay.y[0] == pytest.approx(2.0)
