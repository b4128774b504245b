from pathlib import Path
import json
import math

import numpy as np
import pytest

from cavity_spin_coupling.config import load_config
from cavity_spin_coupling.constants import from_gauss, from_mhz
from cavity_spin_coupling.errors import ConfigError, GridError, NoiseModelError, SpectrumFormatError
from cavity_spin_coupling.estimation.engine import FitResult
from cavity_spin_coupling.estimation.tracks import Branch, DipTrack, LinewidthTrack
from cavity_spin_coupling.io import (
    NOISE_FLOOR,
    ReportTable,
    add_noise,
    generate_synthetic,
    ingest_spectrum_csv,
    read_coupling_vs_n_csv,
    read_dip_track_csv,
    read_kappa_csv,
    read_position_csv,
    to_db,
    to_linear,
    truth_record,
    write_dip_track_csv,
    write_linewidth_csv,
    write_spectrum_csv,
)
from cavity_spin_coupling.model import SpectrumMap


@pytest.fixture
def spectrum() -> SpectrumMap:
    return SpectrumMap(
        field_axis=from_gauss(np.array([3470.0, 3471.0])),
        frequency_axis=from_mhz(np.array([9799.5, 9800.0, 9800.5])),
        power=np.array([[0.9, 0.1, 0.8], [0.95, 0.3, 0.85]]),
    )


class Test_spectrum_csv:
    def test_linear_file_reads_back(self, tmp_path: Path, spectrum: SpectrumMap):
        path = write_spectrum_csv(spectrum, tmp_path / "map.csv")
        back = ingest_spectrum_csv(path)

        assert path.read_text().startswith("# scale: linear\nfield_G\\freq_MHz,")
        np.testing.assert_array_equal(back.power, spectrum.power)
        np.testing.assert_allclose(back.field_axis, spectrum.field_axis, rtol=1e-15)
        np.testing.assert_allclose(back.frequency_axis, spectrum.frequency_axis, rtol=1e-15)

    def test_db_file_is_converted_to_linear(self, tmp_path: Path):
        path = tmp_path / "db.csv"
        path.write_text("# scale: dB\nfield_G\\freq_MHz,9800\n3470,-10\n")
        back = ingest_spectrum_csv(path)

        assert back.scale == "linear"
        assert back.power[0, 0] == pytest.approx(0.1)

    def test_written_in_db(self, tmp_path: Path, spectrum: SpectrumMap):
        path = write_spectrum_csv(spectrum, tmp_path / "map.csv", scale="dB")
        assert path.read_text().startswith("# scale: dB\n")
        np.testing.assert_allclose(ingest_spectrum_csv(path).power, spectrum.power, rtol=1e-12)

    @pytest.mark.parametrize(
        ("body", "line", "reason"),
        [
            ("field_G\\freq_MHz,9800\n", 1, "first line"),
            ("# scale: log\n", 1, "unknown scale"),
            ("# scale: linear\nfield_G\\freq_MHz,9800,9801\n3470,0.5\n", 3, "expected 3 cells"),
            ("# scale: linear\nfield_G\\freq_MHz,9800\n3470,abc\n", 3, "'abc' is not a number"),
            ("# scale: linear\nfield_G\\freq_MHz,9800\n3470,nan\n", 3, "non-finite"),
            ("# scale: linear\nfield_G\\freq_MHz,9801,9800\n3470,1,1\n", 2, "frequency axis"),
            ("# scale: linear\nfield_G\\freq_MHz,9800\n3471,1\n3470,1\n", 4, "field axis"),
            ("# scale: linear\nfield_G\\freq_MHz,9800\n", 2, "no field rows"),
            ("# scale: linear\nfield_G\\freq_MHz,9800\n3470,-0.5\n", 3, "non-negative"),
        ],
    )
    def test_malformed(self, tmp_path: Path, body: str, line: int, reason: str):
        path = tmp_path / "bad.csv"
        path.write_text(body)
        with pytest.raises(SpectrumFormatError, match=reason) as excinfo:
            ingest_spectrum_csv(path)
        assert excinfo.value.line == line
        assert str(excinfo.value).startswith(f"{path}:{line}: ")


class Test_scale_conversion:
    def test_db_to_linear(self):
        db = SpectrumMap(
            field_axis=np.array([1.0]),
            frequency_axis=np.array([1.0, 2.0]),
            power=np.array([[-10.0, 0.0]]),
            scale="dB",
        )
        np.testing.assert_allclose(to_linear(db).power, [[0.1, 1.0]])

    def test_linear_is_unchanged(self, spectrum: SpectrumMap):
        assert to_linear(spectrum) is spectrum

    def test_zero_power_has_no_db_value(self, spectrum: SpectrumMap):
        zero = SpectrumMap(
            field_axis=spectrum.field_axis,
            frequency_axis=spectrum.frequency_axis,
            power=np.zeros_like(spectrum.power),
        )
        with pytest.raises(GridError, match="dB"):
            to_db(zero)


class Test_tables:
    def test_dip_track(self, tmp_path: Path):
        track = DipTrack(
            field=from_gauss(np.array([3470.0, 3470.0, 3471.0, 3471.0])),
            dip_frequency=from_mhz(np.array([9794.0, 9806.0, 9795.0, 9807.0])),
            branch=(Branch.LOWER, Branch.UPPER, Branch.LOWER, Branch.UPPER),
        )
        back = read_dip_track_csv(write_dip_track_csv(track, tmp_path / "track.csv"))

        assert back.branch == track.branch
        np.testing.assert_allclose(back.dip_frequency, track.dip_frequency, rtol=1e-15)

    def test_unknown_branch(self, tmp_path: Path):
        path = tmp_path / "track.csv"
        path.write_text("field_G,freq_MHz,branch\n3470,9800,middle\n")
        with pytest.raises(SpectrumFormatError, match="unknown branch 'middle'"):
            read_dip_track_csv(path)

    def test_missing_column(self, tmp_path: Path):
        path = tmp_path / "track.csv"
        path.write_text("field_G,freq_MHz\n3470,9800\n")
        with pytest.raises(SpectrumFormatError, match="branch"):
            read_dip_track_csv(path)

    def test_linewidth_reads_as_kappa(self, tmp_path: Path):
        track = LinewidthTrack(
            field=from_gauss(np.array([3470.0, 3471.0])), kappa=from_mhz(np.array([0.5, 0.7]))
        )
        field, kappa = read_kappa_csv(write_linewidth_csv(track, tmp_path / "kappa.csv"))
        np.testing.assert_allclose(kappa, track.kappa, rtol=1e-15)
        np.testing.assert_allclose(field, track.field, rtol=1e-15)

    def test_coupling_vs_n_with_errors(self, tmp_path: Path):
        path = tmp_path / "nscale.csv"
        path.write_text("n,g_c_MHz,g_c_err_MHz,excluded\n1e15,1.0,0.1,0\n4e15,2.0,0.2,true\n")
        n, g_c, weight, excluded = read_coupling_vs_n_csv(path)

        np.testing.assert_allclose(n, [1e15, 4e15])
        np.testing.assert_allclose(g_c, from_mhz(np.array([1.0, 2.0])))
        assert weight is not None and excluded is not None
        assert weight[0] == pytest.approx(1 / from_mhz(0.1) ** 2)
        np.testing.assert_array_equal(excluded, [False, True])

    def test_coupling_vs_n_minimal(self, tmp_path: Path):
        path = tmp_path / "nscale.csv"
        path.write_text("n,g_c_MHz\n1e15,1.0\n")
        _, _, weight, excluded = read_coupling_vs_n_csv(path)
        assert weight is None and excluded is None

    def test_non_positive_error(self, tmp_path: Path):
        path = tmp_path / "nscale.csv"
        path.write_text("n,g_c_MHz,g_c_err_MHz\n1e15,1.0,0\n")
        with pytest.raises(SpectrumFormatError, match="positive"):
            read_coupling_vs_n_csv(path)

    def test_position_in_mm(self, tmp_path: Path):
        path = tmp_path / "position.csv"
        path.write_text("position_mm,g_c_MHz\n1.5,2.0\n")
        position, g_c = read_position_csv(path)
        assert position[0] == pytest.approx(1.5e-3)
        assert g_c[0] == pytest.approx(from_mhz(2.0))

    def test_header_only(self, tmp_path: Path):
        path = tmp_path / "position.csv"
        path.write_text("position_mm,g_c_MHz\n")
        with pytest.raises(SpectrumFormatError, match="no data rows"):
            read_position_csv(path)


class Test_ReportTable:
    def test_fit_rows_in_display_units(self):
        table = ReportTable("fit")
        table.add_fit(
            FitResult(
                parameters={"g_c": from_mhz(1.15), "resonance_field": 0.34709},
                residual_norm=0.0,
                covariance_diag={"g_c": from_mhz(0.01) ** 2, "resonance_field": 0.0},
                iterations=7,
                converged=True,
                frozen=["resonance_field"],
                notes={"field_conversion": "2.8 MHz/G"},
            ),
            "fit-dispersive",
        )
        g_c, field = table.rows

        assert (g_c.unit, field.unit) == ("MHz", "G")
        assert g_c.value == pytest.approx(1.15)
        assert g_c.uncertainty == pytest.approx(0.01)
        assert field.value == pytest.approx(3470.9)
        assert field.provenance == "frozen"
        assert field.formatted_uncertainty() == "frozen"
        assert table.notes == {"field_conversion": "2.8 MHz/G", "converged": "true", "iterations": "7"}

    def test_single_spin_coupling_in_hz(self):
        table = ReportTable("nscale")
        table.add("g_s", 2 * math.pi * 0.043, "sqrt(N) regression")
        assert table.rows[0].unit == "Hz"
        assert table.rows[0].value == pytest.approx(0.043)

    def test_written_as_text_and_json(self, tmp_path: Path):
        table = ReportTable("scan")
        table.add("critical_ratio", 0.644, "dip merge scan")
        table.notes["regime"] = "intermediate"
        text, machine = table.write(tmp_path)

        assert "critical_ratio" in text.read_text()
        assert "regime: intermediate" in text.read_text()
        body = json.loads(machine.read_text())
        assert body["rows"][0]["value"] == 0.644
        assert body["notes"] == {"regime": "intermediate"}


class Test_add_noise:
    power = np.full((4, 50), 0.5)

    def test_none_returns_input(self):
        assert add_noise(self.power, "none", 0.1, np.random.default_rng(0)) is self.power

    def test_seeded_noise_is_reproducible(self):
        first = add_noise(self.power, "additive", 0.01, np.random.default_rng(5))
        second = add_noise(self.power, "additive", 0.01, np.random.default_rng(5))
        np.testing.assert_array_equal(first, second)
        assert not np.array_equal(first, self.power)

    def test_clipped_at_floor(self):
        noisy = add_noise(self.power, "multiplicative", 10.0, np.random.default_rng(1))
        assert noisy.min() == NOISE_FLOOR

    def test_clipped_map_is_writable_in_db(self, tmp_path: Path):
        noisy = SpectrumMap(
            field_axis=from_gauss(np.linspace(3466.0, 3476.0, 4)),
            frequency_axis=from_mhz(np.linspace(9790.0, 9810.0, 50)),
            power=add_noise(self.power, "additive", 1.0, np.random.default_rng(2)),
        )
        assert noisy.power.min() == NOISE_FLOOR

        path = write_spectrum_csv(noisy, tmp_path / "noisy.csv", scale="dB")
        np.testing.assert_allclose(ingest_spectrum_csv(path).power, noisy.power, rtol=1e-9)

    def test_unknown_model(self):
        with pytest.raises(NoiseModelError, match="brown"):
            add_noise(self.power, "brown", 0.1, np.random.default_rng(0))


class Test_generate_synthetic:
    def test_writes_truth(self, simulate_config: Path):
        config = load_config(simulate_config)
        spectrum, sidecar = generate_synthetic(config)

        assert spectrum.power.shape == (21, 601)
        truth = json.loads(sidecar.read_text())
        assert truth == json.loads(json.dumps(truth_record(config)))
        assert truth["g_c_MHz"] == pytest.approx(5.9)
        assert truth["resonance_field_G"] == pytest.approx(3470.9)
        assert truth["noise"] == {"model": "additive", "sigma": 0.0, "seed": None}
        assert spectrum.power.min() >= 0.0

    def test_same_seed_same_spectrum(self, write_config, simulate_config: Path):
        body = simulate_config.read_text() + "\n[noise]\nmodel = additive\nsigma = 0.01\nseed = 9\n"
        config = load_config(write_config(body, "noisy.ini"))
        first, _ = generate_synthetic(config)
        second, _ = generate_synthetic(config)
        np.testing.assert_array_equal(first.power, second.power)

    def test_needs_axes(self, write_config):
        path = write_config(
            """
            [run]
            command = simulate
            [parameters]
            omega_c = 9800
            kappa_c = 0.5
            gamma_s = 0.5
            g_c = 1
            resonance_field = 3470.9
            """
        )
        with pytest.raises(ConfigError, match="axes"):
            generate_synthetic(load_config(path))
