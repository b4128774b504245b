from collections.abc import Callable
from pathlib import Path
import math

import numpy as np
import pytest

from cavity_spin_coupling.config import Command, ParameterBlock, load_config
from cavity_spin_coupling.constants import CODATA, DEFAULT_FIELD_TO_OMEGA, MHZ, from_gauss, from_mhz
from cavity_spin_coupling.errors import ConfigError, NoiseModelError

type WriteConfig = Callable[..., Path]


class Test_load_config:
    def test_converts_to_internal_units(self, simulate_config: Path):
        config = load_config(simulate_config)

        assert config.command == Command.SIMULATE
        p = config.parameters
        assert p.omega_c == from_mhz(9800.0)
        assert p.kappa_c == from_mhz(0.5)
        assert p.g_c == from_mhz(5.9)
        assert p.resonance_field == from_gauss(3470.9)
        assert p.field_to_omega == DEFAULT_FIELD_TO_OMEGA
        assert p.magnetic_moment == CODATA.bohr_magneton_muB
        assert config.grid.field_axis is not None and config.grid.field_axis.size == 21
        assert config.grid.frequency_axis is not None
        assert config.grid.frequency_axis[0] == pytest.approx(from_mhz(9785.0))
        assert config.io.output_dir == simulate_config.parent / "out"
        assert config.io.plot is False
        assert config.dataset_license == "CC-BY-4.0"
        assert config.title == "simulate"

    def test_single_spin_coupling_in_hz(self, write_config: WriteConfig):
        path = write_config(
            """
            [run]
            command = nscale
            [parameters]
            g_s = 0.043
            field_to_omega = 2.9
            """
        )
        p = load_config(path).parameters
        assert p.g_s == pytest.approx(2 * math.pi * 0.043)
        assert p.field_to_omega == pytest.approx(2.9 * MHZ / 1e-4)

    def test_external_loss_ratio(self, write_config: WriteConfig):
        path = write_config(
            """
            [run]
            command = threshold-scan
            [parameters]
            kappa_c = 5.4
            kappa_e_ratio = 0.99
            """
        )
        assert load_config(path).parameters.kappa_e == pytest.approx(0.99 * from_mhz(5.4))

    def test_inline_data(self, write_config: WriteConfig):
        path = write_config(
            """
            [run]
            command = nscale
            [data]
            n = 7.8e14, 3.1e15
            g_c = 1.15 2.0
            excluded = no, yes
            """
        )
        data = load_config(path).data
        assert data.n is not None and data.g_c is not None and data.excluded is not None
        np.testing.assert_allclose(data.n, [7.8e14, 3.1e15])
        np.testing.assert_allclose(data.g_c, from_mhz(np.array([1.15, 2.0])))
        np.testing.assert_array_equal(data.excluded, [False, True])

    def test_fit_options(self, write_config: WriteConfig):
        path = write_config(
            """
            [run]
            command = position
            [fit]
            frozen = kappa_e, omega_c
            averaging = mean
            sample_length = 4
            """
        )
        fit = load_config(path).fit
        assert fit.frozen == ("kappa_e", "omega_c")
        assert fit.averaging == "mean"
        assert fit.sample_length == pytest.approx(4e-3)
        assert fit.sample_center is None

    def test_command_line_command_without_run_section(self, write_config: WriteConfig):
        path = write_config("[parameters]\ngamma_s = 0.14\n")
        assert load_config(path, command="threshold-scan").command == Command.THRESHOLD_SCAN

    def test_overrides(self, simulate_config: Path, tmp_path: Path):
        config = load_config(simulate_config, seed=11, output_dir=tmp_path / "elsewhere")
        assert config.noise.seed == 11
        assert config.io.output_dir == tmp_path / "elsewhere"

    def test_seed_override_satisfies_noise(self, write_config: WriteConfig):
        path = write_config(
            """
            [run]
            command = simulate
            [noise]
            model = additive
            sigma = 0.01
            """
        )
        with pytest.raises(ConfigError, match="seed is mandatory"):
            load_config(path)
        assert load_config(path, seed=3).noise.seed == 3

    def test_noise_defaults_to_additive(self, write_config: WriteConfig):
        clean = load_config(write_config("[run]\ncommand = simulate\n"))
        assert clean.noise.model == "additive"
        assert not clean.noise.enabled

        path = write_config("[run]\ncommand = simulate\n[noise]\nsigma = 0.01\n", "sigma.ini")
        with pytest.raises(ConfigError, match="seed is mandatory"):
            load_config(path)
        noisy = load_config(path, seed=5)
        assert noisy.noise.enabled
        assert noisy.noise.model == "additive"

    @pytest.mark.parametrize(
        ("body", "message"),
        [
            ("[run]\ncommand = simulate\n[extra]\nkey = 1\n", "unknown sections"),
            ("[run]\ncommand = dance\n", "unknown command"),
            ("[parameters]\nkappa_c = 1\n", "no \\[run\\] command"),
            ("[run]\ncommand = simulate\n[parameters]\nkappa_c = fast\n", "kappa_c"),
            ("[run]\ncommand = simulate\n[grid]\nfield_min = 1\n", "field_min, field_max"),
            ("[run]\ncommand = simulate\n[grid]\ng_c_min = 1\n", "together"),
            ("[run]\ncommand = simulate\n[grid]\ng_c_min = 2\ng_c_max = 1\n", "g_c_min < g_c_max"),
            ("[run]\ncommand = simulate\n[grid]\nscan_steps = 8\n", "scan_steps"),
            ("[run]\ncommand = position\n[fit]\naveraging = median\n", "averaging"),
            ("[run]\ncommand = position\n[fit]\nsample_length = -1\n", "sample_length"),
            ("[run]\ncommand = simulate\n[noise]\nsigma = -1\n", "sigma"),
            ("[run]\ncommand = simulate\n[io]\nscale = log\n", "scale"),
            ("[run]\ncommand = simulate\n[io]\nplot = maybe\n", "plot"),
            (
                "[run]\ncommand = simulate\n[parameters]\nkappa_c = 1\nkappa_e = 1\nkappa_e_ratio = 1\n",
                "both",
            ),
        ],
    )
    def test_invalid(self, write_config: WriteConfig, body: str, message: str):
        with pytest.raises(ConfigError, match=message):
            load_config(write_config(body))

    def test_unknown_noise_model(self, write_config: WriteConfig):
        path = write_config("[run]\ncommand = simulate\n[noise]\nmodel = pink\nseed = 1\n")
        with pytest.raises(NoiseModelError, match="pink"):
            load_config(path)

    def test_command_mismatch(self, simulate_config: Path):
        with pytest.raises(ConfigError, match="not 'nscale'"):
            load_config(simulate_config, command=Command.NSCALE)

    def test_missing_file(self, tmp_path: Path):
        with pytest.raises(ConfigError, match="cannot read config"):
            load_config(tmp_path / "absent.ini")


class Test_ParameterBlock:
    def test_require_names_every_missing_value(self):
        with pytest.raises(ConfigError, match="omega_c, kappa_c"):
            ParameterBlock().cavity()

    def test_spins_need_a_coupling(self):
        block = ParameterBlock(gamma_s=1.0, resonance_field=0.35)
        with pytest.raises(ConfigError, match="g_c, or both"):
            block.spins()

    def test_spins_from_spin_number(self):
        block = ParameterBlock(gamma_s=1.0, resonance_field=0.35, g_s=2.0, n_polarized=9.0)
        assert block.spins().collective_g == pytest.approx(6.0)

    def test_fit_values_skip_unset(self):
        assert ParameterBlock(g_c=1.0, kappa_c=2.0).fit_values() == {"g_c": 1.0, "kappa_c": 2.0}
