import math

import numpy as np
import pytest

from cavity_spin_coupling.constants import from_gauss, from_mhz, to_mhz
from cavity_spin_coupling.errors import GridError, NoTransitionError
from cavity_spin_coupling.model import CavityParams, Regime, SpinEnsembleParams
from cavity_spin_coupling.splitting import (
    DEPTH_SIGNIFICANCE,
    VISIBILITY_FRACTION,
    asymptotic_threshold_ratio,
    classify_regime,
    count_minima_on_resonance,
    default_scan_grid,
    derive_quantities,
    exact_splitting_condition,
    exact_threshold_ratio,
    merge_point_scan,
    mismatch_floor,
    scan_minima_counts,
    visibility_threshold,
)

OMEGA_C = from_mhz(9800.0)


@pytest.fixture
def lossy_cavity() -> CavityParams:
    """Cavity half-width a hundred times the spin half-width of 0.14 MHz."""
    return CavityParams(omega_c=OMEGA_C, kappa_c=from_mhz(14.0))


class Test_count_minima_on_resonance:
    def test_strong_coupling_shows_rabi_gap(self):
        cav = CavityParams(omega_c=OMEGA_C, kappa_c=from_mhz(0.5))
        verdict = count_minima_on_resonance(cav, from_mhz(5.9), from_mhz(0.5))

        assert verdict.minima_count == 2
        lower, upper = (to_mhz(f - OMEGA_C) for f in verdict.dip_frequencies)
        assert upper - lower == pytest.approx(11.8, rel=1e-2)
        assert upper == pytest.approx(-lower, rel=1e-5)
        assert verdict.exact_condition_holds
        assert verdict.regime_label == Regime.STRONG

    def test_dispersive_regime_shows_one_dip(self):
        cav = CavityParams(omega_c=OMEGA_C, kappa_c=from_mhz(0.3))
        verdict = count_minima_on_resonance(cav, from_mhz(0.5), from_mhz(2.85))

        assert verdict.minima_count == 1
        assert to_mhz(verdict.dip_frequencies[0] - OMEGA_C) == pytest.approx(0.0, abs=1e-3)
        assert not verdict.exact_condition_holds
        assert verdict.regime_label == Regime.INTERMEDIATE

    def test_numeric_count_agrees_with_condition_away_from_threshold(
        self, lossy_cavity: CavityParams
    ):
        gamma_s = from_mhz(0.14)
        for ratio in (0.4, 0.55, 0.75, 1.2):
            verdict = count_minima_on_resonance(lossy_cavity, ratio * gamma_s, gamma_s)
            assert (verdict.minima_count == 2) == verdict.exact_condition_holds

    def test_window_below_bound(self):
        cav = CavityParams(omega_c=OMEGA_C, kappa_c=from_mhz(0.5))
        window, _ = default_scan_grid(cav, from_mhz(5.9), from_mhz(0.5))
        with pytest.raises(GridError, match="window"):
            count_minima_on_resonance(cav, from_mhz(5.9), from_mhz(0.5), window=window / 2)

    def test_resolution_above_bound(self):
        cav = CavityParams(omega_c=OMEGA_C, kappa_c=from_mhz(0.5))
        _, resolution = default_scan_grid(cav, from_mhz(5.9), from_mhz(0.5))
        with pytest.raises(GridError, match="resolution"):
            count_minima_on_resonance(
                cav, from_mhz(5.9), from_mhz(0.5), resolution=resolution * 2
            )

    def test_zero_coupling_is_bare_cavity(self):
        cav = CavityParams(omega_c=OMEGA_C, kappa_c=from_mhz(0.5))
        verdict = count_minima_on_resonance(cav, 0.0, from_mhz(0.5))
        assert verdict.minima_count == 1
        assert verdict.dip_depths[0] == pytest.approx(0.0, abs=1e-9)


def test_default_scan_grid_ignores_zero_rates():
    cav = CavityParams(omega_c=OMEGA_C, kappa_c=2.0)
    window, resolution = default_scan_grid(cav, 0.0, 1.0)
    assert window == 20.0
    assert resolution == 1.0 / 50


class Test_exact_threshold_ratio:
    def test_tends_to_asymptote(self):
        assert exact_threshold_ratio(1e12, 1.0) == pytest.approx(asymptotic_threshold_ratio())

    def test_measured_linewidths(self):
        ratio = exact_threshold_ratio(from_mhz(5.4), from_mhz(0.14))
        assert ratio == pytest.approx(0.6446, abs=5e-4)

    def test_condition_switches_at_ratio(self):
        kappa_c, gamma_s = 3.0, 1.0
        ratio = exact_threshold_ratio(kappa_c, gamma_s)

        def holds(r: float) -> bool:
            g_c = r * gamma_s
            return exact_splitting_condition(g_c, gamma_s, g_c**2 / (2 * kappa_c * gamma_s))

        assert holds(ratio * 1.001)
        assert not holds(ratio * 0.999)


def test_asymptotic_threshold_ratio():
    assert asymptotic_threshold_ratio() == pytest.approx(math.sqrt(math.sqrt(2) - 1))


class Test_merge_point_scan:
    def test_dips_merge_near_asymptotic_ratio(self, lossy_cavity: CavityParams):
        gamma_s = from_mhz(0.14)
        critical = merge_point_scan(lossy_cavity, gamma_s, (0.5 * gamma_s, 0.8 * gamma_s), steps=16)
        assert critical / gamma_s == pytest.approx(0.64398, rel=2e-3)

    def test_no_transition_in_range(self, lossy_cavity: CavityParams):
        gamma_s = from_mhz(0.14)
        with pytest.raises(NoTransitionError, match="2"):
            merge_point_scan(lossy_cavity, gamma_s, (1.0 * gamma_s, 2.0 * gamma_s), steps=16)

    def test_too_few_steps(self, lossy_cavity: CavityParams):
        with pytest.raises(ValueError, match="steps"):
            merge_point_scan(lossy_cavity, 1.0, (0.1, 1.0), steps=8)

    def test_empty_range(self, lossy_cavity: CavityParams):
        with pytest.raises(ValueError, match="g_c_range"):
            merge_point_scan(lossy_cavity, 1.0, (1.0, 0.5))


def test_scan_minima_counts(lossy_cavity: CavityParams):
    gamma_s = from_mhz(0.14)
    counts = scan_minima_counts(lossy_cavity, gamma_s, [0.3 * gamma_s, 1.0 * gamma_s])
    assert counts == [1, 2]


class Test_classify_regime:
    @pytest.mark.parametrize(
        ("g_c", "gamma_s", "regime"),
        [(3.0, 1.0, Regime.STRONG), (0.5, 1.0, Regime.WEAK), (1.5, 2.0, Regime.INTERMEDIATE)],
    )
    def test_labels(self, g_c: float, gamma_s: float, regime: Regime):
        assert classify_regime(g_c, kappa_c=1.0, gamma_s=gamma_s).regime_label == regime

    def test_cooperativity(self):
        assert classify_regime(2.0, 1.0, 1.0).cooperativity_C == pytest.approx(2.0)


def test_derive_quantities_from_spin_number():
    cav = CavityParams(omega_c=OMEGA_C, kappa_c=from_mhz(5.4))
    spins = SpinEnsembleParams(
        gamma_s=from_mhz(0.14),
        resonance_field=from_gauss(3500.0),
        g_s=2 * math.pi * 0.043,
        n_polarized=1e16,
    )
    quantities = derive_quantities(cav, spins)
    assert to_mhz(quantities.g_c) == pytest.approx(4.3)
    assert quantities.regime_label == Regime.INTERMEDIATE
    assert "intermediate" in str(quantities)


@pytest.fixture
def undercoupled_cavity() -> CavityParams:
    """Measured linewidths with the port loss one percent below the internal half-width."""
    return CavityParams(omega_c=OMEGA_C, kappa_c=from_mhz(5.4), kappa_e=0.99 * from_mhz(5.4))


class Test_undercoupled_cavity:
    def test_splits_above_threshold_only(self, undercoupled_cavity: CavityParams):
        gamma_s = from_mhz(0.14)
        assert count_minima_on_resonance(undercoupled_cavity, from_mhz(0.14), gamma_s).minima_count == 2
        assert count_minima_on_resonance(undercoupled_cavity, from_mhz(0.085), gamma_s).minima_count == 1
        assert count_minima_on_resonance(undercoupled_cavity, from_mhz(0.05), gamma_s).minima_count == 1

    def test_unresolved_pair_reported_at_cavity_frequency(self, undercoupled_cavity: CavityParams):
        verdict = count_minima_on_resonance(undercoupled_cavity, from_mhz(0.085), from_mhz(0.14))
        assert verdict.dip_frequencies[0] - OMEGA_C == pytest.approx(0.0, abs=1e-6 * from_mhz(5.4))

    def test_merge_point(self, undercoupled_cavity: CavityParams):
        gamma_s = from_mhz(0.14)
        critical = merge_point_scan(
            undercoupled_cavity, gamma_s, (0.5 * gamma_s, 0.8 * gamma_s), steps=16
        )
        assert 0.62 <= critical / gamma_s <= 0.66

    def test_fitted_spectrum_shows_symmetric_pair(self, undercoupled_cavity: CavityParams):
        verdict = count_minima_on_resonance(undercoupled_cavity, from_mhz(0.71), from_mhz(0.14))

        assert verdict.minima_count == 2
        lower, upper = verdict.dip_frequencies
        assert abs((lower + upper) / 2 - OMEGA_C) < 1e-6 * undercoupled_cavity.kappa_c

    def test_count_never_drops_with_coupling(self, undercoupled_cavity: CavityParams):
        gamma_s = from_mhz(0.14)
        counts = scan_minima_counts(
            undercoupled_cavity, gamma_s, list(np.linspace(0.3, 1.2, 19) * gamma_s)
        )
        assert counts == sorted(counts)
        assert counts[0] == 1
        assert counts[-1] == 2


class Test_visibility_threshold:
    def test_critical_coupling_keeps_numerical_bound(self, lossy_cavity: CavityParams):
        assert mismatch_floor(lossy_cavity) == 0.0
        assert visibility_threshold(lossy_cavity) == DEPTH_SIGNIFICANCE

    def test_scales_with_mismatch_floor(self, undercoupled_cavity: CavityParams):
        assert mismatch_floor(undercoupled_cavity) == pytest.approx(1e-4)
        assert visibility_threshold(undercoupled_cavity) == pytest.approx(VISIBILITY_FRACTION * 1e-4)

    def test_overcoupled_floor(self):
        cav = CavityParams(omega_c=OMEGA_C, kappa_c=1.0, kappa_e=1.5)
        assert mismatch_floor(cav) == pytest.approx(0.25)


def test_merge_point_matches_analytic_ratio(lossy_cavity: CavityParams):
    gamma_s = from_mhz(0.14)
    critical = merge_point_scan(lossy_cavity, gamma_s, (0.5 * gamma_s, 0.8 * gamma_s), steps=16)
    assert critical / gamma_s == pytest.approx(
        exact_threshold_ratio(lossy_cavity.kappa_c, gamma_s), rel=2e-3
    )
    assert critical / gamma_s == pytest.approx(asymptotic_threshold_ratio(), rel=5e-3)


def test_dip_count_agrees_with_condition_on_random_parameters():
    rng = np.random.default_rng(7)
    gamma_s = from_mhz(0.14)
    agree = total = 0
    for _ in range(500):
        external_ratio = rng.uniform(0.98, 1.0)
        kappa_c = rng.uniform(5.0, 200.0) * gamma_s
        ratio = rng.uniform(0.3, 1.2)
        if abs(ratio - exact_threshold_ratio(kappa_c, gamma_s)) < 0.02:
            continue
        cav = CavityParams(omega_c=OMEGA_C, kappa_c=kappa_c, kappa_e=external_ratio * kappa_c)
        verdict = count_minima_on_resonance(cav, ratio * gamma_s, gamma_s)
        total += 1
        agree += (verdict.minima_count == 2) == verdict.exact_condition_holds
    assert total > 450
    assert agree / total >= 0.99
