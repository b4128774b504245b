"""Detection and classification of normal-mode splitting in the reflection spectrum."""

from collections.abc import Callable
from dataclasses import dataclass, field
import logging
import math

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.signal import argrelmin

from cavity_spin_coupling.errors import GridError, NoTransitionError
from cavity_spin_coupling.model import (
    CavityParams,
    DerivedQuantities,
    Regime,
    SpinEnsembleParams,
    cooperativity,
    reflection_power,
)

logger = logging.getLogger(__name__)

WINDOW_FACTOR = 10
"""Scan half-window in units of the largest rate."""
RESOLUTION_DIVISOR = 50
"""Grid step must be at most the smallest rate divided by this."""
DEPTH_SIGNIFICANCE = 1e-12
"""Minimum depth of a minimum below its neighbouring maxima, in linear power."""
VISIBILITY_FRACTION = 0.1
"""Minimum rise of the barrier between two dips, in units of the mismatch floor."""
REFINE_TOLERANCE = 1e-10
"""Refined dip positions are accurate to this fraction of omega_c."""


@dataclass(frozen=True)
class SplittingVerdict:
    """Outcome of counting reflection dips on resonance."""

    minima_count: int
    """Number of distinct dips, 1 or 2."""
    dip_frequencies: list[float] = field(default_factory=list[float])
    """Dip angular frequencies in rad/s, ascending."""
    dip_depths: list[float] = field(default_factory=list[float])
    """|S11|² at each dip."""
    exact_condition_holds: bool = False
    """Whether the analytic two-minima condition is satisfied."""
    cooperativity_C: float = 0.0
    """g_c² / (2 kappa_c gamma_s)."""
    regime_label: Regime = Regime.WEAK
    """Coupling regime."""


def _positive_rates(*rates: float) -> list[float]:
    return [rate for rate in rates if rate > 0]


def default_scan_grid(cav: CavityParams, g_c: float, gamma_s: float) -> tuple[float, float]:
    """Smallest window and largest resolution allowed for a dip count.

    Returns:
        (window, resolution) in rad/s.
    """
    rates = _positive_rates(g_c, cav.kappa_c, gamma_s)
    return WINDOW_FACTOR * max(rates), min(rates) / RESOLUTION_DIVISOR


def _significant(power: np.ndarray, index: int, minima: np.ndarray) -> bool:
    """Whether a grid minimum lies clearly below the maxima on both sides."""
    previous = minima[minima < index]
    following = minima[minima > index]
    left = power[(previous[-1] if previous.size else 0) : index + 1]
    right = power[index : (following[0] if following.size else power.size - 1) + 1]
    barrier = min(left.max(), right.max())
    return barrier - power[index] >= DEPTH_SIGNIFICANCE


def mismatch_floor(cav: CavityParams) -> float:
    """Reflected power of the bare cavity at resonance, (1 - kappa_e/kappa_c)².

    >>> round(mismatch_floor(CavityParams(omega_c=1e9, kappa_c=1e6, kappa_e=0.99e6)), 12)
    0.0001
    """
    return (1 - cav.external_loss / cav.kappa_c) ** 2


def visibility_threshold(cav: CavityParams) -> float:
    """Rise of the barrier between two dips needed to count them apart, in linear power.

    Off critical coupling the bare cavity leaves a reflection floor, and a barrier small
    next to that floor is not a resolved splitting. At critical coupling only the
    numerical significance bound applies.
    """
    return max(DEPTH_SIGNIFICANCE, VISIBILITY_FRACTION * mismatch_floor(cav))


def _merge_unresolved(
    dips: list[tuple[float, float]],
    offsets: np.ndarray,
    power: np.ndarray,
    threshold: float,
    power_at: Callable[[float], float],
) -> list[tuple[float, float]]:
    """Join neighbouring dips whose separating barrier stays below the threshold.

    A joined pair is reported as one dip at its midpoint.
    """
    merged = list(dips)
    index = 0
    while index < len(merged) - 1:
        (left, left_depth), (right, right_depth) = merged[index], merged[index + 1]
        between = power[(offsets > left) & (offsets < right)]
        barrier = float(between.max()) if between.size else max(left_depth, right_depth)
        if barrier - max(left_depth, right_depth) < threshold:
            middle = (left + right) / 2
            merged[index : index + 2] = [(middle, power_at(middle))]
            index = max(index - 1, 0)
            continue
        index += 1
    return merged


def count_minima_on_resonance(
    cav: CavityParams,
    g_c: float,
    gamma_s: float,
    window: float | None = None,
    resolution: float | None = None,
) -> SplittingVerdict:
    """Count the reflection dips versus probe frequency at zero detuning.

    The power is scanned on [omega_c - window, omega_c + window], every interior grid
    minimum is refined with a bounded Brent (golden-section with parabolic steps)
    search, and refined minima closer than the grid resolution are merged. Two dips also
    count as one when the barrier between them rises less than
    :func:`visibility_threshold` above the shallower dip.

    Args:
        cav: Cavity parameters.
        g_c: Collective coupling in rad/s.
        gamma_s: Spin half-width in rad/s.
        window: Half-width of the scan in rad/s, at least 10 x max(g_c, kappa_c, gamma_s).
            Defaults to that bound.
        resolution: Grid step in rad/s, at most min(g_c, kappa_c, gamma_s)/50 where zero
            rates are left out. Defaults to that bound.

    Returns:
        The verdict with dips sorted by frequency.

    Raises:
        GridError: If window or resolution violate their bounds.
    """
    min_window, max_resolution = default_scan_grid(cav, g_c, gamma_s)
    window = min_window if window is None else window
    resolution = max_resolution if resolution is None else resolution
    if window < min_window * (1 - 1e-12):
        raise GridError(f"window {window:.6g} rad/s is below the required {min_window:.6g} rad/s")
    if not 0 < resolution <= max_resolution * (1 + 1e-12):
        raise GridError(
            f"resolution {resolution:.6g} rad/s exceeds the allowed {max_resolution:.6g} rad/s"
        )

    n_half = math.ceil(window / resolution)
    step = window / n_half
    offsets = np.arange(-n_half, n_half + 1) * step

    def power_at(offset: float) -> float:
        return float(reflection_power(cav.omega_c + offset, 0.0, cav, g_c, gamma_s))

    power = reflection_power(cav.omega_c + offsets, 0.0, cav, g_c, gamma_s)
    (candidates,) = argrelmin(power)
    kept = [int(i) for i in candidates if _significant(power, int(i), candidates)]
    if not kept:
        raise GridError("no reflection dip inside the scan window")

    tolerance = REFINE_TOLERANCE * cav.omega_c
    dips: list[tuple[float, float]] = []
    for index in kept:
        result = minimize_scalar(
            power_at,
            bounds=(offsets[index - 1], offsets[index + 1]),
            method="bounded",
            options={"xatol": tolerance},
        )
        dips.append((float(result.x), float(result.fun)))

    merge_distance = max(resolution, 1e-9 * cav.omega_c)
    merged: list[tuple[float, float]] = []
    for offset, depth in sorted(dips):
        if merged and offset - merged[-1][0] < merge_distance:
            if depth < merged[-1][1]:
                merged[-1] = (offset, depth)
            continue
        merged.append((offset, depth))
    merged = _merge_unresolved(merged, offsets, power, visibility_threshold(cav), power_at)

    quantities = classify_regime(g_c, cav.kappa_c, gamma_s)
    return SplittingVerdict(
        minima_count=len(merged),
        dip_frequencies=[cav.omega_c + offset for offset, _ in merged],
        dip_depths=[depth for _, depth in merged],
        exact_condition_holds=exact_splitting_condition(
            g_c, gamma_s, quantities.cooperativity_C
        ),
        cooperativity_C=quantities.cooperativity_C,
        regime_label=quantities.regime_label,
    )


def exact_splitting_condition(g_c: float, gamma_s: float, C: float) -> bool:
    """Analytic test for two reflection minima on resonance.

    Two minima exist if g_c⁴ - γ_s²(1 + 4C)(γ_s² - 2g_c²) > 0, derived for
    kappa_e close to kappa_c. The test is evaluated in x = (g_c/γ_s)².

    >>> exact_splitting_condition(1.0, 1.0, 0.0)
    True
    >>> exact_splitting_condition(0.6, 1.0, 0.0)
    False
    """
    x = (g_c / gamma_s) ** 2
    return x**2 - (1 + 4 * C) * (1 - 2 * x) > 0


def asymptotic_threshold_ratio() -> float:
    """Critical g_c/γ_s for splitting when kappa_c dominates, √(√2 - 1).

    >>> round(asymptotic_threshold_ratio(), 4)
    0.6436
    """
    return math.sqrt(math.sqrt(2) - 1)


def exact_threshold_ratio(kappa_c: float, gamma_s: float) -> float:
    """Critical g_c/γ_s where the analytic two-minima condition starts to hold.

    With C = g_c²/(2κ_c γ_s) the condition is a quadratic in x = (g_c/γ_s)², solved here
    for its positive root. For kappa_c much larger than gamma_s this tends to
    :func:`asymptotic_threshold_ratio`.

    >>> round(exact_threshold_ratio(kappa_c=1e9, gamma_s=1.0), 4)
    0.6436
    """
    r = gamma_s / kappa_c
    a, b = 1 + 4 * r, 2 - 2 * r
    x = (-b + math.sqrt(b**2 + 4 * a)) / (2 * a)
    return math.sqrt(x)


@dataclass(frozen=True)
class ThresholdScan:
    """Dip counts over a range of couplings, with the located transition."""

    ratio: list[float]
    """Sampled g_c/γ_s."""
    minima_count: list[int]
    """On-resonance dip count at each sample."""
    critical_ratio: float
    """g_c/γ_s where the dips merge, from the numeric scan."""
    exact_ratio: float
    """g_c/γ_s where the analytic condition switches."""


def scan_minima_counts(
    cav: CavityParams, gamma_s: float, g_c_values: list[float]
) -> list[int]:
    """On-resonance dip count for each collective coupling."""
    return [count_minima_on_resonance(cav, g_c, gamma_s).minima_count for g_c in g_c_values]


def merge_point_scan(
    cav: CavityParams,
    gamma_s: float,
    g_c_range: tuple[float, float],
    steps: int = 64,
) -> float:
    """Critical collective coupling where the two on-resonance dips merge into one.

    The range is first sampled on ``steps`` points to bracket the transition, which is
    then bisected to a relative accuracy of 1e-4.

    Args:
        cav: Cavity parameters.
        gamma_s: Spin half-width in rad/s.
        g_c_range: (low, high) collective couplings in rad/s.
        steps: Number of coarse samples, at least 16.

    Returns:
        Critical g_c in rad/s.

    Raises:
        ValueError: If steps is below 16 or the range is empty.
        NoTransitionError: If the low end does not show 1 dip or the high end 2 dips.
    """
    low, high = g_c_range
    if steps < 16:
        raise ValueError(f"steps must be at least 16, got {steps}")
    if not 0 <= low < high:
        raise ValueError(f"g_c_range must satisfy 0 <= low < high, got {g_c_range}")

    def count(g_c: float) -> int:
        return count_minima_on_resonance(cav, g_c, gamma_s).minima_count

    low_count, high_count = count(low), count(high)
    if low_count != 1 or high_count != 2:
        raise NoTransitionError(low_count, high_count)

    samples = np.linspace(low, high, steps)
    for below, above in zip(samples[:-1], samples[1:]):
        if count(float(above)) == 2:
            low, high = float(below), float(above)
            break

    while high - low > 1e-4 * high:
        middle = (low + high) / 2
        if count(middle) == 2:
            high = middle
        else:
            low = middle
    critical = (low + high) / 2
    logger.info("Dips merge at g_c = %.6g rad/s (g_c/gamma_s = %.4f)", critical, critical / gamma_s)
    return critical


def classify_regime(g_c: float, kappa_c: float, gamma_s: float) -> DerivedQuantities:
    """Label the coupling regime and attach the cooperativity.

    Strong when g_c exceeds both kappa_c and gamma_s, weak when it is below both,
    intermediate otherwise.

    >>> str(classify_regime(2.0, 1.0, 1.0))
    'strong (C = 2)'
    """
    if g_c > kappa_c and g_c > gamma_s:
        regime = Regime.STRONG
    elif g_c < kappa_c and g_c < gamma_s:
        regime = Regime.WEAK
    else:
        regime = Regime.INTERMEDIATE
    return DerivedQuantities(
        g_c=g_c,
        cooperativity_C=cooperativity(g_c, kappa_c, gamma_s),
        regime_label=regime,
    )


def derive_quantities(cav: CavityParams, spins: SpinEnsembleParams) -> DerivedQuantities:
    """Collective coupling, cooperativity and regime of a parameter set."""
    return classify_regime(spins.collective_g, cav.kappa_c, spins.gamma_s)
