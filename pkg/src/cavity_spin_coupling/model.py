"""Forward models of a microwave cavity coupled to an electron spin ensemble.

All functions are pure and accept numpy arrays wherever a rate or frequency is
expected, so a whole spectrum is one call.
"""

from dataclasses import dataclass
from enum import StrEnum
from typing import Literal
import logging

import numpy as np
from numpy.typing import ArrayLike, NDArray

from cavity_spin_coupling.constants import CODATA, DEFAULT_FIELD_TO_OMEGA, PhysicalConstants
from cavity_spin_coupling.errors import GridError, ParameterError

logger = logging.getLogger(__name__)

type FloatArray = NDArray[np.float64]


@dataclass(frozen=True)
class CavityParams:
    """Bare cavity mode seen in reflection."""

    omega_c: float
    """Cavity angular frequency in rad/s."""
    kappa_c: float
    """Internal half-width in rad/s, far from the spin resonance."""
    kappa_e: float | None = None
    """External loss rate in rad/s. Defaults to kappa_c (critical coupling)."""
    mode_volume: float | None = None
    """Magnetic mode volume in m³, only needed for the single-spin coupling estimate."""

    def __post_init__(self) -> None:
        if self.kappa_e is None:
            object.__setattr__(self, "kappa_e", self.kappa_c)
        if not self.omega_c > 0:
            raise ParameterError(f"omega_c must be positive, got {self.omega_c}")
        if not self.kappa_c > 0:
            raise ParameterError(f"kappa_c must be positive, got {self.kappa_c}")
        if not self.external_loss >= 0:
            raise ParameterError(f"kappa_e must be non-negative, got {self.kappa_e}")
        if self.mode_volume is not None and not self.mode_volume > 0:
            raise ParameterError(
                f"mode_volume must be positive when given, got {self.mode_volume}"
            )

    @property
    def external_loss(self) -> float:
        """kappa_e as a plain float."""
        assert self.kappa_e is not None
        return self.kappa_e


@dataclass(frozen=True)
class SpinEnsembleParams:
    """Spin ensemble tuned through the cavity by a static magnetic field."""

    gamma_s: float
    """Spin half-width in rad/s."""
    resonance_field: float
    """Field B_r in tesla at which the spins are resonant with the cavity."""
    g_s: float = 0.0
    """Single-spin coupling in rad/s."""
    n_polarized: float = 0.0
    """Number of polarized spins."""
    field_to_omega: float = DEFAULT_FIELD_TO_OMEGA
    """m0/ħ, converts a field offset in tesla to a detuning in rad/s."""
    g_c: float | None = None
    """Collective coupling in rad/s. When None it is derived as g_s √N."""

    def __post_init__(self) -> None:
        if not self.gamma_s > 0:
            raise ParameterError(f"gamma_s must be positive, got {self.gamma_s}")
        if not self.n_polarized >= 0:
            raise ParameterError(f"n_polarized must be non-negative, got {self.n_polarized}")
        if self.field_to_omega == 0:
            raise ParameterError("field_to_omega must be non-zero")
        if self.g_c is not None and not self.g_c >= 0:
            raise ParameterError(f"g_c must be non-negative, got {self.g_c}")

    @property
    def collective_g(self) -> float:
        """Collective coupling g_c in rad/s."""
        if self.g_c is not None:
            return self.g_c
        return float(collective_coupling(self.g_s, self.n_polarized))


@dataclass(frozen=True)
class SpectrumMap:
    """Reflected power on a (magnetic field, probe frequency) grid."""

    field_axis: FloatArray
    """Magnetic field in tesla, strictly increasing."""
    frequency_axis: FloatArray
    """Probe angular frequency in rad/s, strictly increasing."""
    power: FloatArray
    """|S11|², one row per field value and one column per frequency."""
    scale: Literal["linear", "dB"] = "linear"
    """Whether power holds linear |S11|² or 10 log10 of it."""

    def __post_init__(self) -> None:
        validate_axis(self.field_axis, "field_axis")
        validate_axis(self.frequency_axis, "frequency_axis")
        expected = (len(self.field_axis), len(self.frequency_axis))
        if self.power.shape != expected:
            raise GridError(
                f"power has shape {self.power.shape}, expected {expected} from the axes"
            )
        if not np.all(np.isfinite(self.power)):
            raise GridError("power contains non-finite values")
        if self.scale == "linear" and np.any(self.power < 0):
            raise GridError("linear power must be non-negative")


class Regime(StrEnum):
    """Coupling regime of a cavity-spin system."""

    STRONG = "strong"
    INTERMEDIATE = "intermediate"
    WEAK = "weak"


@dataclass(frozen=True)
class DerivedQuantities:
    """Quantities that follow from a parameter set."""

    g_c: float
    """Collective coupling in rad/s."""
    cooperativity_C: float
    """g_c² / (2 kappa_c gamma_s)."""
    regime_label: Regime
    """Strong, intermediate or weak coupling."""

    def __str__(self) -> str:
        return f"{self.regime_label} (C = {self.cooperativity_C:.3g})"


def validate_axis(axis: ArrayLike, name: str) -> FloatArray:
    """Check an axis is a non-empty, finite, strictly increasing 1-D array.

    Args:
        axis: The axis values.
        name: Name used in the error message.

    Returns:
        The axis as a float array.

    Raises:
        GridError: If the axis is empty, not 1-D, non-finite or not strictly increasing.
    """
    values = np.asarray(axis, dtype=np.float64)
    if values.ndim != 1 or values.size == 0:
        raise GridError(f"{name} must be a non-empty 1-D array")
    if not np.all(np.isfinite(values)):
        raise GridError(f"{name} contains non-finite values")
    if np.any(np.diff(values) <= 0):
        raise GridError(f"{name} must be strictly increasing")
    return values


def field_to_detuning(field: ArrayLike, spins: SpinEnsembleParams) -> FloatArray:
    """Spin-cavity detuning Δ = m0 (B - B_r)/ħ, positive above resonance.

    Args:
        field: Magnetic field in tesla.
        spins: Spin ensemble parameters.

    Returns:
        Detuning in rad/s.

    >>> from cavity_spin_coupling.constants import from_gauss, to_mhz
    >>> spins = SpinEnsembleParams(gamma_s=1.0, resonance_field=from_gauss(3470.9))
    >>> round(float(to_mhz(field_to_detuning(from_gauss(3466.0), spins))), 6)
    -13.72
    """
    return spins.field_to_omega * (np.asarray(field, dtype=np.float64) - spins.resonance_field)


def reflection_amplitude(
    omega: ArrayLike,
    delta: ArrayLike,
    cav: CavityParams,
    g_c: float,
    gamma_s: float,
) -> NDArray[np.complex128]:
    """Complex reflection coefficient S11 from input-output theory.

    The spin ensemble sits at omega_c + delta, so the spin response is evaluated at the
    probe-spin detuning omega - omega_c - delta.
    """
    probe = np.asarray(omega, dtype=np.float64) - cav.omega_c
    spin_detuning = probe - np.asarray(delta, dtype=np.float64)
    denominator = 1j * probe - cav.kappa_c + g_c**2 / (1j * spin_detuning - gamma_s)
    return 1 + cav.external_loss / denominator


def reflection_power(
    omega: ArrayLike,
    delta: ArrayLike,
    cav: CavityParams,
    g_c: float,
    gamma_s: float,
) -> FloatArray:
    """Reflected power |S11|² in linear units.

    Args:
        omega: Probe angular frequency in rad/s.
        delta: Spin-cavity detuning in rad/s.
        cav: Cavity parameters.
        g_c: Collective coupling in rad/s.
        gamma_s: Spin half-width in rad/s.

    Returns:
        |S11|², broadcast over omega and delta.

    >>> cav = CavityParams(omega_c=1e9, kappa_c=1e6)
    >>> float(reflection_power(1e9, 0.0, cav, g_c=0.0, gamma_s=1e5))
    0.0
    """
    return np.abs(reflection_amplitude(omega, delta, cav, g_c, gamma_s)) ** 2


def dispersive_shift(
    delta: ArrayLike, omega_c: float, g_c: float, gamma_s: float
) -> FloatArray:
    """Cavity frequency pulled by off-resonant spins, ω_c - g_c² Δ/(Δ² + γ_s²)."""
    delta = np.asarray(delta, dtype=np.float64)
    return omega_c - g_c**2 * delta / (delta**2 + gamma_s**2)


def kappa_broadening(
    delta: ArrayLike, kappa_c: float, g_c: float, gamma_s: float
) -> FloatArray:
    """Cavity half-width broadened by spin absorption, κ_c + g_c² γ_s/(Δ² + γ_s²)."""
    delta = np.asarray(delta, dtype=np.float64)
    return kappa_c + g_c**2 * gamma_s / (delta**2 + gamma_s**2)


def rabi_branches(
    delta: ArrayLike, omega_c: float, g_c: float
) -> tuple[FloatArray, FloatArray]:
    """Upper and lower normal-mode frequencies of the coupled cavity and spins.

    Returns:
        (omega_plus, omega_minus) with omega_plus >= omega_minus.

    >>> upper, lower = rabi_branches(0.0, omega_c=10.0, g_c=2.0)
    >>> float(upper), float(lower)
    (12.0, 8.0)
    """
    delta = np.asarray(delta, dtype=np.float64)
    half_gap = np.sqrt(delta**2 + 4 * g_c**2) / 2
    center = omega_c + delta / 2
    return center + half_gap, center - half_gap


def collective_coupling(g_s: ArrayLike, n: ArrayLike) -> FloatArray:
    """Ensemble-enhanced coupling g_s √N."""
    n = np.asarray(n, dtype=np.float64)
    if np.any(n < 0):
        raise ParameterError("number of spins must be non-negative")
    return np.asarray(g_s, dtype=np.float64) * np.sqrt(n)


def single_spin_coupling_estimate(
    m0: float, cav: CavityParams, constants: PhysicalConstants = CODATA
) -> float:
    """Estimate of the single-spin coupling, m0 √(μ0 ω_c / 2ħ V_c).

    Args:
        m0: Magnetic dipole moment of one spin in J/T, usually the Bohr magneton.
        cav: Cavity parameters including the mode volume.
        constants: Physical constants to use.

    Returns:
        g_s in rad/s.

    Raises:
        ParameterError: If the cavity has no mode volume.
    """
    if cav.mode_volume is None:
        raise ParameterError("single-spin coupling estimate needs the cavity mode volume")
    return m0 * np.sqrt(
        constants.vacuum_permeability_mu0
        * cav.omega_c
        / (2 * constants.hbar * cav.mode_volume)
    )


def polarized_spin_count(
    n_total: float,
    frequency: float,
    temperature: float,
    constants: PhysicalConstants = CODATA,
) -> float:
    """Net polarized spins in thermal equilibrium, N_tot h f / (2 k_B T).

    Args:
        n_total: Total number of spins.
        frequency: Spin resonance frequency in Hz.
        temperature: Temperature in K.
        constants: Physical constants to use.

    Raises:
        ParameterError: If frequency or temperature is not positive.
    """
    if not temperature > 0 or not frequency > 0:
        raise ParameterError("frequency and temperature must be positive")
    return (
        n_total
        * constants.planck_h
        * frequency
        / (2 * constants.boltzmann_kB * temperature)
    )


def cooperativity(g_c: float, kappa_c: float, gamma_s: float) -> float:
    """Cooperativity C = g_c² / (2 κ_c γ_s)."""
    if not kappa_c > 0 or not gamma_s > 0:
        raise ParameterError("kappa_c and gamma_s must be positive")
    return g_c**2 / (2 * kappa_c * gamma_s)


def field_width_to_rate(
    width: float, field_to_omega: float = DEFAULT_FIELD_TO_OMEGA, full_width: bool = True
) -> float:
    """Convert a field linewidth in tesla to a half-width rate in rad/s.

    A full width is halved first. The lineshape is treated as Lorentzian, the caller
    records which convention a reported rate came from.
    """
    half = width / 2 if full_width else width
    return abs(field_to_omega) * half


def simulate_map(
    cav: CavityParams,
    spins: SpinEnsembleParams,
    field_axis: ArrayLike,
    frequency_axis: ArrayLike,
) -> SpectrumMap:
    """Reflected power over a field x frequency grid.

    Args:
        cav: Cavity parameters.
        spins: Spin ensemble parameters.
        field_axis: Magnetic field values in tesla, strictly increasing.
        frequency_axis: Probe angular frequencies in rad/s, strictly increasing.

    Returns:
        Linear-scale spectrum map.

    Raises:
        GridError: If an axis is empty or not strictly increasing.
    """
    fields = validate_axis(field_axis, "field_axis")
    omegas = validate_axis(frequency_axis, "frequency_axis")
    delta = field_to_detuning(fields, spins)
    power = reflection_power(
        omegas[np.newaxis, :], delta[:, np.newaxis], cav, spins.collective_g, spins.gamma_s
    )
    logger.debug("Simulated %d x %d spectrum map", len(fields), len(omegas))
    return SpectrumMap(field_axis=fields, frequency_axis=omegas, power=power)


__all__ = [
    "CavityParams",
    "DerivedQuantities",
    "Regime",
    "SpectrumMap",
    "SpinEnsembleParams",
    "collective_coupling",
    "cooperativity",
    "dispersive_shift",
    "field_to_detuning",
    "field_width_to_rate",
    "kappa_broadening",
    "polarized_spin_count",
    "rabi_branches",
    "reflection_amplitude",
    "reflection_power",
    "simulate_map",
    "single_spin_coupling_estimate",
    "validate_axis",
]

