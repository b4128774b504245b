"""Physical constants and unit conversions.

Values come from the CODATA set bundled with :mod:`scipy.constants`
(CODATA 2018 for scipy >= 1.4).
Internally every rate and frequency is an angular frequency in rad/s,
fields are in tesla and lengths in meters.
"""

from dataclasses import dataclass
import math

import numpy as np
from numpy.typing import NDArray
import scipy.constants


@dataclass(frozen=True)
class PhysicalConstants:
    """Fundamental constants used by the forward models."""

    planck_h: float = scipy.constants.h
    """Planck constant in J s."""
    hbar: float = scipy.constants.hbar
    """Reduced Planck constant in J s."""
    boltzmann_kB: float = scipy.constants.k
    """Boltzmann constant in J/K."""
    vacuum_permeability_mu0: float = scipy.constants.mu_0
    """Vacuum permeability in T m/A."""
    bohr_magneton_muB: float = scipy.constants.physical_constants["Bohr magneton"][0]
    """Bohr magneton in J/T."""


CODATA = PhysicalConstants()

MHZ = 2 * math.pi * 1e6
"""Angular frequency of 1 MHz, in rad/s."""
GAUSS = 1e-4
"""One gauss in tesla."""
MM = 1e-3
"""One millimeter in meters."""

DEFAULT_FIELD_TO_OMEGA = 2.8 * MHZ / GAUSS
"""Free-electron field-to-angular-frequency conversion, 2π x 2.8 MHz/G, in rad/(s T)."""


def from_mhz[T: (float, NDArray[np.float64])](value: T) -> T:
    """Convert an ordinary frequency in MHz to angular frequency in rad/s.

    >>> from_mhz(1.0) == 2 * math.pi * 1e6
    True
    """
    return value * MHZ


def to_mhz[T: (float, NDArray[np.float64])](value: T) -> T:
    """Convert an angular frequency in rad/s to ordinary frequency in MHz."""
    return value / MHZ


def from_gauss[T: (float, NDArray[np.float64])](value: T) -> T:
    """Convert gauss to tesla."""
    return value * GAUSS


def to_gauss[T: (float, NDArray[np.float64])](value: T) -> T:
    """Convert tesla to gauss."""
    return value / GAUSS
