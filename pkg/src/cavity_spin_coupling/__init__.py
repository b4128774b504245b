"""Reflection spectra of a microwave cavity coupled to an electron spin ensemble."""

from cavity_spin_coupling.model import (
    CavityParams,
    SpinEnsembleParams,
    SpectrumMap,
    reflection_amplitude,
    reflection_power,
    simulate_map,
)
from cavity_spin_coupling.splitting import (
    count_minima_on_resonance,
    derive_quantities,
    merge_point_scan,
)
from cavity_spin_coupling.config import RunConfig, load_config

__all__ = [
    "CavityParams",
    "SpinEnsembleParams",
    "SpectrumMap",
    "reflection_amplitude",
    "reflection_power",
    "simulate_map",
    "count_minima_on_resonance",
    "derive_quantities",
    "merge_point_scan",
    "RunConfig",
    "load_config",
]
