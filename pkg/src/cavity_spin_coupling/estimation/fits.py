"""Fits of the coupled cavity-spin models to dip tracks, linewidths and spectra."""

from collections.abc import Collection, Mapping
from dataclasses import dataclass
import logging
import math

import numpy as np
from numpy.typing import ArrayLike, NDArray

from cavity_spin_coupling.constants import DEFAULT_FIELD_TO_OMEGA, to_mhz
from cavity_spin_coupling.errors import ParameterError
from cavity_spin_coupling.io import to_linear
from cavity_spin_coupling.estimation.engine import FitResult, Model, nlls_solve
from cavity_spin_coupling.estimation.tracks import (
    Branch,
    DipTrack,
    extract_dip_track,
    fit_bare_dip,
)
from cavity_spin_coupling.model import (
    CavityParams,
    SpectrumMap,
    dispersive_shift,
    kappa_broadening,
    rabi_branches,
    reflection_power,
)

logger = logging.getLogger(__name__)

type FloatArray = NDArray[np.float64]

MIN_BRANCH_POINTS = 5


def _conversion_note(field_to_omega: float) -> str:
    return f"{to_mhz(field_to_omega) * 1e-4:.6g} MHz/G"


def _dispersive_model(field_to_omega: float, shift_sign: float) -> Model:
    def function(field: FloatArray, p: FloatArray) -> FloatArray:
        g_c, gamma_s, omega_c, resonance_field = p
        delta = field_to_omega * (field - resonance_field)
        return dispersive_shift(shift_sign * delta, omega_c, g_c, gamma_s)

    def jacobian(field: FloatArray, p: FloatArray) -> FloatArray:
        g_c, gamma_s, omega_c, resonance_field = p
        delta = field_to_omega * (field - resonance_field)
        d = delta**2 + gamma_s**2
        return np.column_stack(
            [
                -shift_sign * 2 * g_c * delta / d,
                shift_sign * 2 * g_c**2 * gamma_s * delta / d**2,
                np.ones_like(field),
                shift_sign * field_to_omega * g_c**2 * (gamma_s**2 - delta**2) / d**2,
            ]
        )

    return Model(
        names=("g_c", "gamma_s", "omega_c", "resonance_field"),
        function=function,
        jacobian=jacobian,
        positive=frozenset({"g_c", "gamma_s"}),
    )


def fit_dispersive_track(
    track: DipTrack,
    field_to_omega: float = DEFAULT_FIELD_TO_OMEGA,
    initial: Mapping[str, float] | None = None,
) -> FitResult:
    """Fit the dispersive cavity shift ω_c - g_c² Δ/(Δ² + γ_s²) to a single-dip track.

    The sign of the shift relative to the field conversion is taken from the data and
    reported as the frozen parameter ``shift_sign`` (+1 for the physical sign).

    Args:
        track: Single-branch dip track crossing the spin resonance.
        field_to_omega: Conversion from field offset to detuning in rad/(s T).
        initial: Optional starting values for g_c, gamma_s, omega_c, resonance_field.

    Returns:
        Fit of g_c, gamma_s, omega_c and resonance_field.

    Raises:
        ParameterError: If the track has no single-branch points.
    """
    field, omega = track.select(Branch.SINGLE)
    if field.size < 4:
        raise ParameterError("dispersive fit needs at least 4 single-branch dips")
    high, low = int(np.argmax(omega)), int(np.argmin(omega))
    # shift is positive below resonance for a positive conversion
    shift_sign = 1.0 if (field[high] - field[low]) * field_to_omega < 0 else -1.0
    if initial is None:
        gamma_s = abs(field_to_omega * (field[high] - field[low])) / 2
        if gamma_s == 0:
            gamma_s = abs(field_to_omega * (field[-1] - field[0])) / 4
        g_c = math.sqrt((omega[high] - omega[low]) * gamma_s)
        initial = {
            "g_c": max(g_c, 1e-3 * gamma_s),
            "gamma_s": gamma_s,
            "omega_c": float(np.median(omega)),
            "resonance_field": float(field[high] + field[low]) / 2,
        }
    result = nlls_solve(_dispersive_model(field_to_omega, shift_sign), field, omega, initial)
    result.parameters["shift_sign"] = shift_sign
    result.covariance_diag["shift_sign"] = 0.0
    result.frozen.append("shift_sign")
    result.notes["field_conversion"] = _conversion_note(field_to_omega)
    return result


def _kappa_model(field_to_omega: float) -> Model:
    def function(field: FloatArray, p: FloatArray) -> FloatArray:
        g_c, gamma_s, kappa_c, resonance_field = p
        delta = field_to_omega * (field - resonance_field)
        return kappa_broadening(delta, kappa_c, g_c, gamma_s)

    def jacobian(field: FloatArray, p: FloatArray) -> FloatArray:
        g_c, gamma_s, kappa_c, resonance_field = p
        delta = field_to_omega * (field - resonance_field)
        d = delta**2 + gamma_s**2
        return np.column_stack(
            [
                2 * g_c * gamma_s / d,
                g_c**2 * (delta**2 - gamma_s**2) / d**2,
                np.ones_like(field),
                2 * field_to_omega * g_c**2 * gamma_s * delta / d**2,
            ]
        )

    return Model(
        names=("g_c", "gamma_s", "kappa_c", "resonance_field"),
        function=function,
        jacobian=jacobian,
        positive=frozenset({"g_c", "gamma_s", "kappa_c"}),
    )


def fit_kappa_lorentzian(
    field: ArrayLike,
    kappa: ArrayLike,
    field_to_omega: float = DEFAULT_FIELD_TO_OMEGA,
    initial: Mapping[str, float] | None = None,
) -> FitResult:
    """Fit the spin-broadened half-width κ_c + g_c² γ_s/(Δ² + γ_s²) versus field.

    Args:
        field: Magnetic field in tesla.
        kappa: Cavity half-width in rad/s at each field.
        field_to_omega: Conversion from field offset to detuning in rad/(s T).
        initial: Optional starting values for g_c, gamma_s, kappa_c, resonance_field.

    Returns:
        Fit of g_c, gamma_s, kappa_c and resonance_field.
    """
    fields = np.asarray(field, dtype=np.float64)
    kappas = np.asarray(kappa, dtype=np.float64)
    if fields.size < 4 or fields.shape != kappas.shape:
        raise ParameterError("linewidth fit needs at least 4 (field, kappa) pairs")
    if initial is None:
        peak = int(np.argmax(kappas))
        kappa_c = float(np.min(kappas))
        excess = float(kappas[peak]) - kappa_c
        above = fields[kappas > kappa_c + excess / 2]
        if excess > 0 and above.size > 1:
            gamma_s = abs(field_to_omega) * float(above.max() - above.min()) / 2
        else:
            gamma_s = abs(field_to_omega) * float(fields.max() - fields.min()) / 4
        initial = {
            "g_c": max(math.sqrt(excess * gamma_s), 1e-3 * gamma_s),
            "gamma_s": gamma_s,
            "kappa_c": kappa_c,
            "resonance_field": float(fields[peak]),
        }
    result = nlls_solve(_kappa_model(field_to_omega), fields, kappas, initial)
    result.notes["field_conversion"] = _conversion_note(field_to_omega)
    return result


def _rabi_model(field_to_omega: float) -> Model:
    def function(x: tuple[FloatArray, FloatArray], p: FloatArray) -> FloatArray:
        field, sign = x
        g_c, omega_c, resonance_field = p
        upper, lower = rabi_branches(field_to_omega * (field - resonance_field), omega_c, g_c)
        return np.where(sign > 0, upper, lower)

    def jacobian(x: tuple[FloatArray, FloatArray], p: FloatArray) -> FloatArray:
        field, sign = x
        g_c, omega_c, resonance_field = p
        delta = field_to_omega * (field - resonance_field)
        root = np.sqrt(delta**2 + 4 * g_c**2)
        d_delta = 0.5 + sign * delta / (2 * root)
        return np.column_stack(
            [sign * 2 * g_c / root, np.ones_like(field), -field_to_omega * d_delta]
        )

    return Model(
        names=("g_c", "omega_c", "resonance_field"),
        function=function,
        jacobian=jacobian,
        positive=frozenset({"g_c"}),
    )


def fit_rabi_branches(
    track: DipTrack,
    field_to_omega: float = DEFAULT_FIELD_TO_OMEGA,
    initial: Mapping[str, float] | None = None,
) -> FitResult:
    """Joint fit of both anticrossing branches ω_± = ω_c + Δ/2 ± √(Δ² + 4g_c²)/2.

    Args:
        track: Two-branch dip track.
        field_to_omega: Conversion from field offset to detuning in rad/(s T).
        initial: Optional starting values for g_c, omega_c, resonance_field.

    Returns:
        Fit of g_c, omega_c and resonance_field.

    Raises:
        ParameterError: If a branch has fewer than 5 points.
    """
    upper_field, upper = track.select(Branch.UPPER)
    lower_field, lower = track.select(Branch.LOWER)
    if min(upper_field.size, lower_field.size) < MIN_BRANCH_POINTS:
        raise ParameterError(
            f"branch fit needs at least {MIN_BRANCH_POINTS} points on each branch"
        )
    if initial is None:
        shared, upper_index, lower_index = np.intersect1d(
            upper_field, lower_field, return_indices=True
        )
        gaps = upper[upper_index] - lower[lower_index]
        closest = int(np.argmin(gaps))
        initial = {
            "g_c": float(gaps[closest]) / 2,
            "omega_c": float(upper[upper_index][closest] + lower[lower_index][closest]) / 2,
            "resonance_field": float(shared[closest]),
        }
    x = (
        np.concatenate([upper_field, lower_field]),
        np.concatenate([np.ones_like(upper_field), -np.ones_like(lower_field)]),
    )
    y = np.concatenate([upper, lower])
    result = nlls_solve(_rabi_model(field_to_omega), x, y, initial)
    result.notes["field_conversion"] = _conversion_note(field_to_omega)
    return result


MAP_PARAMETERS = ("g_c", "gamma_s", "kappa_c", "kappa_e", "omega_c", "resonance_field")


def _map_model(field_to_omega: float) -> Model:
    def function(x: tuple[FloatArray, FloatArray], p: FloatArray) -> FloatArray:
        field, omega = x
        g_c, gamma_s, kappa_c, kappa_e, omega_c, resonance_field = p
        cav = CavityParams(omega_c=omega_c, kappa_c=kappa_c, kappa_e=kappa_e)
        delta = field_to_omega * (field - resonance_field)
        return reflection_power(
            omega[np.newaxis, :], delta[:, np.newaxis], cav, g_c, gamma_s
        )

    return Model(
        names=MAP_PARAMETERS,
        function=function,
        positive=frozenset({"g_c", "gamma_s", "kappa_c", "kappa_e"}),
    )


def seed_map_parameters(
    spectrum: SpectrumMap, field_to_omega: float = DEFAULT_FIELD_TO_OMEGA
) -> dict[str, float]:
    """Starting values for a full reflection-map fit.

    omega_c, kappa_c and kappa_e come from bare-cavity fits to the two outermost field
    rows, resonance_field is the row that differs most from them, and g_c is half the
    dip gap on that row, or follows from its extra broadening when it shows one dip.
    """
    edges = [fit_bare_dip(spectrum.frequency_axis, spectrum.power[i]) for i in (0, -1)]
    omega_c = float(np.mean([r.parameters["omega_0"] for r in edges]))
    kappa_c = float(np.mean([r.parameters["kappa"] for r in edges]))
    kappa_e = float(np.mean([r.parameters["kappa_e"] for r in edges]))

    bare = (spectrum.power[0] + spectrum.power[-1]) / 2
    perturbation = np.abs(spectrum.power - bare).sum(axis=1)
    row = int(np.argmax(perturbation))
    resonance_field = float(spectrum.field_axis[row])
    wide = spectrum.field_axis[perturbation > perturbation[row] / 2]
    gamma_s = max(abs(field_to_omega) * float(wide.max() - wide.min()) / 2, 1e-2 * kappa_c)

    resonant = SpectrumMap(
        field_axis=spectrum.field_axis[row : row + 1],
        frequency_axis=spectrum.frequency_axis,
        power=spectrum.power[row : row + 1],
    )
    try:
        split = extract_dip_track(resonant, expect_branches=2)
        g_c = float(np.diff(split.dip_frequency)[0]) / 2
    except ValueError:
        loaded = fit_bare_dip(spectrum.frequency_axis, spectrum.power[row])
        g_c = math.sqrt(max(loaded.parameters["kappa"] - kappa_c, 1e-3 * kappa_c) * gamma_s)
    return {
        "g_c": g_c,
        "gamma_s": gamma_s,
        "kappa_c": kappa_c,
        "kappa_e": kappa_e,
        "omega_c": omega_c,
        "resonance_field": resonance_field,
    }


def fit_full_s11_map(
    spectrum: SpectrumMap,
    initial: Mapping[str, float] | None = None,
    frozen: Collection[str] = (),
    field_to_omega: float = DEFAULT_FIELD_TO_OMEGA,
    weight: ArrayLike | None = None,
) -> FitResult:
    """Fit the input-output reflection model to every pixel of a spectrum map.

    Args:
        spectrum: The measured or simulated map. dB maps are converted to linear power
            with a warning.
        initial: Starting values for g_c, gamma_s, kappa_c, kappa_e, omega_c and
            resonance_field. Seeded from the map when None.
        frozen: Parameters held at their initial value.
        field_to_omega: Conversion from field offset to detuning in rad/(s T).
        weight: Optional per-pixel weights with the shape of the map.

    Returns:
        Fit of the six model parameters.
    """
    if spectrum.scale == "dB":
        logger.warning("Fitting a dB-scale map, converting it to linear power first")
        spectrum = to_linear(spectrum)
    start = dict(seed_map_parameters(spectrum, field_to_omega) if initial is None else initial)
    missing = set(MAP_PARAMETERS) - set(start)
    if missing:
        raise ParameterError(f"initial values missing for {sorted(missing)}")
    result = nlls_solve(
        _map_model(field_to_omega),
        (spectrum.field_axis, spectrum.frequency_axis),
        spectrum.power,
        start,
        weight=weight,
        frozen=frozen,
    )
    result.notes["field_conversion"] = _conversion_note(field_to_omega)
    return result


@dataclass(frozen=True)
class CouplingVsN:
    """Collective coupling measured on samples with different spin numbers."""

    n: FloatArray
    """Number of polarized spins per sample."""
    g_c: FloatArray
    """Collective coupling in rad/s per sample."""
    weight: FloatArray | None = None
    """Optional inverse-variance weight per sample."""
    excluded: FloatArray | None = None
    """Optional boolean mask of samples left out of the fit."""

    def __post_init__(self) -> None:
        if self.n.shape != self.g_c.shape:
            raise ParameterError("n and g_c must have equal lengths")
        if np.any(self.n <= 0) or np.any(self.g_c < 0):
            raise ParameterError("spin numbers must be positive and couplings non-negative")
        for extra in (self.weight, self.excluded):
            if extra is not None and extra.shape != self.n.shape:
                raise ParameterError("weight and excluded must match the number of samples")


def sqrtN_regression(data: CouplingVsN) -> FitResult:
    """Weighted least squares of g_c = g_s √N through the origin.

    The model is linear in g_s, so the solution is closed form.

    Returns:
        Fit of g_s with notes on weighting, intercept and excluded samples.

    Raises:
        ParameterError: If no samples remain after exclusion.

    >>> data = CouplingVsN(n=np.array([4.0, 16.0]), g_c=np.array([2.0, 4.0]))
    >>> sqrtN_regression(data).parameters["g_s"]
    1.0
    """
    keep = np.ones_like(data.n, dtype=bool)
    if data.excluded is not None:
        keep &= ~data.excluded.astype(bool)
        if not keep.all():
            logger.warning("Excluding %d sample(s) from the sqrt(N) fit", int((~keep).sum()))
    if not keep.any():
        raise ParameterError("sqrt(N) regression needs at least one sample")
    root_n = np.sqrt(data.n[keep])
    g_c = data.g_c[keep]
    w = np.ones_like(g_c) if data.weight is None else data.weight[keep]
    normal = float(np.sum(w * root_n**2))
    g_s = float(np.sum(w * root_n * g_c)) / normal
    residuals = np.sqrt(w) * (g_c - g_s * root_n)
    cost = float(residuals @ residuals)
    dof = g_c.size - 1
    variance = (cost / dof if dof > 0 else 0.0) / normal
    return FitResult(
        parameters={"g_s": g_s},
        residual_norm=math.sqrt(cost),
        covariance_diag={"g_s": variance},
        iterations=0,
        converged=True,
        notes={
            "intercept": "through origin",
            "weighting": "uniform" if data.weight is None else "inverse-variance",
            "excluded": str(int((~keep).sum())),
        },
    )
