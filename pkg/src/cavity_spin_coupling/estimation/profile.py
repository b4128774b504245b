"""Coupling versus sample position, and its average over a finite sample."""

from dataclasses import dataclass
from typing import Literal
import logging
import math

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.integrate import quad

from cavity_spin_coupling.errors import GridError, ParameterError
from cavity_spin_coupling.estimation.engine import FitResult, Model, nlls_solve

logger = logging.getLogger(__name__)

type FloatArray = NDArray[np.float64]

SPECTRAL_OVERSAMPLING = 16
QUAD_EPSREL = 1e-10


@dataclass(frozen=True)
class PositionProfile:
    """Collective coupling measured at several sample positions."""

    position: FloatArray
    """Sample position in meters, strictly increasing."""
    g_c: FloatArray
    """Collective coupling in rad/s."""

    def __post_init__(self) -> None:
        if self.position.shape != self.g_c.shape:
            raise GridError("position and g_c must have equal lengths")
        if np.any(np.diff(self.position) <= 0):
            raise GridError("positions must be strictly increasing")


@dataclass(frozen=True)
class SinusoidProfile:
    """Rectified sinusoid A |sin(2π z/λ + φ)| + c."""

    amplitude: float
    period: float
    phase: float
    offset: float

    @classmethod
    def from_fit(cls, result: FitResult) -> "SinusoidProfile":
        p = result.parameters
        return cls(p["amplitude"], p["period"], p["phase"], p["offset"])

    def __call__(self, z: ArrayLike) -> FloatArray:
        return _rectified_sine(
            np.asarray(z, dtype=np.float64),
            np.array([self.amplitude, self.period, self.phase, self.offset]),
        )

    def zeros_between(self, start: float, stop: float) -> list[float]:
        """Positions in (start, stop) where the sine changes sign."""
        half = self.period / 2
        first = math.ceil((start + self.phase * self.period / (2 * math.pi)) / half)
        zeros = []
        k = first
        while True:
            z = k * half - self.phase * self.period / (2 * math.pi)
            if z >= stop:
                break
            if z > start:
                zeros.append(z)
            k += 1
        return zeros


def _rectified_sine(z: FloatArray, p: FloatArray) -> FloatArray:
    amplitude, period, phase, offset = p
    return amplitude * np.abs(np.sin(2 * np.pi * z / period + phase)) + offset


def _rectified_sine_jacobian(z: FloatArray, p: FloatArray) -> FloatArray:
    amplitude, period, phase, offset = p
    angle = 2 * np.pi * z / period + phase
    slope = amplitude * np.sign(np.sin(angle)) * np.cos(angle)
    return np.column_stack(
        [
            np.abs(np.sin(angle)),
            slope * (-2 * np.pi * z / period**2),
            slope,
            np.ones_like(z),
        ]
    )


RECTIFIED_SINE = Model(
    names=("amplitude", "period", "phase", "offset"),
    function=_rectified_sine,
    jacobian=_rectified_sine_jacobian,
    positive=frozenset({"period"}),
)


def _dominant_period(position: FloatArray, values: FloatArray) -> float:
    """Period of the strongest non-constant Fourier component, on a uniform resampling."""
    uniform = np.linspace(position[0], position[-1], position.size)
    resampled = np.interp(uniform, position, values)
    spectrum = np.abs(np.fft.rfft(resampled - resampled.mean(), n=SPECTRAL_OVERSAMPLING * position.size))
    frequencies = np.fft.rfftfreq(SPECTRAL_OVERSAMPLING * position.size, d=uniform[1] - uniform[0])
    strongest = int(np.argmax(spectrum[1:])) + 1
    return 1 / frequencies[strongest]


def fit_position_sinusoid(profile: PositionProfile) -> FitResult:
    """Fit a rectified sinusoid to coupling versus sample position.

    The period is seeded from the dominant discrete Fourier component of the profile;
    the rectified sine repeats every half period, so the seed is twice that component.
    A few multiples of the seed are tried and the best fit is kept.

    Args:
        profile: Coupling versus position, at least 5 points.

    Returns:
        Fit of amplitude, period, phase (reduced to [0, π)) and offset. A flat profile
        gives amplitude 0 with ``notes["flat"] = "true"``.

    Raises:
        ParameterError: If fewer than 5 points are given.
    """
    z, g = profile.position, profile.g_c
    if z.size < 5:
        raise ParameterError("position fit needs at least 5 points")
    span = float(np.ptp(g))
    if span <= 1e-12 * max(float(np.max(np.abs(g))), 1e-300):
        logger.warning("Flat position profile, the coupling does not depend on position")
        return FitResult(
            parameters={
                "amplitude": 0.0,
                "period": float(z[-1] - z[0]) * 2,
                "phase": math.pi / 2,
                "offset": float(np.mean(g)),
            },
            residual_norm=float(np.linalg.norm(g - np.mean(g))),
            covariance_diag={"amplitude": 0.0, "period": 0.0, "phase": 0.0, "offset": 0.0},
            iterations=0,
            converged=True,
            notes={"flat": "true"},
        )

    seed_period = 2 * _dominant_period(z, g)
    peak = float(z[int(np.argmax(g))])
    best: FitResult | None = None
    for factor in (0.5, 1.0, 2.0):
        period = seed_period * factor
        initial = {
            "amplitude": span,
            "period": period,
            "phase": math.pi / 2 - 2 * math.pi * peak / period,
            "offset": float(np.min(g)),
        }
        try:
            result = nlls_solve(RECTIFIED_SINE, z, g, initial)
        except ArithmeticError:
            continue
        if best is None or result.residual_norm < best.residual_norm:
            best = result
    if best is None:
        raise ParameterError("position fit failed for every period seed")
    best.parameters["phase"] = float(np.mod(best.parameters["phase"], math.pi))
    best.notes["flat"] = "false"
    return best


def average_coupling_over_length(
    profile: SinusoidProfile,
    sample_length: float,
    center: float,
    method: Literal["rms", "mean"] = "rms",
) -> float:
    """Average a coupling profile over a sample of finite length.

    Local couplings of an ensemble add in quadrature, so the root-mean-square is the
    default. The plain mean is also available.

    Args:
        profile: Fitted coupling profile.
        sample_length: Sample length in meters.
        center: Position of the sample center in meters.
        method: "rms" or "mean".

    Returns:
        Averaged coupling in rad/s.

    Raises:
        ValueError: If sample_length is negative or the method is unknown.

    >>> flat = SinusoidProfile(amplitude=0.0, period=1.0, phase=0.0, offset=3.0)
    >>> average_coupling_over_length(flat, 0.5, 0.0)
    3.0
    """
    if sample_length < 0:
        raise ValueError(f"sample_length must be non-negative, got {sample_length}")
    if method not in ("rms", "mean"):
        raise ValueError(f"method must be 'rms' or 'mean', got {method}")
    if sample_length == 0:
        return float(profile(center))
    if profile.amplitude == 0:
        return abs(profile.offset) if method == "rms" else profile.offset
    start, stop = center - sample_length / 2, center + sample_length / 2
    power = 2 if method == "rms" else 1
    integral, _ = quad(
        lambda z: float(profile(z)) ** power,
        start,
        stop,
        points=profile.zeros_between(start, stop) or None,
        epsrel=QUAD_EPSREL,
        limit=200,
    )
    average = integral / sample_length
    return math.sqrt(average) if method == "rms" else average
