"""Damped nonlinear least-squares engine used by every fit in the toolkit.

The solver is a Levenberg-Marquardt iteration with MINPACK-style column scaling.
Parameters flagged as positive are optimized in log space, frozen parameters are held
at their initial value.
"""

from collections.abc import Callable, Collection, Mapping, Sequence
from dataclasses import dataclass, field
import logging
import math
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

from cavity_spin_coupling.errors import ParameterError, SingularSystemError

logger = logging.getLogger(__name__)

type FloatArray = NDArray[np.float64]
type ModelFunction = Callable[[Any, FloatArray], FloatArray]
"""Maps (x, parameter vector) to predicted y values."""

DEFAULT_MAX_ITERATIONS = 200
FTOL = 1e-10
"""Relative cost decrease below which a fit has converged."""
GTOL = 1e-8
"""Scaled gradient infinity-norm below which a fit has converged."""
XTOL = 1e-14
"""Relative step length below which a fit has converged."""
FD_RELATIVE_STEP = 1e-6
"""Relative step of the central finite-difference Jacobian."""
MAX_CONDITION = 1e15
MAX_LOG_PARAMETER = 700.0
"""Bound on log-space parameters, keeps their exponential finite."""


@dataclass(frozen=True)
class Model:
    """A parameterized model with optional analytic Jacobian."""

    names: tuple[str, ...]
    """Parameter names, in the order of the parameter vector."""
    function: ModelFunction
    """Returns the model prediction for (x, parameters)."""
    jacobian: Callable[[Any, FloatArray], FloatArray] | None = None
    """Returns d prediction / d parameters with shape (points, parameters).
    Central finite differences are used when None."""
    positive: frozenset[str] = frozenset()
    """Parameters constrained to be strictly positive, fitted in log space."""


@dataclass
class FitResult:
    """Outcome of a least-squares fit."""

    parameters: dict[str, float]
    """Best-fit values, in internal units (rad/s, tesla, meters)."""
    residual_norm: float
    """Euclidean norm of the weighted residuals at the best point."""
    covariance_diag: dict[str, float]
    """Variance estimate of each parameter, 0 for frozen ones."""
    iterations: int
    """Number of iterations performed."""
    converged: bool
    """Whether a convergence criterion was met before the iteration cap."""
    frozen: list[str] = field(default_factory=list[str])
    """Parameters held fixed during the fit."""
    notes: dict[str, str] = field(default_factory=dict[str, str])
    """Choices made by the fit, for example weighting or unit conversions."""

    def uncertainty(self, name: str) -> float:
        """Standard error of a parameter."""
        return math.sqrt(self.covariance_diag[name])


def finite_difference_jacobian(
    function: ModelFunction,
    x: Any,
    parameters: ArrayLike,
    relative_step: float = FD_RELATIVE_STEP,
) -> FloatArray:
    """Central finite-difference Jacobian of a model.

    Args:
        function: Model function of (x, parameters).
        x: Independent variable passed through to the model.
        parameters: Point at which to differentiate.
        relative_step: Step as a fraction of each parameter magnitude, taken as at
            least one so parameters at zero still get a usable step.

    Returns:
        Array of shape (points, parameters).
    """
    p = np.asarray(parameters, dtype=np.float64)
    columns = []
    for i, value in enumerate(p):
        step = relative_step * max(abs(value), 1.0)
        upper, lower = p.copy(), p.copy()
        upper[i] += step
        lower[i] -= step
        columns.append(
            (np.ravel(function(x, upper)) - np.ravel(function(x, lower))) / (upper[i] - lower[i])
        )
    return np.column_stack(columns)


class _Problem:
    """Maps the free internal parameter vector onto the model parameters."""

    def __init__(
        self,
        model: Model,
        x: Any,
        y: FloatArray,
        sqrt_weight: FloatArray,
        full: FloatArray,
        free: list[int],
    ) -> None:
        self.model = model
        self.x = x
        self.y = y
        self.sqrt_weight = sqrt_weight
        self.full = full
        self.free = free
        self.logged = np.array([model.names[i] in model.positive for i in free])

    def to_internal(self, full: FloatArray) -> FloatArray:
        values = full[self.free]
        return np.where(self.logged, np.log(np.where(self.logged, values, 1.0)), values)

    def to_full(self, theta: FloatArray) -> FloatArray:
        full = self.full.copy()
        bounded = np.clip(theta, -MAX_LOG_PARAMETER, MAX_LOG_PARAMETER)
        full[self.free] = np.where(self.logged, np.exp(bounded), theta)
        return full

    def residuals(self, theta: FloatArray) -> FloatArray:
        # trial points may leave the model domain, callers reject non-finite costs
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            prediction = np.ravel(self.model.function(self.x, self.to_full(theta)))
            return self.sqrt_weight * (prediction - self.y)

    def cost(self, residuals: FloatArray) -> float:
        with np.errstate(over="ignore", invalid="ignore"):
            value = float(residuals @ residuals)
        return value if math.isfinite(value) else math.inf

    def jacobian(self, theta: FloatArray) -> FloatArray:
        full = self.to_full(theta)
        if self.model.jacobian is not None:
            jac = np.asarray(self.model.jacobian(self.x, full), dtype=np.float64)
        else:
            jac = finite_difference_jacobian(self.model.function, self.x, full)
        jac = jac.reshape(len(self.y), len(full))[:, self.free]
        # chain rule for log-space parameters
        jac = jac * np.where(self.logged, full[self.free], 1.0)
        return self.sqrt_weight[:, np.newaxis] * jac


def _solve_damped(
    normal: FloatArray,
    gradient: FloatArray,
    scale: FloatArray,
    damping_factor: float,
    names: list[str],
) -> FloatArray:
    # solve in column-scaled variables so the condition number ignores units
    system = normal / np.outer(scale, scale) + damping_factor * np.eye(len(scale))
    condition = float(np.linalg.cond(system))
    if not math.isfinite(condition) or condition > MAX_CONDITION:
        raise SingularSystemError(condition, names)
    return -np.linalg.solve(system, gradient / scale) / scale


def nlls_solve(
    model: Model,
    x: Any,
    y: ArrayLike,
    initial_guess: Mapping[str, float] | Sequence[float],
    weight: ArrayLike | None = None,
    frozen: Collection[str] = (),
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    ftol: float = FTOL,
    gtol: float = GTOL,
) -> FitResult:
    """Minimize the weighted sum of squared residuals of a model.

    Args:
        model: The model to fit.
        x: Independent variable, passed unchanged to the model.
        y: Observed values; compared with the flattened model prediction.
        initial_guess: Starting parameters by name or in model order.
        weight: Optional non-negative weight per observation, e.g. inverse variances.
            Uniform when None.
        frozen: Names of parameters held at their initial value.
        max_iterations: Iteration cap. When exceeded the best point is returned with
            converged set to False.
        ftol: Relative cost decrease that ends the iteration.
        gtol: Scaled gradient infinity-norm that ends the iteration.

    Returns:
        The fit result.

    Raises:
        ParameterError:
            If there are fewer observations than free parameters.
            If a positive parameter starts at a non-positive value.
            If a frozen name is not a model parameter.
            If the model is not finite at the initial guess.
        SingularSystemError: If the damped normal equations cannot be solved.

    Example:

        >>> import numpy as np
        >>> line = Model(names=("a",), function=lambda x, p: p[0] * x)
        >>> x = np.array([1.0, 2.0, 3.0])
        >>> result = nlls_solve(line, x, 2.5 * x, {"a": 1.0})
        >>> round(result.parameters["a"], 12), result.converged
        (2.5, True)
    """
    names = list(model.names)
    if isinstance(initial_guess, Mapping):
        full = np.array([float(initial_guess[name]) for name in names])
    else:
        full = np.array(initial_guess, dtype=np.float64)
    unknown = set(frozen) - set(names)
    if unknown:
        raise ParameterError(f"cannot freeze unknown parameters {sorted(unknown)}")
    for name, value in zip(names, full):
        if name in model.positive and not value > 0:
            raise ParameterError(f"initial {name} must be positive, got {value}")

    y_obs = np.ravel(np.asarray(y, dtype=np.float64))
    if weight is None:
        sqrt_weight = np.ones_like(y_obs)
    else:
        w = np.ravel(np.asarray(weight, dtype=np.float64))
        if w.shape != y_obs.shape or np.any(w < 0):
            raise ParameterError("weights must be non-negative with one per observation")
        sqrt_weight = np.sqrt(w)

    free = [i for i, name in enumerate(names) if name not in frozen]
    free_names = [names[i] for i in free]
    if len(y_obs) < len(free):
        raise ParameterError(
            f"{len(y_obs)} observations cannot determine {len(free)} free parameters"
        )

    problem = _Problem(model, x, y_obs, sqrt_weight, full, free)
    theta = problem.to_internal(full)
    residuals = problem.residuals(theta)
    cost = problem.cost(residuals)
    if not math.isfinite(cost):
        raise ParameterError("model is not finite at the initial guess")
    converged = False
    iterations = 0

    if free:
        jac = problem.jacobian(theta)
        scale = np.linalg.norm(jac, axis=0)
        if np.any(scale == 0):
            dead = [n for n, s in zip(free_names, scale) if s == 0]
            raise SingularSystemError(math.inf, dead)
        damping_factor = 1e-3
        growth = 2.0
        while iterations < max_iterations:
            if cost == 0.0:
                converged = True
                break
            normal = jac.T @ jac
            gradient = jac.T @ residuals
            scaled_gradient = np.abs(gradient) / (
                np.linalg.norm(jac, axis=0) * math.sqrt(cost)
            )
            if np.max(np.nan_to_num(scaled_gradient)) < gtol:
                converged = True
                break
            iterations += 1
            step = _solve_damped(normal, gradient, scale, damping_factor, free_names)
            candidate = theta + step
            new_residuals = problem.residuals(candidate)
            new_cost = problem.cost(new_residuals)
            with np.errstate(over="ignore", invalid="ignore"):
                predicted = -(step @ gradient) * 2 - step @ normal @ step
                step_small = np.linalg.norm(scale * step) <= XTOL * (
                    np.linalg.norm(scale * theta) + XTOL
                )
            if math.isfinite(new_cost) and new_cost < cost:
                ratio = (cost - new_cost) / predicted if predicted > 0 else 1.0
                relative_decrease = (cost - new_cost) / cost
                theta, residuals, cost = candidate, new_residuals, new_cost
                jac = problem.jacobian(theta)
                scale = np.maximum(scale, np.linalg.norm(jac, axis=0))
                damping_factor *= max(1 / 3, 1 - (2 * ratio - 1) ** 3)
                growth = 2.0
                if relative_decrease < ftol or step_small:
                    converged = True
                    break
            else:
                damping_factor *= growth
                growth *= 2
                if step_small:
                    converged = True
                    break
        normal = jac.T @ jac
        norms = np.linalg.norm(jac, axis=0)
        norms = np.where(norms > 0, norms, 1.0)
        covariance_internal = np.linalg.pinv(normal / np.outer(norms, norms)) / np.outer(
            norms, norms
        )
    else:
        converged = True
        covariance_internal = np.zeros((0, 0))

    best = problem.to_full(theta) if free else full
    dof = len(y_obs) - len(free)
    variance_scale = cost / dof if dof > 0 else 1.0
    variances = np.diag(covariance_internal) * variance_scale
    # delta method back to external parameters
    variances = variances * np.where(problem.logged, best[free], 1.0) ** 2

    covariance_diag = {name: 0.0 for name in names}
    for name, variance in zip(free_names, variances):
        covariance_diag[name] = max(float(variance), 0.0)

    if not converged:
        logger.warning(
            "Fit did not converge within %d iterations, returning best point", max_iterations
        )
    logger.debug("Fit finished after %d iterations with cost %.6g", iterations, cost)
    return FitResult(
        parameters={name: float(value) for name, value in zip(names, best)},
        residual_norm=math.sqrt(cost),
        covariance_diag=covariance_diag,
        iterations=iterations,
        converged=converged,
        frozen=[name for name in names if name in frozen],
    )
