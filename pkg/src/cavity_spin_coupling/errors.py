"""Exceptions raised by the cavity-spin coupling toolkit."""

from pathlib import Path


class ParameterError(ValueError):
    """Raised when a physical parameter violates its invariants."""


class GridError(ValueError):
    """Raised when an axis or scan grid cannot support the requested computation."""


class NoTransitionError(ValueError):
    """Raised when a coupling range does not contain a one-to-two dip transition."""

    def __init__(self, low_count: int, high_count: int) -> None:
        super().__init__(
            "Coupling range must go from 1 dip at the low end to 2 dips at the high end, "
            f"found {low_count} and {high_count}"
        )
        self.low_count = low_count
        self.high_count = high_count


class SingularSystemError(ArithmeticError):
    """Raised when the damped normal equations of a fit cannot be solved."""

    def __init__(self, condition_number: float, parameters: list[str]) -> None:
        super().__init__(
            f"Normal equations are singular (condition number {condition_number:.3g}) "
            f"for parameters {', '.join(parameters)}. "
            "Freeze a parameter or improve the initial guess."
        )
        self.condition_number = condition_number
        self.parameters = parameters


class BranchResolutionError(ValueError):
    """Raised when two dip branches are requested but mostly only one is resolvable."""

    def __init__(self, resolved_fraction: float) -> None:
        super().__init__(
            f"Only {resolved_fraction:.0%} of field rows show two resolvable dips, "
            "use expect_branches=1 for this spectrum"
        )
        self.resolved_fraction = resolved_fraction


class SpectrumFormatError(ValueError):
    """Raised when a spectrum or track file cannot be parsed."""

    def __init__(self, path: Path, line: int, reason: str) -> None:
        super().__init__(f"{path}:{line}: {reason}")
        self.path = path
        self.line = line
        self.reason = reason


class ConfigError(ValueError):
    """Raised when a run configuration is invalid."""


class NoiseModelError(ConfigError):
    """Raised when an unknown noise model is requested."""

    def __init__(self, name: str) -> None:
        super().__init__(
            f"Unknown noise model '{name}', expected one of 'additive', 'multiplicative'"
        )
        self.name = name
