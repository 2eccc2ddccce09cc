"""Exception hierarchy shared across the package."""

from __future__ import annotations


class LDSGDError(Exception):
    """Base class for every error raised by ldsgd."""


class InvalidTopologyError(LDSGDError, ValueError):
    pass


class ConstructionFailedError(LDSGDError, RuntimeError):
    pass


class InvalidMatrixError(LDSGDError, ValueError):
    pass


class InvalidSchemeError(LDSGDError, ValueError):
    pass


class HorizonTooShortError(InvalidSchemeError):
    """The horizon does not reach the end of the decaying phase."""

    def __init__(self, horizon: int, min_horizon: int):
        self.horizon = horizon
        self.min_horizon = min_horizon
        super().__init__(
            f"horizon T={horizon} is shorter than the decay phase; "
            f"minimum feasible T is {min_horizon}"
        )


class InvalidArgumentError(LDSGDError, ValueError):
    pass


class SizeLimitError(LDSGDError, ValueError):
    pass


class InvalidConstantsError(LDSGDError, ValueError):
    pass


class InsufficientDataError(LDSGDError, ValueError):
    pass


class InfeasibleProblemError(LDSGDError, ValueError):
    pass


class InvalidConfigError(LDSGDError, ValueError):
    """Bad run configuration; ``field`` names the offending key when known."""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class PreconditionError(LDSGDError, RuntimeError):
    pass


class DivergenceError(LDSGDError, FloatingPointError):
    """A non-finite parameter appeared; ``trace`` holds the rows recorded so far."""

    def __init__(self, step: int, trace=None):
        self.step = step
        self.trace = trace
        super().__init__(f"non-finite parameters after step {step}")
