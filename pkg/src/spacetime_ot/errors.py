"""Exception hierarchy shared by all modules."""


class SpacetimeOTError(Exception):
    """Base class for every error raised by the package."""


class ConfigurationError(SpacetimeOTError):
    """Inconsistent inputs: grid mismatch, unbalanced masses, bad documents."""


class DataError(SpacetimeOTError):
    """A field is undefined where a value is required."""


class DomainError(SpacetimeOTError):
    """A query falls outside the region where an operation is defined."""


class PositivityError(SpacetimeOTError):
    """Density at or below the floor where a velocity is needed."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class SolverError(SpacetimeOTError):
    """Linear solve failed to reach tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class InitializationError(SpacetimeOTError):
    """Harmonic initialization produced a non-positive density."""


class StepRejected(SpacetimeOTError):
    """A boundary step violates the CFL bound; carries the admissible step."""

    def __init__(self, message, admissible_step):
        super().__init__(message)
        self.admissible_step = admissible_step


class StepFailure(SpacetimeOTError):
    """An evolving-support step could not be made admissible."""


class PreconditionError(SpacetimeOTError):
    """A diagnostic was called on data violating its precondition."""


class DegenerateDirectionError(SpacetimeOTError):
    """Zero curvature along a direction with non-zero slope."""


class ParseError(ConfigurationError):
    """A problem document could not be read; `line` is 1-based when known."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
