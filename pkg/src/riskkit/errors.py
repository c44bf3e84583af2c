"""Exception and warning taxonomy shared by all modules."""

from __future__ import annotations


class RiskkitError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(RiskkitError, ValueError):
    """Invalid parameter values (negative stddev, weights not summing to 1, ...)."""


class DomainError(RiskkitError, ValueError):
    """Argument outside the mathematical domain of an operation (p not in (0,1), ...)."""


class ShapeError(RiskkitError, ValueError):
    """Inconsistent dimensions between inputs."""


class MatrixError(RiskkitError, ValueError):
    """Covariance not symmetric / not positive semidefinite / degenerate."""


class DataError(RiskkitError, ValueError):
    """Unusable data, e.g. an empty scenario set."""


class CapabilityError(RiskkitError, TypeError):
    """Operation not defined for this variant (second derivative of a kinked loss, ...)."""


class DegeneracyError(RiskkitError, ArithmeticError):
    """A denominator that the theory requires to be positive vanished."""


class BracketError(RiskkitError, ValueError):
    """Root/argmin bracketing assumption violated; message names the failing endpoint."""


class ScheduleError(RiskkitError, ValueError):
    """Invalid two-stage or step-size schedule (e.g. stage-1 size below stage-2 size)."""


class NondegeneracyError(RiskkitError, ValueError):
    """Active rows of the polyhedral system are linearly dependent at the point."""


class ConvexityDomainError(RiskkitError, ValueError):
    """Bounding subproblem left the region where its constraints are convex."""


class InfeasibleError(RiskkitError, RuntimeError):
    """No feasible point found; carries the best probability reached."""

    def __init__(self, message: str, x=None, best_probability: float | None = None):
        super().__init__(message)
        self.x = x
        self.best_probability = best_probability


class ScenarioParseError(RiskkitError, ValueError):
    """Malformed scenario or problem file; message carries the line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class BracketWarning(UserWarning):
    """Minimizer pinned at a bracket endpoint; the bracket may be mis-specified."""


class ConvergenceWarning(UserWarning):
    """Iteration budget exhausted; best iterate returned."""


class DegeneracyWarning(UserWarning):
    """Sample optimum is not unique beyond tolerance; normal-CI theory is shaky."""


class BudgetWarning(UserWarning):
    """Monte Carlo sample budget exhausted before the error target was met."""
