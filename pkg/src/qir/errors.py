"""Exception types shared across the package."""


class QirError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(QirError, ValueError):
    """An argument lies outside the admissible domain (tau, theta, grid bounds)."""


class EvaluationError(QirError, ValueError):
    """Model evaluation produced an inadmissible or non-finite value."""


class DataError(QirError, ValueError):
    """Input data is malformed (ragged rows, non-numeric cells, shape mismatch)."""


class OptimizationError(QirError, RuntimeError):
    """The optimizer could not make progress (line-search underflow, bad gradient)."""


class SingularityError(QirError, RuntimeError):
    """A matrix required to be invertible is numerically singular."""

    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class DegenerateDensityError(QirError, RuntimeError):
    """The quantile-curve difference quotient collapsed; density is not estimable."""


class TuningError(QirError, RuntimeError):
    """Cross-validation could not produce a selection (all candidate cells failed)."""


class ExperimentError(QirError, RuntimeError):
    """Too many replications of a simulation experiment failed."""
