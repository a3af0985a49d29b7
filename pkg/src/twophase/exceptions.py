"""Exception hierarchy.

Data problems (bad input, empty strata, schema violations) derive from
:class:`DataError`; failures of an iterative method or a singular linear
system derive from :class:`NumericalError`. The CLI maps the two families to
distinct exit codes.
"""


class TwoPhaseError(Exception):
    """Base class for all package errors."""


class DataError(TwoPhaseError, ValueError):
    """Input data violates a structural contract."""


class EmptyStratumError(DataError):
    """A stratum has no phase-I members."""


class SamplingFractionError(DataError):
    """A stratum would receive no phase-II draws."""


class NumericalError(TwoPhaseError, ArithmeticError):
    """An iterative method or linear solve failed."""


class ConvergenceError(NumericalError):
    """Iteration limit reached without meeting the tolerance."""

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class SingularMatrixError(NumericalError):
    """A Gram, Jacobian or information matrix is singular."""


class SeparationError(NumericalError):
    """Binary regression diverges (complete or quasi-complete separation)."""


class MonotoneLikelihoodError(NumericalError):
    """The Cox partial likelihood has no finite maximizer."""


class FeasibilityError(NumericalError):
    """Objective is minus infinity at the supplied parameters."""
