"""Exception hierarchy for rakekit.

Input and model errors derive from :class:`InputError`, numerical failures
from :class:`NumericalError`; both share the :class:`RakingError` base so
callers can catch everything from this package in one clause.
"""


class RakingError(Exception):
    """Base class for all rakekit errors."""


class InputError(RakingError):
    """Malformed or inconsistent user input."""


class NumericalError(RakingError):
    """Failure of a numerical procedure (solver, factorization, ...)."""


# --- table / parsing ---

class UnknownColumn(InputError):
    pass


class DuplicateCell(InputError):
    pass


class BadWeight(InputError):
    pass


class BadValue(InputError):
    pass


class ConstraintWithoutValue(InputError):
    pass


class IncompleteTable(InputError):
    pass


class EmptyProblem(InputError):
    pass


class BoundsInvalid(InputError):
    pass


class InconsistentMargins(InputError):
    pass


# --- losses ---

class DomainError(InputError):
    pass


# --- linear operators ---

class DimensionMismatch(InputError):
    pass


class TooLarge(InputError):
    pass


# --- solvers ---

class NonPositiveInput(InputError):
    pass


class NoConvergence(NumericalError):
    """Solver failed to reach the requested tolerances.

    Carries the final residuals so callers can report how close it got.
    """

    def __init__(self, message, grad_norm=None, cons_violation=None):
        super().__init__(message)
        self.grad_norm = grad_norm
        self.cons_violation = cons_violation


class SingularSystem(NumericalError):
    pass


class MissingUnrecoverable(NumericalError):
    """Missing entries cannot be identified from the available aggregates.

    The raked values for observed coordinates are still valid and attached
    as ``solution`` (missing coordinates are NaN there).
    """

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


# --- uncertainty ---

class SingularKKT(NumericalError):
    pass


class NotConverged(InputError):
    """A converged Solution was required but not supplied."""


class DrawSolveFailed(NumericalError):
    def __init__(self, message, draw_index=None):
        super().__init__(message)
        self.draw_index = draw_index


class IndexOutOfRange(InputError):
    pass


# --- cli ---

class UnknownExperiment(InputError):
    pass
