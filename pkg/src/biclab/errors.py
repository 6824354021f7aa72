"""Exception types shared across the package."""


class BiclabError(Exception):
    """Base class for errors raised by this package."""


class InvalidInputError(BiclabError, ValueError):
    """An argument violates a documented precondition."""


class InfeasibleGeometryError(BiclabError):
    """A geometric query has no solution (empty/unbounded set, point outside hull)."""


class DegenerateGeometryError(BiclabError):
    """Rejection sampling acceptance is too low; use hit-and-run instead."""


class ContradictionError(BiclabError):
    """Noiseless observations are mutually inconsistent."""


class RankDeficientError(BiclabError):
    """The Gram matrix of the played actions is singular."""


class IterationLimitError(BiclabError):
    """An iterative solver failed to converge within its iteration budget."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (final residual {residual:.3e})")
        self.residual = residual


class SolverError(BiclabError):
    """The LP backend reported a numerical failure."""


class LiftUndefinedError(BiclabError):
    """The BIC lift is undefined because the game value is zero."""


class PreconditionViolationError(BiclabError):
    """An empirically validated hypothesis failed, so a conclusion is not asserted."""
