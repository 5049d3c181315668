"""Exception taxonomy for the mazt package.

Construction-time errors (bad data, wrong regime) and solver-time errors
(budget exhausted, unmet preconditions) all derive from :class:`MaztError`
so callers can catch package failures uniformly.
"""


class MaztError(Exception):
    """Base class for all package-specific errors."""


class NonZeroMean(MaztError):
    """Poisson data has nonzero mean beyond tolerance; no periodic solution."""


class NonKahler(MaztError):
    """A background form violates the required positivity (total or pointwise)."""


class BadMass(MaztError):
    """Divisor curvature density does not integrate to the total multiplicity."""


class NoConvergence(MaztError):
    """An iterative solver exhausted its budget before reaching tolerance.

    Carries the residual history of the failed run in ``history`` (a tuple;
    entries are solver-specific records such as per-iteration residuals).
    """

    def __init__(self, message: str, history=()):
        super().__init__(message)
        self.history = tuple(history)


class SeshadriViolation(MaztError):
    """Requested divisor weight meets or exceeds the positivity threshold V/m."""


class NotClassifiable(MaztError):
    """Comparison inputs are neither discrete sub- nor supersolutions."""


class BadReference(MaztError):
    """Reference form for a curvature bound must have strictly positive density."""


class InfeasibleClass(MaztError):
    """Envelope constraint set is empty in the limit (non-positive class volume)."""


class EmptyBoundary(MaztError):
    """Contact mask is trivial (all or nothing); no free boundary to extract."""


class EmptyRegion(MaztError):
    """Requested sublevel region is empty at the given depth."""


class WrongRegime(MaztError):
    """Check is only defined in a different parameter regime (e.g. V = m)."""


class ConcavityViolation(MaztError):
    """Envelope family fails discrete concavity beyond tolerance."""


class ParseError(MaztError):
    """Scenario file is not syntactically valid."""


class ValidationError(MaztError):
    """Scenario or recipe content is well-formed but semantically invalid."""
