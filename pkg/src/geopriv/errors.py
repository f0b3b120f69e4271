"""Exception hierarchy shared by every geopriv module."""


class GeoprivError(Exception):
    """Base class for all library errors."""


class DomainError(GeoprivError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigError(GeoprivError, ValueError):
    """Malformed configuration, probe set or dimension mismatch."""


class UnsupportedError(GeoprivError):
    """The requested computation is outside what the library implements."""


class NumericError(GeoprivError, ArithmeticError):
    """A numerical routine failed to converge.

    Attributes:
        partial: best value available when the routine gave up, or None.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class IngestionError(GeoprivError):
    """No usable records could be read from an input stream."""


class EmptyPriorError(GeoprivError):
    """A prior could not be built because no check-in fell inside the grid."""


class SolverError(GeoprivError):
    """The LP solver stopped without a certified optimum.

    Attributes:
        incumbent: best feasible point found so far (flat array) or None.
    """

    def __init__(self, message, incumbent=None):
        super().__init__(message)
        self.incumbent = incumbent
