"""Exception hierarchy shared by all modules."""


class CopulaError(Exception):
    """Base class for every error raised by copulamix."""


class ParameterDomainError(CopulaError, ValueError):
    """A parameter lies outside its admissible range."""


class InvalidCopulaError(CopulaError, ValueError):
    """A numeric object fails the copula axioms beyond tolerance."""


class ResolutionError(CopulaError, ValueError):
    """Two checkerboard grids cannot be brought to a common resolution."""


class CombinatorialBlowupError(CopulaError):
    """An enumeration would exceed its configured size cap."""


class UnsupportedMeasureError(CopulaError, ValueError):
    """A dependence measure has no closed form for the requested operation."""


class NumericError(CopulaError, ArithmeticError):
    """An iterative numerical routine failed to converge or invert."""


class SampleSizeError(CopulaError, ValueError):
    """Not enough samples for an empirical estimate at the requested resolution."""


class SupportError(CopulaError, ValueError):
    """A distribution's effective support could not be determined."""
