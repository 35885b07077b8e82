"""Exception hierarchy shared by the library and the CLI.

The CLI maps these onto exit codes: :class:`RasterIOError` -> 1,
:class:`ValidationError` / :class:`ConfigError` -> 2,
:class:`NumericalError` -> 3.
"""


class DespeckleError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(DespeckleError, ValueError):
    """Input data violates a documented precondition (non-finite pixels,
    negative intensities, mismatched shapes, ...)."""


class ConfigError(ValidationError):
    """A configuration value is out of range or inconsistent."""


class RasterIOError(DespeckleError, OSError):
    """A raster file could not be read, parsed or written."""


class NumericalError(DespeckleError, ArithmeticError):
    """A numerical stage produced an unusable result."""


class CoverageError(NumericalError):
    """Aggregation finished with pixels that received no estimate."""
