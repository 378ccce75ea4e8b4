"""Exception hierarchy shared across the package."""


class RegimeOptError(Exception):
    """Base class for all package errors."""


class ValidationError(RegimeOptError):
    """Bad arguments or malformed configuration."""


class DataError(RegimeOptError):
    """Problems with input data files or panels."""


class ParseError(DataError):
    """Malformed input file; carries a line number when known."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class InsufficientDataError(DataError):
    """Not enough usable rows/observations for the requested operation."""


class EstimationError(RegimeOptError):
    """Numerical failure while estimating a statistical model."""


class FeasibilityError(RegimeOptError):
    """Optimization problem has no feasible point for the given constraints."""


class CalibrationError(RegimeOptError):
    """Parameter calibration failed to produce a usable value."""
