"""Error taxonomy shared by all modules.

Every failure surfaced to the CLI or service maps onto one of three exit
codes: bad configuration or geometry (2), numerical failure or resource
exhaustion (3), violated mathematical invariant (4).
"""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_INVARIANT = 4


class FractalWalksError(Exception):
    """Base class; `exit_code` drives the CLI exit-code protocol."""

    exit_code = EXIT_CONFIG


class InvalidParameterError(FractalWalksError):
    exit_code = EXIT_CONFIG


class InvalidGeometryError(FractalWalksError):
    """Annuli or balls that are empty or fall outside the usable region."""

    exit_code = EXIT_CONFIG


class BoundaryContaminationError(FractalWalksError):
    """Requested radii would let walks feel the truncation boundary."""

    exit_code = EXIT_CONFIG


class ResourceLimitError(FractalWalksError):
    exit_code = EXIT_NUMERICAL


class NumericalFailureError(FractalWalksError):
    exit_code = EXIT_NUMERICAL


class InvariantViolationError(FractalWalksError):
    """A checked mathematical identity or bound failed beyond tolerance."""

    exit_code = EXIT_INVARIANT
