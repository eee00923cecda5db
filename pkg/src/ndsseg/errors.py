"""Exception hierarchy shared across the package."""


class NdsError(Exception):
    """Base class for all package errors."""


class ValidationError(NdsError):
    """Input violates a documented precondition or invariant."""


class ShapeError(ValidationError):
    """Array dimensions are inconsistent with what an operation requires."""


class ConfigError(ValidationError):
    """A configuration object holds an unsupported combination of values."""


class NoPositiveRegion(NdsError):
    """Wise-crop sampling was requested on a mask with no positive pixels."""


class CoverageError(NdsError):
    """A tiling plan leaves part of the field uncovered."""

    def __init__(self, row: int, col: int):
        self.row = row
        self.col = col
        super().__init__(f"pixel ({row}, {col}) not covered by any tile")
