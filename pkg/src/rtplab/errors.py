"""Exception types shared across the package."""


class RtplabError(Exception):
    """Base class for all package errors."""


class PriceDomainError(RtplabError, ValueError):
    """A price (or quantity mapped to a price) is outside the valid domain."""


class CalibrationError(RtplabError, ValueError):
    """Demand calibration produced an invalid model (e.g. non-positive scale)."""


class FitError(RtplabError, ValueError):
    """Regression input is degenerate."""


class ControllerError(RtplabError, RuntimeError):
    """The price update encountered a corrupted or singular gain denominator."""


class AnalysisError(RtplabError, RuntimeError):
    """A stability computation could not be completed reliably."""


class IngestionError(RtplabError, ValueError):
    """A data file could not be parsed or failed validation."""

    def __init__(self, message: str, row: int | None = None):
        if row is not None:
            message = f"{message} (row {row})"
        super().__init__(message)
        self.row = row


class ScenarioError(RtplabError, ValueError):
    """A scenario configuration is malformed or inconsistent."""
