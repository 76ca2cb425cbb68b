"""Exception types shared across the package."""


class DrsurvError(Exception):
    """Base class for all package errors."""


class SchemaError(DrsurvError):
    """A declared column is missing or the file layout is wrong."""


class ValidationError(DrsurvError):
    """Row-level data violates an invariant (non-binary flag, negative time, ...)."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class FitError(DrsurvError):
    """A model fit failed (non-convergence, empty stratum, degenerate data)."""


class NumericalError(DrsurvError):
    """A numerical routine failed past its safeguards (Cholesky, root bracket)."""
