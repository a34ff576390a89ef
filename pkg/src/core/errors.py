"""
Exception hierarchy for cascade-uq.
The CLI maps these onto exit codes (usage/validation -> 2, runtime -> 1).
"""

from typing import Optional


class CascadeUQError(Exception):
    """Base class for every domain failure raised by this package."""


class ConfigError(CascadeUQError):
    """Invalid run configuration, grid or synthetic spec."""


class SchemaError(CascadeUQError):
    """Input columns do not match the active feature schema."""


class DataValidationError(CascadeUQError):
    """A value in the input violates a record invariant."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        self.row = row
        self.column = column
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column '{column}'")
        prefix = f"{', '.join(location)}: " if location else ""
        super().__init__(f"{prefix}{message}")


class FitError(CascadeUQError):
    """Model fitting is impossible on the given data (e.g. a single class)."""


class DegenerateDataError(CascadeUQError):
    """A statistic is undefined for the input (single class, zero marginal, too few values)."""


class AcquisitionRequiredError(CascadeUQError):
    """A record was escalated to stage 2 but its stage-2 features were never acquired."""

    def __init__(self, record_id: str, missing):
        self.record_id = record_id
        self.missing = list(missing)
        super().__init__(
            f"Record {record_id} needs stage-2 acquisition; missing features: {', '.join(self.missing)}"
        )


class FoldError(CascadeUQError):
    """A stage of an outer fold failed; carries the fold and stage for the report."""

    def __init__(self, fold: int, stage: str, cause: Exception):
        self.fold = fold
        self.stage = stage
        self.cause = cause
        super().__init__(f"fold {fold} failed during {stage}: {cause}")


# Exceptions that indicate a usage/validation problem rather than a runtime failure
USAGE_ERRORS = (ConfigError, SchemaError, DataValidationError)
