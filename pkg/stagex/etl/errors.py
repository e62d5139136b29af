"""
Exception hierarchy for the StageX engine.

Every error carries a machine-readable ``code``; the CLI renders it with
``to_line()`` and exits nonzero.
"""

from typing import Any, Optional


class EtlError(Exception):
    """Base class for all engine errors."""

    code = "ETL_ERROR"

    def to_line(self) -> str:
        return f"ERROR code={self.code} message={self}"


# --- Configuration ---

class ParseError(EtlError):
    """Malformed config file or feed row."""

    code = "PARSE_ERROR"

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigValidationError(EtlError):
    """Config parsed but violates a cross-reference rule."""

    code = "VALIDATION_ERROR"

    def __init__(self, message: str, violations: Optional[list] = None):
        self.violations = violations or []
        super().__init__(message)


# --- Extraction ---

class UnknownFeed(EtlError):
    code = "UNKNOWN_FEED"


class FutureDate(EtlError):
    code = "FUTURE_DATE"


class FeedMissing(EtlError):
    code = "FEED_MISSING"


# --- Storage ---

class TableNotFound(EtlError):
    code = "TABLE_NOT_FOUND"


class StoreCorruption(EtlError):
    code = "STORE_CORRUPTION"


class PersistenceError(EtlError):
    code = "PERSISTENCE_ERROR"


class InvariantViolation(EtlError):
    code = "INVARIANT_VIOLATION"


class SnapshotNotFound(EtlError):
    code = "SNAPSHOT_NOT_FOUND"


# --- Key validation / loading ---

class MissingFkValue(EtlError):
    code = "MISSING_FK_VALUE"


class HistoryRowNotFound(EtlError):
    code = "HISTORY_ROW_NOT_FOUND"


class DuplicateStatic(EtlError):
    code = "DUPLICATE_STATIC"


class UnknownColumn(EtlError):
    code = "UNKNOWN_COLUMN"


# --- Orchestration ---

class Lv1Missing(EtlError):
    code = "LV1_MISSING"


class BatchStateError(EtlError):
    code = "BATCH_STATE"


class TargetSetMismatch(EtlError):
    code = "TARGET_SET_MISMATCH"


class PhaseFailure(EtlError):
    """A pipeline phase failed; the SOR has been restored."""

    code = "PHASE_FAILURE"

    def __init__(self, phase: str, target: Optional[str], cause: BaseException, report: Any = None):
        self.phase = phase
        self.target = target
        self.cause = cause
        self.report = report
        where = f"{phase}/{target}" if target else phase
        cause_code = getattr(cause, "code", type(cause).__name__)
        super().__init__(f"{where} failed ({cause_code}): {cause}")


ValidationError = ConfigValidationError
