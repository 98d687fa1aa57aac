"""
errors.py - Exception hierarchy

Every failure the pipeline reports on purpose derives from ArgpipeError, so
the CLI can turn it into exit code 1 with a one-line message. Lower-level
exceptions are chained with ``raise ... from exc``.
"""

from typing import Optional


class ArgpipeError(Exception):
    """Base class for all expected pipeline failures."""
    pass


class UsageError(ArgpipeError):
    """Bad command line: unknown subcommand or invalid flag."""
    pass


class ConfigError(ArgpipeError):
    pass


# ── corpus ────────────────────────────────────────────────────────────────────

class MalformedRecord(ArgpipeError):
    """Raised when a corpus line cannot be decoded or violates an invariant."""

    def __init__(self, line_number: int, reason: str):
        self.line_number = line_number
        self.reason = reason
        super().__init__(f"line {line_number}: {reason}")


class DuplicateCaseId(ArgpipeError):
    def __init__(self, case_id: str):
        self.case_id = case_id
        super().__init__(f"duplicate case_id {case_id!r}")


class EmptyCorpus(ArgpipeError):
    pass


class CorpusTooSmall(ArgpipeError):
    pass


# ── embeddings / segmentation ────────────────────────────────────────────────

class ProviderFailure(ArgpipeError):
    """An embedding or completion provider could not produce a result."""

    def __init__(self, message: str, cause: Optional[BaseException] = None):
        self.cause = cause
        super().__init__(message if cause is None else f"{message}: {cause}")


class DimensionMismatch(ArgpipeError):
    pass


class NonSquareMatrix(ArgpipeError):
    pass


class InvalidTargetCount(ArgpipeError):
    pass


# ── labeler ───────────────────────────────────────────────────────────────────

class SpanOutOfRange(ArgpipeError):
    pass


class SingleClassTrainingSet(ArgpipeError):
    pass


class NonFiniteLoss(ArgpipeError):
    pass


class EmptyTestSet(ArgpipeError):
    pass


# ── summarizer ────────────────────────────────────────────────────────────────

class EmptyText(ArgpipeError):
    pass


class LabelSegmentMismatch(ArgpipeError):
    pass


class RequestTooLarge(ArgpipeError):
    pass


class NoArgumentativeSegments(ArgpipeError):
    def __init__(self, case_id: str):
        self.case_id = case_id
        super().__init__(f"no argumentative segments in {case_id!r}")


class UnknownProfile(ArgpipeError):
    pass


# ── metrics / experiment ─────────────────────────────────────────────────────

class EmptyReference(ArgpipeError):
    pass


class EmptyRows(ArgpipeError):
    pass
