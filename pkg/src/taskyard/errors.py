"""Exception hierarchy shared by all taskyard modules.

Every error carries a stable machine-readable ``code`` so the HTTP layer
can map it to exactly one ApiError document.
"""

from __future__ import annotations


class TaskyardError(Exception):
    """Base class for all taskyard errors."""

    code = "Error"
    http_status = 400

    def __init__(self, message: str = "", **detail):
        super().__init__(message or self.code)
        self.message = message or self.code
        self.detail = {k: v for k, v in detail.items() if v is not None}

    def __str__(self):
        if self.detail:
            extras = ", ".join(f"{k}={v}" for k, v in self.detail.items())
            return f"{self.message} ({extras})"
        return self.message


# --- plugin registry / schemas ---------------------------------------------

class UnknownPlugin(TaskyardError):
    code = "UnknownPlugin"
    http_status = 422


class DuplicatePlugin(TaskyardError):
    code = "DuplicatePlugin"
    http_status = 409


class MalformedSchema(TaskyardError):
    code = "MalformedSchema"
    http_status = 422


class InvalidCategory(TaskyardError):
    code = "InvalidCategory"
    http_status = 422


class AttributeNotVisible(TaskyardError):
    code = "AttributeNotVisible"
    http_status = 422


class AttributeReadOnly(TaskyardError):
    code = "AttributeReadOnly"
    http_status = 409


class ConfigError(TaskyardError):
    """A component failed its pre-submission integrity checks."""

    code = "ConfigError"
    http_status = 422


class NoHandler(TaskyardError):
    """No submission handler registered for an application/backend pair."""

    code = "NoHandler"
    http_status = 422


# --- core job model ----------------------------------------------------------

class UnknownJob(TaskyardError):
    code = "UnknownJob"
    http_status = 404


class IllegalTransition(TaskyardError):
    code = "IllegalTransition"
    http_status = 409

    def __init__(self, from_status, event):
        super().__init__(
            f"event {event!r} not allowed from status {from_status!r}",
            from_status=str(from_status),
            event=str(event),
        )


class JobNotModifiable(TaskyardError):
    """Attribute writes are rejected once a job left the ``new`` status."""

    code = "JobNotModifiable"
    http_status = 409


class EmptySubjobs(TaskyardError):
    code = "EmptySubjobs"
    http_status = 422


class JobActive(TaskyardError):
    """Operation needs a settled job (e.g. removing a running job)."""

    code = "JobActive"
    http_status = 409


# --- persistence -------------------------------------------------------------

class StorageError(TaskyardError):
    code = "StorageError"
    http_status = 500


class SessionLocked(TaskyardError):
    code = "SessionLocked"
    http_status = 409


class UnknownTemplate(TaskyardError):
    code = "UnknownTemplate"
    http_status = 404


class InvalidFilter(TaskyardError):
    code = "InvalidFilter"
    http_status = 422


class PathExists(TaskyardError):
    code = "PathExists"
    http_status = 409


class PathMissing(TaskyardError):
    code = "PathMissing"
    http_status = 404


class NotEmpty(TaskyardError):
    code = "NotEmpty"
    http_status = 409


class MigrationGap(TaskyardError):
    """A stored record cannot be upgraded because a migration step is missing."""

    code = "MigrationGap"
    http_status = 409


class FileMissing(TaskyardError):
    code = "FileMissing"
    http_status = 404


class PeekUnavailable(TaskyardError):
    code = "PeekUnavailable"
    http_status = 404


class WorkspaceMissing(TaskyardError):
    code = "WorkspaceMissing"
    http_status = 500


# --- backends ----------------------------------------------------------------

class SubmitFailed(TaskyardError):
    code = "SubmitFailed"
    http_status = 502


class QueueUnknown(TaskyardError):
    code = "QueueUnknown"
    http_status = 422


class TransportError(TaskyardError):
    code = "TransportError"
    http_status = 503


class BackendUnavailable(TaskyardError):
    code = "BackendUnavailable"
    http_status = 503


class UnknownHandle(TaskyardError):
    code = "UnknownHandle"
    http_status = 404


class AlreadyFinished(TaskyardError):
    """Kill of an already-finished job: idempotent, reported for logging."""

    code = "AlreadyFinished"
    http_status = 409


class OutputMissing(TaskyardError):
    code = "OutputMissing"
    http_status = 404


# --- split / merge / robot ---------------------------------------------------

class SplitterMismatch(TaskyardError):
    code = "SplitterMismatch"
    http_status = 422


class EmptySplit(TaskyardError):
    code = "EmptySplit"
    http_status = 422


class MergeIncomplete(TaskyardError):
    code = "MergeIncomplete"
    http_status = 409


class ShapeMismatch(TaskyardError):
    code = "ShapeMismatch"
    http_status = 422


class ActionFailed(TaskyardError):
    code = "ActionFailed"
    http_status = 500

    def __init__(self, action: str, reason: str):
        super().__init__(f"action {action} failed: {reason}", action=action, reason=reason)


# --- lifecycle ----------------------------------------------------------------

class GateError(TaskyardError):
    """Operation refused because the session credential is not usable."""

    code = "GateError"
    http_status = 403


class AlreadyRunning(TaskyardError):
    code = "AlreadyRunning"
    http_status = 409


# --- interface -----------------------------------------------------------------

class ConfigParseError(TaskyardError):
    code = "ConfigParseError"
    http_status = 422

    def __init__(self, message, path=None, line=None, column=None, **detail):
        super().__init__(message, path=str(path) if path else None,
                         line=line, column=column, **detail)


class SandboxSizeWarning(UserWarning):
    """Input sandbox file exceeds the configured size threshold (staging proceeds)."""
