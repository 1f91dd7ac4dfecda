"""Exception hierarchy shared by every pipeline stage.

Each family carries the CLI exit code it maps to: validation failures exit 2,
backend failures exit 3, budget exhaustion exits 4.
"""

from __future__ import annotations

from typing import Any, Sequence


class SCSError(Exception):
    exit_code = 1


# -- validation family -------------------------------------------------------


class ValidationError(SCSError):
    exit_code = 2


class InvalidRequest(ValidationError):
    pass


class SchemaViolation(ValidationError):
    def __init__(self, message: str, fields: Sequence[str] = ()):
        self.fields = list(fields)
        if self.fields:
            message = f"{message}: {self.fields}"
        super().__init__(message)


class EmptyPersona(ValidationError):
    pass


class BadPathSyntax(ValidationError):
    pass


class PlanInvalid(ValidationError):
    def __init__(self, diagnostics: Sequence[Any]):
        self.diagnostics = list(diagnostics)
        codes = sorted({d.code for d in self.diagnostics})
        super().__init__(f"plan has fatal diagnostics: {', '.join(codes)}")

    @property
    def codes(self) -> list[str]:
        return [d.code for d in self.diagnostics]


class CycleDetected(ValidationError):
    pass


class DependencyCycle(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class RootNotEmpty(ValidationError):
    pass


class RootMissing(ValidationError):
    pass


class FetchAndSynthesisFailed(SCSError):
    def __init__(self, message: str, partial_manifest: dict | None = None):
        self.partial_manifest = partial_manifest or {}
        super().__init__(message)


class TooFewDrafts(ValidationError):
    pass


class DanglingReference(ValidationError):
    def __init__(self, message: str, references: Sequence[str] = ()):
        self.references = list(references)
        super().__init__(f"{message}: {self.references}" if self.references else message)


class PartitionInvalid(ValidationError):
    pass


class EmptySample(ValidationError):
    pass


class ScoreOutOfRange(ValidationError):
    pass


class StageAlreadyComplete(ValidationError):
    pass


class StageMissing(ValidationError):
    pass


class ValidationFailed(ValidationError):
    def __init__(self, path: Any, reason: str):
        self.path = path
        super().__init__(f"{path}: {reason}")


class LogCorrupt(ValidationError):
    pass


# -- backend family ----------------------------------------------------------


class BackendError(SCSError):
    exit_code = 3


class ReplayMiss(BackendError):
    def __init__(self, digest: str, role_label: str = ""):
        self.digest = digest
        super().__init__(f"no recorded response for digest {digest[:16]} (role {role_label!r})")


class BackendUnavailable(BackendError):
    pass


class FetchError(SCSError):
    pass


# -- simulation family -------------------------------------------------------


class BudgetExhausted(SCSError):
    exit_code = 4

    def __init__(self, message: str, record: Any = None):
        self.record = record
        super().__init__(message)


class ToolError(SCSError):
    """A tool invocation the work agent made could not be honoured.

    The engine records these as error turns instead of propagating them.
    """

    code = "ToolError"


class PathOutsideRoot(ToolError):
    code = "PathOutsideRoot"


class UnknownTool(ToolError):
    code = "UnknownTool"


class EmptyMessageBlocked(ToolError):
    code = "EmptyMessageBlocked"


class UnknownMessageId(ToolError):
    code = "UnknownMessageId"


class UnknownRecipient(ToolError):
    code = "UnknownRecipient"


class ToolNotFound(ToolError):
    code = "NotFound"


class ToolArgumentError(ToolError):
    code = "BadArguments"


class ReservedPath(ToolError):
    code = "ReservedPath"
