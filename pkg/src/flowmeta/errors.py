"""Exception hierarchy shared across the package."""

from __future__ import annotations


class FlowMetaError(Exception):
    """Base class for every error raised by flowmeta."""


# --- workflow DSL -----------------------------------------------------------


class ProgramError(FlowMetaError):
    """A workflow program could not be parsed or failed validation."""


class DSLSyntaxError(ProgramError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class UnknownNodeKind(ProgramError):
    def __init__(self, kind: str, line: int = 0, column: int = 0):
        super().__init__(f"unknown node kind {kind!r} at line {line}, column {column}")
        self.kind = kind
        self.line = line
        self.column = column


class DanglingReference(ProgramError):
    def __init__(self, reference: str, node_id: str | None = None):
        where = f" in node {node_id!r}" if node_id else ""
        super().__init__(f"reference {reference!r}{where} names no earlier output")
        self.reference = reference
        self.node_id = node_id


class UnboundedLoop(ProgramError):
    def __init__(self, node_id: str, rounds: int, cap: int):
        super().__init__(f"loop {node_id!r} has max rounds {rounds}; must be in [1, {cap}]")
        self.node_id = node_id
        self.rounds = rounds
        self.cap = cap


class InvalidProgram(ProgramError):
    """Validation found one or more violations; ``violations`` holds them."""

    def __init__(self, violations):
        self.violations = list(violations)
        text = "; ".join(str(v) for v in self.violations) or "invalid program"
        super().__init__(text)


# --- execution --------------------------------------------------------------


class ExecutionError(FlowMetaError):
    """A workflow failed while running on a task."""


class BudgetExceeded(ExecutionError):
    pass


class ExtractionFailed(ExecutionError):
    pass


class EmptyAnswer(ExecutionError):
    pass


# --- LLM gateway ------------------------------------------------------------


class BackendError(FlowMetaError):
    """Any failure coming from a language-model backend."""


class TransportError(BackendError):
    pass


class RateLimited(BackendError):
    def __init__(self, message: str = "rate limited", retry_after: float | None = None):
        super().__init__(message)
        self.retry_after = retry_after


class AuthError(BackendError):
    pass


class ScriptMiss(BackendError):
    def __init__(self, closest: str | None):
        hint = f"; closest rule: {closest}" if closest else "; no rules configured"
        super().__init__(f"no scripted rule matches the prompt{hint}")
        self.closest = closest


class MalformedOutput(FlowMetaError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(f"response is missing fields: {', '.join(self.missing)}")


# --- corpus / clustering ----------------------------------------------------


class CorpusError(FlowMetaError):
    pass


class FormatError(CorpusError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DuplicateId(CorpusError):
    def __init__(self, task_id: str, line: int):
        super().__init__(f"duplicate task id {task_id!r} on line {line}")
        self.task_id = task_id
        self.line = line


class TooFewTasks(CorpusError):
    pass


class BadK(FlowMetaError, ValueError):
    pass


class EmbedBackendError(FlowMetaError):
    pass


# --- evaluation -------------------------------------------------------------


class EmptySubtask(FlowMetaError):
    pass


class ExternalEvaluatorMissing(FlowMetaError):
    pass


# --- storage ----------------------------------------------------------------


class StorageError(FlowMetaError):
    pass


class NoScoredEntry(StorageError):
    pass


class CorruptRun(StorageError):
    pass


class ConfigError(FlowMetaError):
    """Bad user configuration; the CLI maps this to exit code 2."""
