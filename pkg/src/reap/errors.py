"""Exception hierarchy shared across the package."""

from __future__ import annotations

from typing import Any


class ReapError(Exception):
    """Base class for every error raised by this package."""


# plan-core

class PlanError(ReapError):
    pass


class PlanInvalid(PlanError):
    def __init__(self, message: str, violations: list[str] | None = None):
        super().__init__(message)
        self.violations = list(violations or [])


class UnknownTask(PlanError):
    pass


class TaskNotLive(UnknownTask):
    """The task exists but has been pruned."""


class CannotRefineResolved(UnknownTask):
    pass


class CannotPruneResolved(PlanError):
    pass


class TooManyBranches(PlanError):
    pass


class IdCollision(PlanError):
    pass


class RetryExhausted(PlanError):
    pass


class PlanPreconditionError(PlanError):
    """An operation was called on a plan state it does not accept."""


# fact-store

class FactError(ReapError):
    pass


class InvalidFact(FactError):
    pass


class DuplicateDirectAnswer(FactError):
    pass


# llm-gateway

class GatewayError(ReapError):
    pass


class BackendUnavailable(GatewayError):
    def __init__(self, message: str, retry_after: float | None = None):
        super().__init__(message)
        self.retry_after = retry_after


class MalformedOutput(GatewayError):
    pass


class EmptyPlan(MalformedOutput):
    pass


class InapplicableDecision(GatewayError):
    pass


class ConfigError(ReapError):
    pass


# retrieval

class RetrievalError(ReapError):
    pass


class MalformedRecord(RetrievalError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DuplicateDocId(RetrievalError):
    def __init__(self, doc_id: str, first_line: int, second_line: int):
        super().__init__(
            f"duplicate document id {doc_id!r} on lines {first_line} and {second_line}"
        )
        self.doc_id = doc_id
        self.lines = (first_line, second_line)


class EmptyIndex(RetrievalError):
    pass


class RetrieverUnavailable(RetrievalError):
    pass


class MalformedResponse(RetrievalError):
    pass


# engine / eval

class EngineError(ReapError):
    pass


class DecomposeFailed(EngineError):
    pass


class IoFailure(ReapError):
    pass


class DatasetMalformed(ReapError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class EmptySet(ReapError):
    pass


def attach_trace(exc: BaseException, trace: Any) -> BaseException:
    """Attach a partial trace to an exception propagating out of a run."""
    exc.trace = trace  # type: ignore[attr-defined]
    return exc
