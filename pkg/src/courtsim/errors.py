"""Exception hierarchy shared across the simulator."""

from __future__ import annotations

from typing import Any


class CourtsimError(Exception):
    pass


# -- case files ---------------------------------------------------------------


class CaseFileError(CourtsimError, ValueError):
    pass


class MissingField(CaseFileError):
    def __init__(self, name: str):
        super().__init__(f"missing required field: {name!r}")
        self.name = name


class EmptyField(CaseFileError):
    def __init__(self, name: str):
        super().__init__(f"required field is empty: {name!r}")
        self.name = name


class MalformedFile(CaseFileError):
    def __init__(self, reason: str):
        super().__init__(f"malformed case file: {reason}")
        self.reason = reason


# -- knowledge base -----------------------------------------------------------


class KnowledgeBaseError(CourtsimError):
    pass


class InvalidChunkParams(KnowledgeBaseError, ValueError):
    pass


class EmbedderFailure(KnowledgeBaseError):
    def __init__(self, chunk_id: int | None, detail: str = ""):
        where = f"chunk {chunk_id}" if chunk_id is not None else "query"
        super().__init__(f"embedder failed on {where}" + (f": {detail}" if detail else ""))
        self.chunk_id = chunk_id
        self.detail = detail


class CorruptStore(KnowledgeBaseError):
    def __init__(self, reason: str):
        super().__init__(f"corrupt vector store: {reason}")
        self.reason = reason


class DimensionMismatch(KnowledgeBaseError):
    def __init__(self, expected: int, actual: int):
        super().__init__(f"dimension mismatch: expected {expected}, got {actual}")
        self.expected = expected
        self.actual = actual


class EmbedderMismatch(KnowledgeBaseError):
    def __init__(self, store_identity: str, embedder_identity: str):
        super().__init__(
            f"store was built with {store_identity!r} but query embedder is {embedder_identity!r}"
        )
        self.store_identity = store_identity
        self.embedder_identity = embedder_identity


# -- gateway ------------------------------------------------------------------


class GatewayError(CourtsimError):
    pass


class BackendUnavailable(GatewayError):
    def __init__(self, detail: str, attempts: int = 0):
        super().__init__(f"backend unavailable after {attempts} attempt(s): {detail}")
        self.detail = detail
        self.attempts = attempts


class BackendError(GatewayError):
    def __init__(self, status: int, body: str):
        super().__init__(f"backend error {status}: {body[:200]}")
        self.status = status
        self.body = body


class ScriptExhausted(GatewayError):
    def __init__(self, key: str):
        super().__init__(f"mock script has no response for {key!r}")
        self.key = key


# -- metrics / orchestration --------------------------------------------------


class EmptyInput(CourtsimError, ValueError):
    pass


class RunAborted(CourtsimError):
    """Raised when a simulation cannot continue.

    ``partial`` carries whatever report material was assembled before the
    failure (at minimum the transcript so far).
    """

    def __init__(self, phase: str, cause: BaseException, partial: dict[str, Any] | None = None):
        super().__init__(f"run aborted during {phase}: {cause}")
        self.phase = phase
        self.cause = cause
        self.partial = partial or {}
