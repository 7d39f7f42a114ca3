"""Exception hierarchy shared by every layer of the store."""

from __future__ import annotations

from typing import Any


class MemDagError(Exception):
    """Base class for all memdag errors."""


class ValidationError(MemDagError):
    def __init__(self, message: str, violations: list[str] | None = None):
        super().__init__(message)
        self.violations = list(violations or [])


class UnknownNodeError(MemDagError, KeyError):
    def __init__(self, node_id: str):
        super().__init__(node_id)
        self.node_id = node_id

    def __str__(self) -> str:
        return f"unknown node id: {self.node_id}"


class DuplicateNodeError(MemDagError):
    pass


class RootOperationError(ValidationError):
    pass


class TombstonedNodeError(ValidationError):
    pass


class InvariantViolation(MemDagError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations[:5]))
        self.violations = violations


class CycleError(MemDagError):
    pass


class ProviderError(MemDagError):
    """Any failure talking to a chat or embedding backend."""


class TransportError(ProviderError):
    """Retriable network/backend failure."""


class ProtocolError(ProviderError):
    """Backend answered, but the answer violated the expected structure."""

    def __init__(self, message: str, payload: Any = None):
        super().__init__(message)
        self.payload = payload


class ToolError(MemDagError):
    pass


class StorageError(MemDagError):
    pass


class ChecksumError(StorageError):
    pass


class RecordError(StorageError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
