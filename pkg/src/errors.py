"""Exception hierarchy shared by the benchmark modules."""

from __future__ import annotations

from typing import Any, Dict, Optional


class BenchError(RuntimeError):
    """Base class for errors raised by the benchmark toolkit."""

    def __init__(self, message: str, *, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.details: Dict[str, Any] = dict(details or {})

    def to_record(self) -> Dict[str, Any]:
        """Machine-readable form used by the CLI on failure."""
        return {"error": type(self).__name__, "message": str(self), "details": self.details}


class ContractViolation(BenchError, ValueError):
    """Raised when an operation is called outside its preconditions."""
