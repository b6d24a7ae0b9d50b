"""Shared error base.

Every domain error carries a stable machine-readable ``code`` that service
layers put on the wire verbatim, so clients can match on it.
"""

from __future__ import annotations


class RescredError(Exception):
    """Base class for all domain errors."""

    code = "internal-error"

    def __init__(self, message: str = "", *, detail: str = ""):
        super().__init__(message or self.code)
        self.detail = detail

    @property
    def message(self) -> str:
        return str(self)
