"""Byte-level encodings shared across the wire formats."""

from __future__ import annotations

import base64
import binascii
import json
import re

_B64URL_RE = re.compile(r"^[A-Za-z0-9_-]*$")


def b64url_encode(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).decode("ascii").rstrip("=")


def b64url_decode(text: str) -> bytes:
    """Strict decode: only the canonical, unpadded encoding of some byte
    string is accepted, so encode/decode is a true bijection (a flipped
    trailing bit cannot alias to the same bytes)."""
    if not _B64URL_RE.match(text) or len(text) % 4 == 1:
        raise ValueError(f"invalid base64url: {text[:32]!r}")
    padded = text + "=" * (-len(text) % 4)
    try:
        decoded = base64.urlsafe_b64decode(padded)
    except (binascii.Error, ValueError) as exc:
        raise ValueError(f"invalid base64url: {exc}") from exc
    if b64url_encode(decoded) != text:
        raise ValueError("non-canonical base64url encoding")
    return decoded


def canonical_json(value) -> bytes:
    """UTF-8 JSON with sorted keys and no whitespace; the signing input and
    every persisted record use this form so byte comparisons are stable."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
