"""Randomness source used by every module that needs entropy.

All key, nonce, and identifier generation is routed through one source so a
test run can swap in a seeded generator and become reproducible.  The seeded
generator is a SHA-256 counter stream and is deliberately gated behind an
explicit opt-in: it exists for deterministic tests, never for production use.
"""

from __future__ import annotations

import hashlib
import secrets
import threading

from .errors import RescredError


class RandomnessUnavailableError(RescredError):
    code = "randomness-unavailable"


class RandomSource:
    """Cryptographically secure source backed by the OS."""

    def token_bytes(self, n: int) -> bytes:
        try:
            return secrets.token_bytes(n)
        except OSError as exc:  # pragma: no cover - OS entropy failure
            raise RandomnessUnavailableError(str(exc)) from exc

    def token_hex(self, n: int) -> str:
        return self.token_bytes(n).hex()


class SeededRandomSource(RandomSource):
    """Deterministic SHA-256 counter stream. Insecure; test use only."""

    def __init__(self, seed: int):
        self._seed = seed.to_bytes(16, "big", signed=False) if seed >= 0 else str(seed).encode()
        self._counter = 0
        self._lock = threading.Lock()

    def token_bytes(self, n: int) -> bytes:
        out = b""
        with self._lock:
            while len(out) < n:
                block = hashlib.sha256(self._seed + self._counter.to_bytes(8, "big")).digest()
                self._counter += 1
                out += block
        return out[:n]


_default_source: RandomSource = RandomSource()
_lock = threading.Lock()


def default_source() -> RandomSource:
    return _default_source


def set_default_source(source: RandomSource) -> None:
    global _default_source
    with _lock:
        _default_source = source


def seed_for_tests(seed: int) -> None:
    """Install a deterministic source. Callers must gate this behind an
    explicit test-mode switch; it is never the default."""
    set_default_source(SeededRandomSource(seed))


def token_bytes(n: int, source: RandomSource | None = None) -> bytes:
    return (source or _default_source).token_bytes(n)


def new_id(source: RandomSource | None = None) -> str:
    """128-bit random identifier as lowercase hex."""
    return token_bytes(16, source).hex()
