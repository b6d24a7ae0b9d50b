"""Decentralized identifiers.

Two methods exist in this system and they deliberately do different jobs:

* ``did:key`` identifies natural persons (holders). The identifier embeds
  the public key itself (multicodec prefix + compressed point, base58btc
  with a ``z`` multibase prefix), so resolution is pure string decoding and
  never touches a ledger.
* ``did:ebsi`` identifies legal entities (issuers, verifiers). The
  identifier is opaque; the keys live in a DID document on the registry.

Holders never get on-ledger documents; that split is a privacy constraint,
not an implementation shortcut.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from .crypto import CURVE_ID, InvalidKeyError, PublicKey
from .errors import RescredError
from .rng import RandomSource, default_source

METHOD_KEY = "key"
METHOD_EBSI = "ebsi"

# multicodec varint for a compressed P-256 public key
MULTICODEC_P256 = b"\x80\x24"
MULTIBASE_B58 = "z"

EBSI_ID_BYTES = 16
EBSI_ID_CHARS = 22

_B58_ALPHABET = "123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz"
_B58_INDEX = {c: i for i, c in enumerate(_B58_ALPHABET)}


class DidError(RescredError):
    pass


class MalformedDidError(DidError):
    code = "malformed-did"


class WrongMethodError(DidError):
    code = "wrong-method"


class MalformedMultibaseError(DidError):
    code = "malformed-multibase"


class OffCurvePointError(DidError):
    code = "off-curve-point"


class EmptyKeysError(DidError):
    code = "empty-keys"


class DuplicateKeyIdError(DidError):
    code = "duplicate-key-id"


def b58encode(data: bytes) -> str:
    num = int.from_bytes(data, "big")
    digits = []
    while num:
        num, rem = divmod(num, 58)
        digits.append(_B58_ALPHABET[rem])
    zeros = len(data) - len(data.lstrip(b"\x00"))
    return "1" * zeros + "".join(reversed(digits))


def b58decode(text: str) -> bytes:
    num = 0
    for ch in text:
        if ch not in _B58_INDEX:
            raise ValueError(f"invalid base58 character {ch!r}")
        num = num * 58 + _B58_INDEX[ch]
    body = num.to_bytes((num.bit_length() + 7) // 8, "big")
    zeros = len(text) - len(text.lstrip("1"))
    return b"\x00" * zeros + body


@dataclass(frozen=True)
class Did:
    method: str
    method_specific_id: str

    def __post_init__(self):
        if self.method not in (METHOD_KEY, METHOD_EBSI):
            raise MalformedDidError(f"unsupported method {self.method!r}")
        if not self.method_specific_id:
            raise MalformedDidError("empty method-specific id")
        body = self.method_specific_id
        if self.method == METHOD_KEY:
            if not body.startswith(MULTIBASE_B58):
                raise MalformedDidError("did:key id must carry the base58btc multibase prefix")
            body = body[1:]
        if not body or any(c not in _B58_INDEX for c in body):
            raise MalformedDidError("id contains characters outside the base58btc alphabet")

    def __str__(self) -> str:
        return f"did:{self.method}:{self.method_specific_id}"

    @classmethod
    def parse(cls, text: str) -> "Did":
        parts = text.split(":", 2)
        if len(parts) != 3 or parts[0] != "did":
            raise MalformedDidError(f"not a DID: {text!r}")
        return cls(method=parts[1], method_specific_id=parts[2])


def did_key_from_public_key(key: PublicKey) -> Did:
    """Derive the self-certifying DID for a public key. Deterministic."""
    if not isinstance(key, PublicKey):
        raise InvalidKeyError("expected a PublicKey")
    encoded = MULTIBASE_B58 + b58encode(MULTICODEC_P256 + key.point_bytes)
    return Did(method=METHOD_KEY, method_specific_id=encoded)


def resolve_did_key(did: Did) -> PublicKey:
    """Extract the embedded public key. Pure string decoding, no lookups."""
    if did.method != METHOD_KEY:
        raise WrongMethodError(f"expected did:key, got did:{did.method}")
    encoded = did.method_specific_id
    if not encoded.startswith(MULTIBASE_B58):
        raise MalformedMultibaseError("missing base58btc multibase prefix")
    try:
        raw = b58decode(encoded[1:])
    except ValueError as exc:
        raise MalformedMultibaseError(str(exc)) from exc
    if len(raw) < len(MULTICODEC_P256) or raw[: len(MULTICODEC_P256)] != MULTICODEC_P256:
        raise MalformedMultibaseError("missing or unknown multicodec prefix")
    point = raw[len(MULTICODEC_P256):]
    try:
        return PublicKey(curve=CURVE_ID, point_bytes=point)
    except InvalidKeyError as exc:
        raise OffCurvePointError(str(exc)) from exc


def new_ebsi_did(source: RandomSource | None = None) -> Did:
    """Fresh opaque ledger identifier: 16 random bytes, base58btc, padded to
    a fixed 22 characters. Uniqueness is enforced at registration time."""
    raw = (source or default_source()).token_bytes(EBSI_ID_BYTES)
    encoded = b58encode(raw).rjust(EBSI_ID_CHARS, "1")
    return Did(method=METHOD_EBSI, method_specific_id=encoded)


@dataclass
class DidDocument:
    """On-ledger record binding a did:ebsi to its verification keys."""

    id: Did
    verification_keys: list = field(default_factory=list)  # [(key_id, PublicKey)]
    created_at: int = 0
    deactivated: bool = False

    def key_by_id(self, key_id: str) -> PublicKey | None:
        for kid, key in self.verification_keys:
            if kid == key_id:
                return key
        return None

    def to_wire(self) -> dict:
        return {
            "id": str(self.id),
            "verificationMethod": [
                {
                    "id": kid,
                    "publicKeyMultibase": MULTIBASE_B58 + b58encode(MULTICODEC_P256 + key.point_bytes),
                }
                for kid, key in self.verification_keys
            ],
            "created": self.created_at,
            "deactivated": self.deactivated,
        }

    @classmethod
    def from_wire(cls, wire: dict) -> "DidDocument":
        keys = []
        for method in wire["verificationMethod"]:
            encoded = method["publicKeyMultibase"]
            if not encoded.startswith(MULTIBASE_B58):
                raise MalformedMultibaseError("missing multibase prefix")
            raw = b58decode(encoded[1:])
            if raw[: len(MULTICODEC_P256)] != MULTICODEC_P256:
                raise MalformedMultibaseError("missing multicodec prefix")
            keys.append((method["id"], PublicKey(curve=CURVE_ID, point_bytes=raw[len(MULTICODEC_P256):])))
        return cls(
            id=Did.parse(wire["id"]),
            verification_keys=keys,
            created_at=int(wire["created"]),
            deactivated=bool(wire["deactivated"]),
        )


def build_did_document(did: Did, keys: list, now: int | None = None) -> DidDocument:
    """Assemble a fresh document for a legal-entity DID."""
    if did.method != METHOD_EBSI:
        raise WrongMethodError("documents exist only for did:ebsi")
    if not keys:
        raise EmptyKeysError("a document needs at least one verification key")
    seen = set()
    for kid, _key in keys:
        if kid in seen:
            raise DuplicateKeyIdError(f"duplicate key id {kid!r}")
        seen.add(kid)
    return DidDocument(
        id=did,
        verification_keys=list(keys),
        created_at=int(time.time()) if now is None else now,
        deactivated=False,
    )
