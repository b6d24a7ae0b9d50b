"""Cryptographic primitives: P-256 keys, signed compact tokens, and the
ephemeral-static ECDH envelope used to protect presentation responses.

One fixed profile is supported end to end:

* keys: NIST P-256, public keys as 33-byte compressed SEC1 points
* signatures: ECDSA over SHA-256 with deterministic (RFC 6979 style)
  nonces, serialized as raw ``r || s`` (64 bytes)
* tokens: ``base64url(header).base64url(payload).base64url(signature)``
  with UTF-8, sorted-key JSON maps
* envelopes: ephemeral-static ECDH into a SHA-256 concatenation KDF into
  AES-256-GCM with a 96-bit IV and 128-bit tag

Everything here is stateless apart from ``Nonce`` bookkeeping, which the
calling services own.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.asymmetric.utils import (
    decode_dss_signature,
    encode_dss_signature,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.concatkdf import ConcatKDFHash

from .encoding import b64url_decode, b64url_encode, canonical_json
from .errors import RescredError
from .rng import RandomSource, default_source

CURVE_ID = "P-256"
SIGNING_ALG = "ES256"
FIELD_BYTES = 32
POINT_BYTES = 33
ENVELOPE_ENC_ALG = b"A256GCM"
IV_BYTES = 12
TAG_BYTES = 16
NONCE_BYTES = 32

_CURVE = ec.SECP256R1()
_CURVE_ORDER = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551


class CryptoError(RescredError):
    pass


class InvalidKeyError(CryptoError):
    code = "invalid-key"


class InvalidRecipientKeyError(CryptoError):
    code = "invalid-recipient-key"


class UnserializableClaimsError(CryptoError):
    code = "unserializable-claims"


class MalformedTokenError(CryptoError):
    code = "malformed-token"


class BadSignatureError(CryptoError):
    code = "bad-signature"


class UnsupportedAlgorithmError(CryptoError):
    code = "unsupported-algorithm"


class MalformedEnvelopeError(CryptoError):
    code = "malformed-envelope"


class AuthFailureError(CryptoError):
    code = "auth-failure"


@dataclass(frozen=True)
class PublicKey:
    """Compressed P-256 point. Construction validates the point is on the
    curve; the identity point is unrepresentable in compressed SEC1 and any
    attempt to smuggle one in is rejected."""

    curve: str
    point_bytes: bytes

    def __post_init__(self):
        if self.curve != CURVE_ID:
            raise InvalidKeyError(f"unsupported curve {self.curve!r}")
        if len(self.point_bytes) != POINT_BYTES or self.point_bytes[0] not in (2, 3):
            raise InvalidKeyError("public key must be a 33-byte compressed point")
        try:
            ec.EllipticCurvePublicKey.from_encoded_point(_CURVE, self.point_bytes)
        except ValueError as exc:
            raise InvalidKeyError(f"point not on curve: {exc}") from exc

    def to_cryptography(self) -> ec.EllipticCurvePublicKey:
        return ec.EllipticCurvePublicKey.from_encoded_point(_CURVE, self.point_bytes)


@dataclass(frozen=True)
class KeyPair:
    curve: str
    private_scalar: bytes = field(repr=False)
    public_key: PublicKey

    def to_cryptography(self) -> ec.EllipticCurvePrivateKey:
        return ec.derive_private_key(int.from_bytes(self.private_scalar, "big"), _CURVE)


def _public_key_from_private(private: ec.EllipticCurvePrivateKey) -> PublicKey:
    from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

    point = private.public_key().public_bytes(Encoding.X962, PublicFormat.CompressedPoint)
    return PublicKey(curve=CURVE_ID, point_bytes=point)


def generate_key_pair(source: RandomSource | None = None) -> KeyPair:
    """Fresh P-256 key pair. The scalar is reduced from 48 source bytes so
    the modulo bias is negligible."""
    raw = (source or default_source()).token_bytes(48)
    scalar = int.from_bytes(raw, "big") % (_CURVE_ORDER - 1) + 1
    private = ec.derive_private_key(scalar, _CURVE)
    return KeyPair(
        curve=CURVE_ID,
        private_scalar=scalar.to_bytes(FIELD_BYTES, "big"),
        public_key=_public_key_from_private(private),
    )


def key_pair_from_scalar(private_scalar: bytes) -> KeyPair:
    """Rebuild a key pair from a stored 32-byte scalar."""
    if len(private_scalar) != FIELD_BYTES:
        raise InvalidKeyError("private scalar must be 32 bytes")
    scalar = int.from_bytes(private_scalar, "big")
    if not 1 <= scalar < _CURVE_ORDER:
        raise InvalidKeyError("private scalar out of range")
    private = ec.derive_private_key(scalar, _CURVE)
    return KeyPair(curve=CURVE_ID, private_scalar=private_scalar, public_key=_public_key_from_private(private))


@dataclass(frozen=True)
class CompactToken:
    """Signed three-segment token: header and payload maps plus a raw
    ``r || s`` signature."""

    header: dict
    payload: dict
    signature: bytes

    def __post_init__(self):
        if len(self.signature) != 2 * FIELD_BYTES:
            raise MalformedTokenError("signature must be raw r||s (64 bytes)")

    def signing_input(self) -> bytes:
        return _signing_input(self.header, self.payload)

    def encode(self) -> str:
        return ".".join(
            (
                b64url_encode(canonical_json(self.header)),
                b64url_encode(canonical_json(self.payload)),
                b64url_encode(self.signature),
            )
        )

    @classmethod
    def decode(cls, text: str) -> "CompactToken":
        parts = text.split(".")
        if len(parts) != 3:
            raise MalformedTokenError("token must have exactly three segments")
        try:
            header = _decode_json_map(parts[0], "header")
            payload = _decode_json_map(parts[1], "payload")
            signature = b64url_decode(parts[2])
        except ValueError as exc:
            raise MalformedTokenError(str(exc)) from exc
        if len(signature) != 2 * FIELD_BYTES:
            raise MalformedTokenError("signature must be raw r||s (64 bytes)")
        return cls(header=header, payload=payload, signature=signature)


def _decode_json_map(segment: str, name: str) -> dict:
    import json

    raw = b64url_decode(segment)
    try:
        value = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedTokenError(f"{name} is not a JSON map: {exc}") from exc
    if not isinstance(value, dict):
        raise MalformedTokenError(f"{name} is not a JSON map")
    return value


def _signing_input(header: dict, payload: dict) -> bytes:
    try:
        head = b64url_encode(canonical_json(header))
        body = b64url_encode(canonical_json(payload))
    except (TypeError, ValueError) as exc:
        raise UnserializableClaimsError(str(exc)) from exc
    return f"{head}.{body}".encode("ascii")


def sign_token(claims: dict, header_extras: dict, key: KeyPair) -> CompactToken:
    """Sign a claims map. The header always carries the algorithm id; the
    caller supplies the key id (and anything else) via ``header_extras``."""
    header = {"alg": SIGNING_ALG, **header_extras}
    signing_input = _signing_input(header, claims)
    der = key.to_cryptography().sign(signing_input, ec.ECDSA(hashes.SHA256(), deterministic_signing=True))
    r, s = decode_dss_signature(der)
    signature = r.to_bytes(FIELD_BYTES, "big") + s.to_bytes(FIELD_BYTES, "big")
    return CompactToken(header=header, payload=dict(claims), signature=signature)


def verify_token(token: CompactToken, key: PublicKey) -> dict:
    """Return the payload claims iff the signature verifies under ``key``."""
    if token.header.get("alg") != SIGNING_ALG:
        raise UnsupportedAlgorithmError(f"unsupported alg {token.header.get('alg')!r}")
    r = int.from_bytes(token.signature[:FIELD_BYTES], "big")
    s = int.from_bytes(token.signature[FIELD_BYTES:], "big")
    try:
        key.to_cryptography().verify(
            encode_dss_signature(r, s),
            token.signing_input(),
            ec.ECDSA(hashes.SHA256()),
        )
    except (InvalidSignature, ValueError) as exc:
        raise BadSignatureError("signature verification failed") from exc
    return dict(token.payload)


@dataclass(frozen=True)
class EncryptedEnvelope:
    """AEAD envelope addressed to one recipient key."""

    ephemeral_public_key: PublicKey
    iv: bytes
    ciphertext: bytes
    auth_tag: bytes
    recipient_key_id: str

    def __post_init__(self):
        if len(self.iv) != IV_BYTES:
            raise MalformedEnvelopeError("iv must be 12 bytes")
        if len(self.auth_tag) != TAG_BYTES:
            raise MalformedEnvelopeError("tag must be 16 bytes")

    def to_wire(self) -> dict:
        return {
            "epk": b64url_encode(self.ephemeral_public_key.point_bytes),
            "iv": b64url_encode(self.iv),
            "ciphertext": b64url_encode(self.ciphertext),
            "tag": b64url_encode(self.auth_tag),
            "kid": b64url_encode(self.recipient_key_id.encode("utf-8")),
        }

    @classmethod
    def from_wire(cls, wire: dict) -> "EncryptedEnvelope":
        try:
            epk = PublicKey(curve=CURVE_ID, point_bytes=b64url_decode(wire["epk"]))
            return cls(
                ephemeral_public_key=epk,
                iv=b64url_decode(wire["iv"]),
                ciphertext=b64url_decode(wire["ciphertext"]),
                auth_tag=b64url_decode(wire["tag"]),
                recipient_key_id=b64url_decode(wire["kid"]).decode("utf-8"),
            )
        except (KeyError, TypeError, ValueError, UnicodeDecodeError, InvalidKeyError) as exc:
            raise MalformedEnvelopeError(f"bad envelope: {exc}") from exc


def _derive_envelope_key(shared_secret: bytes) -> bytes:
    # Concatenation KDF, JOSE style: AlgorithmID || PartyUInfo || PartyVInfo
    # || SuppPubInfo, with empty party info and the key length in bits.
    otherinfo = (
        struct.pack(">I", len(ENVELOPE_ENC_ALG))
        + ENVELOPE_ENC_ALG
        + struct.pack(">I", 0)
        + struct.pack(">I", 0)
        + struct.pack(">I", 256)
    )
    return ConcatKDFHash(hashes.SHA256(), 32, otherinfo).derive(shared_secret)


def _envelope_aad(ephemeral_public_key: PublicKey, recipient_key_id: str) -> bytes:
    # The ephemeral key and key id ride outside the ciphertext; binding them
    # as associated data makes any single-bit change to the envelope fail
    # authentication instead of being silently accepted.
    return canonical_json(
        {"epk": b64url_encode(ephemeral_public_key.point_bytes), "kid": recipient_key_id}
    )


def ecdh_encrypt(
    plaintext: bytes,
    recipient: PublicKey,
    recipient_key_id: str,
    source: RandomSource | None = None,
) -> EncryptedEnvelope:
    """Encrypt to a recipient's static key under a fresh ephemeral key."""
    if not isinstance(recipient, PublicKey):
        raise InvalidRecipientKeyError("recipient must be a PublicKey")
    source = source or default_source()
    ephemeral = generate_key_pair(source)
    shared = ephemeral.to_cryptography().exchange(ec.ECDH(), recipient.to_cryptography())
    key = _derive_envelope_key(shared)
    iv = source.token_bytes(IV_BYTES)
    sealed = AESGCM(key).encrypt(iv, plaintext, _envelope_aad(ephemeral.public_key, recipient_key_id))
    return EncryptedEnvelope(
        ephemeral_public_key=ephemeral.public_key,
        iv=iv,
        ciphertext=sealed[:-TAG_BYTES],
        auth_tag=sealed[-TAG_BYTES:],
        recipient_key_id=recipient_key_id,
    )


def ecdh_decrypt(envelope: EncryptedEnvelope, key: KeyPair) -> bytes:
    """Recover the plaintext iff the envelope targets ``key`` and is intact."""
    shared = key.to_cryptography().exchange(ec.ECDH(), envelope.ephemeral_public_key.to_cryptography())
    aead_key = _derive_envelope_key(shared)
    aad = _envelope_aad(envelope.ephemeral_public_key, envelope.recipient_key_id)
    try:
        return AESGCM(aead_key).decrypt(envelope.iv, envelope.ciphertext + envelope.auth_tag, aad)
    except InvalidTag as exc:
        raise AuthFailureError("envelope failed authentication") from exc


@dataclass
class Nonce:
    """Single-use random challenge. ``consumed`` moves false to true exactly
    once; the owning service decides when."""

    value: str
    issued_at: int
    consumed: bool = False

    def consume(self) -> None:
        if self.consumed:
            raise RuntimeError("nonce already consumed")
        self.consumed = True


def generate_nonce(source: RandomSource | None = None, now: int | None = None) -> Nonce:
    value = b64url_encode((source or default_source()).token_bytes(NONCE_BYTES))
    return Nonce(value=value, issued_at=int(time.time()) if now is None else now)
