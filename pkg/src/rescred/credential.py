"""Resume data model and the credential/presentation claim profiles.

A credential is the holder's entire resume signed by one issuer and carried
as a compact token whose payload uses registered claims (``iss``, ``sub``,
``iat``, ``exp``, ``jti``) plus a ``vc`` sub-map with the credential type
and the resume itself. A presentation wraps exactly one credential token
verbatim in a holder-signed outer token bound to a verifier nonce and
audience.

Decoding here is structural only. Signature checking belongs to the issuing
and verifying services; decoded objects say so via ``signature_verified``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from datetime import date

from .crypto import CompactToken, KeyPair, sign_token
from .did import Did, METHOD_EBSI, METHOD_KEY, did_key_from_public_key
from .errors import RescredError
from .rng import RandomSource, new_id

RESUME_CREDENTIAL_TYPE = "ResumeCredential"
POSITION_KINDS = ("education", "work", "certificate")


class CredentialError(RescredError):
    pass


class InvalidResumeError(CredentialError):
    code = "invalid-resume"


class InvalidPositionError(CredentialError):
    code = "invalid-position"


class WrongIssuerMethodError(CredentialError):
    code = "wrong-issuer-method"


class MalformedClaimsError(CredentialError):
    code = "malformed-claims"


class TypeMismatchError(CredentialError):
    code = "type-mismatch"


class SubjectMismatchError(CredentialError):
    code = "subject-mismatch"


@dataclass
class Position:
    kind: str
    title: str
    organization: str
    start: str
    end: str | None = None
    description: str = ""
    organization_did: Did | None = None

    def __post_init__(self):
        if self.kind not in POSITION_KINDS:
            raise InvalidPositionError(f"unknown position kind {self.kind!r}")
        try:
            start = date.fromisoformat(self.start)
            end = date.fromisoformat(self.end) if self.end else None
        except ValueError as exc:
            raise InvalidPositionError(f"bad date: {exc}") from exc
        if end is not None and end < start:
            raise InvalidPositionError("end date precedes start date")

    def to_wire(self) -> dict:
        wire = {
            "kind": self.kind,
            "title": self.title,
            "organization": self.organization,
            "start": self.start,
            "end": self.end,
            "description": self.description,
        }
        if self.organization_did is not None:
            wire["organizationDid"] = str(self.organization_did)
        return wire

    @classmethod
    def from_wire(cls, wire: dict) -> "Position":
        try:
            return cls(
                kind=wire["kind"],
                title=wire["title"],
                organization=wire["organization"],
                start=wire["start"],
                end=wire.get("end"),
                description=wire.get("description", ""),
                organization_did=Did.parse(wire["organizationDid"]) if wire.get("organizationDid") else None,
            )
        except KeyError as exc:
            raise MalformedClaimsError(f"position missing field {exc}") from exc


@dataclass
class Resume:
    holder_did: Did
    full_name: str
    positions: list = field(default_factory=list)

    def __post_init__(self):
        if self.holder_did.method != METHOD_KEY:
            raise InvalidResumeError("resume holder must use did:key")
        if not self.full_name:
            raise InvalidResumeError("full name required")

    def require_issuable(self) -> None:
        if not self.positions:
            raise InvalidResumeError("resume has no positions")

    def to_wire(self) -> dict:
        return {
            "holderDid": str(self.holder_did),
            "fullName": self.full_name,
            "positions": [p.to_wire() for p in self.positions],
        }

    @classmethod
    def from_wire(cls, wire: dict) -> "Resume":
        try:
            return cls(
                holder_did=Did.parse(wire["holderDid"]),
                full_name=wire["fullName"],
                positions=[Position.from_wire(p) for p in wire["positions"]],
            )
        except KeyError as exc:
            raise MalformedClaimsError(f"resume missing field {exc}") from exc
        except (TypeError, RescredError) as exc:
            if isinstance(exc, MalformedClaimsError):
                raise
            raise MalformedClaimsError(f"bad resume: {exc}") from exc


@dataclass
class VerifiableCredential:
    id: str
    type: str
    issuer: Did
    subject: Did
    claims: Resume
    issued_at: int
    expires_at: int
    token: CompactToken
    signature_verified: bool = False

    def encode(self) -> str:
        return self.token.encode()


def build_credential(
    resume: Resume,
    issuer: Did,
    issuer_key: KeyPair,
    validity_seconds: int,
    key_id: str = "key-1",
    now: int | None = None,
    source: RandomSource | None = None,
) -> VerifiableCredential:
    """Sign a resume into a credential bound to its holder."""
    if issuer.method != METHOD_EBSI:
        raise WrongIssuerMethodError("issuers must use did:ebsi")
    resume.require_issuable()
    issued_at = int(time.time()) if now is None else now
    credential_id = new_id(source)
    claims = {
        "iss": str(issuer),
        "sub": str(resume.holder_did),
        "iat": issued_at,
        "exp": issued_at + validity_seconds,
        "jti": credential_id,
        "vc": {"type": RESUME_CREDENTIAL_TYPE, "resume": resume.to_wire()},
    }
    token = sign_token(claims, {"kid": key_id}, issuer_key)
    return VerifiableCredential(
        id=credential_id,
        type=RESUME_CREDENTIAL_TYPE,
        issuer=issuer,
        subject=resume.holder_did,
        claims=resume,
        issued_at=issued_at,
        expires_at=issued_at + validity_seconds,
        token=token,
        signature_verified=False,
    )


def _require_claim(payload: dict, name: str, kinds) -> object:
    if name not in payload:
        raise MalformedClaimsError(f"missing claim {name!r}")
    value = payload[name]
    if not isinstance(value, kinds) or isinstance(value, bool):
        raise TypeMismatchError(f"claim {name!r} has the wrong type")
    return value


def decode_credential(token: CompactToken) -> VerifiableCredential:
    """Populate the structured fields from a token without checking its
    signature; ``signature_verified`` stays False."""
    payload = token.payload
    issuer = Did.parse(str(_require_claim(payload, "iss", str)))
    subject = Did.parse(str(_require_claim(payload, "sub", str)))
    issued_at = _require_claim(payload, "iat", int)
    expires_at = _require_claim(payload, "exp", int)
    credential_id = _require_claim(payload, "jti", str)
    vc = _require_claim(payload, "vc", dict)
    if "type" not in vc or "resume" not in vc:
        raise MalformedClaimsError("vc map must carry type and resume")
    if vc["type"] != RESUME_CREDENTIAL_TYPE:
        raise TypeMismatchError(f"unsupported credential type {vc['type']!r}")
    resume = Resume.from_wire(vc["resume"])
    if resume.holder_did != subject:
        raise MalformedClaimsError("resume holder differs from credential subject")
    return VerifiableCredential(
        id=credential_id,
        type=vc["type"],
        issuer=issuer,
        subject=subject,
        claims=resume,
        issued_at=issued_at,
        expires_at=expires_at,
        token=token,
        signature_verified=False,
    )


@dataclass
class VerifiablePresentation:
    holder: Did
    credential: VerifiableCredential
    audience: Did
    nonce_value: str
    token: CompactToken

    def encode(self) -> str:
        return self.token.encode()


def build_presentation(
    vc: VerifiableCredential,
    holder_key: KeyPair,
    audience: Did,
    nonce_value: str,
    now: int | None = None,
) -> VerifiablePresentation:
    """Wrap a credential in a holder-signed envelope for one verifier."""
    holder = did_key_from_public_key(holder_key.public_key)
    if holder != vc.subject:
        raise SubjectMismatchError("presenter key does not control the credential subject")
    claims = {
        "iss": str(holder),
        "aud": str(audience),
        "nonce": nonce_value,
        "iat": int(time.time()) if now is None else now,
        "vp": {"credential": vc.token.encode()},
    }
    token = sign_token(claims, {"kid": str(holder)}, holder_key)
    return VerifiablePresentation(
        holder=holder, credential=vc, audience=audience, nonce_value=nonce_value, token=token
    )


def decode_presentation(token: CompactToken) -> VerifiablePresentation:
    """Structural decode of a presentation; no signature checks."""
    payload = token.payload
    holder = Did.parse(str(_require_claim(payload, "iss", str)))
    audience = Did.parse(str(_require_claim(payload, "aud", str)))
    nonce_value = str(_require_claim(payload, "nonce", str))
    vp = _require_claim(payload, "vp", dict)
    if "credential" not in vp or not isinstance(vp["credential"], str):
        raise MalformedClaimsError("vp map must embed exactly one credential token")
    try:
        inner = CompactToken.decode(vp["credential"])
    except RescredError as exc:
        raise MalformedClaimsError(f"embedded credential token malformed: {exc}") from exc
    credential = decode_credential(inner)
    return VerifiablePresentation(
        holder=holder,
        credential=credential,
        audience=audience,
        nonce_value=nonce_value,
        token=token,
    )
