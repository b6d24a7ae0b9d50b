"""Issuer service: turns a submitted resume into a signed credential.

The exchange is a pre-authorized flow in three steps. An offer names the
resume the issuer is willing to sign and expires quickly. Exchanging the
offer yields an access reference and a fresh challenge nonce. The holder
then proves possession of their did:key by signing a token over that nonce
with the issuer as audience; only then is the credential minted, bound to
the DID that actually signed the proof. Each challenge nonce is accepted at
most once for the life of the service, so a captured proof cannot be
replayed.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass

from .credential import Resume, VerifiableCredential, build_credential
from .crypto import (
    BadSignatureError,
    CompactToken,
    KeyPair,
    Nonce,
    UnsupportedAlgorithmError,
    generate_nonce,
)
from .did import Did, METHOD_EBSI, MalformedDidError, resolve_did_key
from .did import DidError as _DidError
from .errors import RescredError
from .rng import RandomSource, default_source, new_id

OFFER_TTL_SECONDS = 600
C_NONCE_TTL_SECONDS = 300

STATE_OFFERED = "offered"
STATE_CHALLENGED = "challenged"
STATE_ISSUED = "issued"
STATE_EXPIRED = "expired"


class IssuanceError(RescredError):
    pass


class IssuerUnconfiguredError(IssuanceError):
    code = "issuer-unconfigured"


class UnknownOfferError(IssuanceError):
    code = "unknown-offer"


class OfferExpiredError(IssuanceError):
    code = "offer-expired"


class OfferAlreadyUsedError(IssuanceError):
    code = "offer-already-used"


class UnknownSessionError(IssuanceError):
    code = "unknown-session"


class BadProofSignatureError(IssuanceError):
    code = "bad-proof-signature"


class NonceMismatchError(IssuanceError):
    code = "nonce-mismatch"


class NonceReplayedError(IssuanceError):
    code = "nonce-replayed"


class AudienceMismatchError(IssuanceError):
    code = "audience-mismatch"


@dataclass
class CredentialOffer:
    offer_id: str
    issuer: Did
    credential_type: str
    resume_ref: str
    expires_at: int

    def to_wire(self) -> dict:
        return {
            "offerId": self.offer_id,
            "issuer": str(self.issuer),
            "credentialType": self.credential_type,
            "resumeRef": self.resume_ref,
            "expiresAt": self.expires_at,
        }


@dataclass
class IssuanceSession:
    offer_id: str
    access_ref: str | None = None
    c_nonce: Nonce | None = None
    state: str = STATE_OFFERED
    holder_did: Did | None = None


class IssuerService:
    """Holds the issuer identity and drives the three-step exchange."""

    def __init__(
        self,
        issuer_did: Did | None,
        signing_key: KeyPair | None,
        key_id: str = "key-1",
        credential_validity_seconds: int = 365 * 86400,
        clock=None,
        source: RandomSource | None = None,
        offer_ttl: int = OFFER_TTL_SECONDS,
        c_nonce_ttl: int = C_NONCE_TTL_SECONDS,
    ):
        if issuer_did is not None and issuer_did.method != METHOD_EBSI:
            raise IssuerUnconfiguredError("issuer identity must be a did:ebsi")
        self.issuer_did = issuer_did
        self.signing_key = signing_key
        self.key_id = key_id
        self.credential_validity_seconds = credential_validity_seconds
        self._clock = clock or (lambda: int(time.time()))
        self._source = source or default_source()
        self._offer_ttl = offer_ttl
        self._c_nonce_ttl = c_nonce_ttl
        self._lock = threading.Lock()
        self._offers: dict[str, CredentialOffer] = {}
        self._resumes: dict[str, Resume] = {}
        self._sessions: dict[str, IssuanceSession] = {}
        self._by_access_ref: dict[str, IssuanceSession] = {}
        self._spent_nonces: set = set()

    def _require_configured(self) -> None:
        if self.issuer_did is None or self.signing_key is None:
            raise IssuerUnconfiguredError("issuer DID and signing key are required")

    def create_offer(self, resume: Resume, credential_type: str) -> CredentialOffer:
        self._require_configured()
        resume.require_issuable()
        now = self._clock()
        offer = CredentialOffer(
            offer_id=new_id(self._source),
            issuer=self.issuer_did,
            credential_type=credential_type,
            resume_ref=new_id(self._source),
            expires_at=now + self._offer_ttl,
        )
        with self._lock:
            self._offers[offer.offer_id] = offer
            self._resumes[offer.resume_ref] = resume
            self._sessions[offer.offer_id] = IssuanceSession(offer_id=offer.offer_id)
        return offer

    def get_offer(self, offer_id: str) -> CredentialOffer:
        with self._lock:
            offer = self._offers.get(offer_id)
        if offer is None:
            raise UnknownOfferError(offer_id)
        return offer

    def exchange_token(self, offer_id: str) -> "tuple[str, str]":
        """Trade an unused offer for an access reference plus challenge."""
        self._require_configured()
        now = self._clock()
        with self._lock:
            offer = self._offers.get(offer_id)
            session = self._sessions.get(offer_id)
            if offer is None or session is None:
                raise UnknownOfferError(offer_id)
            if now > offer.expires_at:
                session.state = STATE_EXPIRED
                raise OfferExpiredError(offer_id)
            if session.state != STATE_OFFERED:
                raise OfferAlreadyUsedError(offer_id)
            session.state = STATE_CHALLENGED
            session.access_ref = new_id(self._source)
            session.c_nonce = generate_nonce(self._source, now=now)
            self._by_access_ref[session.access_ref] = session
            return session.access_ref, session.c_nonce.value

    def issue_credential(self, access_ref: str, proof: CompactToken) -> VerifiableCredential:
        """Check the proof of possession and mint the credential for the DID
        that signed it. The challenge nonce burns on success."""
        self._require_configured()
        now = self._clock()
        with self._lock:
            session = self._by_access_ref.get(access_ref)
            if session is None:
                raise UnknownSessionError(access_ref)

        holder_did = self._verify_proof_signature(proof)
        nonce_value = proof.payload.get("nonce")

        with self._lock:
            if nonce_value != session.c_nonce.value:
                if nonce_value in self._spent_nonces:
                    raise NonceReplayedError("challenge nonce already spent")
                raise NonceMismatchError("proof nonce does not match the session challenge")
            if session.c_nonce.consumed:
                raise NonceReplayedError("challenge nonce already spent")
            if now > session.c_nonce.issued_at + self._c_nonce_ttl:
                raise NonceMismatchError("challenge nonce expired")
            if proof.payload.get("aud") != str(self.issuer_did):
                raise AudienceMismatchError("proof audience is not this issuer")
            # all checks passed: burn the nonce atomically
            session.c_nonce.consume()
            self._spent_nonces.add(nonce_value)
            session.state = STATE_ISSUED
            session.holder_did = holder_did
            resume = self._resumes[self._offers[session.offer_id].resume_ref]

        bound = Resume(holder_did=holder_did, full_name=resume.full_name, positions=list(resume.positions))
        return build_credential(
            bound,
            self.issuer_did,
            self.signing_key,
            self.credential_validity_seconds,
            key_id=self.key_id,
            now=now,
            source=self._source,
        )

    def _verify_proof_signature(self, proof: CompactToken) -> Did:
        kid = proof.header.get("kid")
        if not isinstance(kid, str):
            raise BadProofSignatureError("proof header carries no key id")
        try:
            holder_did = Did.parse(kid)
            holder_key = resolve_did_key(holder_did)
        except (MalformedDidError, _DidError) as exc:
            raise BadProofSignatureError(f"proof key id is not a resolvable did:key: {exc}") from exc
        try:
            from .crypto import verify_token

            verify_token(proof, holder_key)
        except (BadSignatureError, UnsupportedAlgorithmError) as exc:
            raise BadProofSignatureError(str(exc)) from exc
        return holder_did


def build_proof(holder_key: KeyPair, c_nonce: str, audience: Did, now: int | None = None) -> CompactToken:
    """Holder-side proof of possession over a challenge nonce."""
    from .crypto import sign_token
    from .did import did_key_from_public_key

    holder_did = did_key_from_public_key(holder_key.public_key)
    claims = {
        "nonce": c_nonce,
        "aud": str(audience),
        "iat": int(time.time()) if now is None else now,
    }
    return sign_token(claims, {"kid": str(holder_did)}, holder_key)
