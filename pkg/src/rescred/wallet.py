"""Holder agent: key custody, resumes, credentials, presentation answers.

The wallet owns exactly one did:key identity. Its store is a single JSON
file; reloading the file yields the same identity, and two freshly
initialized wallets can never share one. Credentials are verified against
the issuer's registered key before they are stored, so the store never
holds a token the holder could not defend.

Storage is a plaintext file guarded by OS permissions. Production-grade
wallet hardening (encryption at rest, unlock flows) is explicitly not this
component's job; it is a test agent standing in for an external wallet
product.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass

from .credential import (
    Position,
    Resume,
    SubjectMismatchError,
    VerifiableCredential,
    build_presentation,
    decode_credential,
)
from .crypto import (
    BadSignatureError,
    CompactToken,
    CryptoError,
    EncryptedEnvelope,
    KeyPair,
    ecdh_encrypt,
    key_pair_from_scalar,
    generate_key_pair,
    verify_token,
)
from .did import Did, did_key_from_public_key
from .encoding import b64url_decode, b64url_encode
from .errors import RescredError
from .issuance import build_proof
from .rng import RandomSource, default_source, new_id
from .verification import PresentationRequest

STORE_VERSION = 1


class WalletError(RescredError):
    pass


class IoFailureError(WalletError):
    code = "io-failure"


class CorruptStoreError(WalletError):
    code = "corrupt-store"


class UnknownResumeError(WalletError):
    code = "unknown-resume"


class IssuanceFlowFailureError(WalletError):
    code = "issuance-flow-failure"

    def __init__(self, message: str = "", issuer_code: str = ""):
        super().__init__(message or issuer_code)
        self.issuer_code = issuer_code


class IssuerSignatureInvalidError(WalletError):
    code = "issuer-signature-invalid"


class IssuerUnresolvableError(WalletError):
    code = "issuer-unresolvable"


class NoMatchingCredentialError(WalletError):
    code = "no-matching-credential"


class RequestExpiredError(WalletError):
    code = "request-expired"


class RequestAlreadyAnsweredError(WalletError):
    code = "request-already-answered"


class UnknownRequestError(WalletError):
    code = "unknown-request"


@dataclass
class StoredRequest:
    frame: dict
    received_at: int
    status: str = "pending"  # pending | answered | declined

    def to_wire(self) -> dict:
        return {"frame": self.frame, "receivedAt": self.received_at, "status": self.status}


class Wallet:
    """One holder's agent bound to one store file."""

    def __init__(self, storage_path: str, registry_client=None, clock=None, source: RandomSource | None = None):
        self._path = storage_path
        self._lock = threading.RLock()
        self._clock = clock or (lambda: int(time.time()))
        self._source = source or default_source()
        self.registry = registry_client
        self._resumes: dict[str, Resume] = {}
        self._resume_order: list[str] = []
        self._credentials: list[VerifiableCredential] = []
        self._requests: dict[str, StoredRequest] = {}
        if os.path.exists(storage_path):
            self._load()
        else:
            self.holder_key: KeyPair = generate_key_pair(self._source)
            self.holder_did: Did = did_key_from_public_key(self.holder_key.public_key)
            self._persist()

    # -- persistence ----------------------------------------------------------

    def _load(self) -> None:
        try:
            with open(self._path, encoding="utf-8") as handle:
                raw = handle.read()
        except OSError as exc:
            raise IoFailureError(str(exc)) from exc
        try:
            data = json.loads(raw)
            self.holder_key = key_pair_from_scalar(b64url_decode(data["privateScalar"]))
            self.holder_did = did_key_from_public_key(self.holder_key.public_key)
            if data["holderDid"] != str(self.holder_did):
                raise ValueError("stored DID does not match the stored key")
            self._resume_order = list(data["resumeOrder"])
            self._resumes = {rid: Resume.from_wire(w) for rid, w in data["resumes"].items()}
            self._credentials = [decode_credential(CompactToken.decode(t)) for t in data["credentials"]]
            self._requests = {
                rid: StoredRequest(frame=w["frame"], received_at=w["receivedAt"], status=w["status"])
                for rid, w in data["requests"].items()
            }
        except (KeyError, TypeError, ValueError, RescredError) as exc:
            raise CorruptStoreError(f"unreadable wallet store: {exc}") from exc

    def _persist(self) -> None:
        data = {
            "version": STORE_VERSION,
            "holderDid": str(self.holder_did),
            "privateScalar": b64url_encode(self.holder_key.private_scalar),
            "resumeOrder": self._resume_order,
            "resumes": {rid: r.to_wire() for rid, r in self._resumes.items()},
            "credentials": [vc.encode() for vc in self._credentials],
            "requests": {rid: r.to_wire() for rid, r in self._requests.items()},
        }
        tmp = self._path + ".tmp"
        try:
            with open(tmp, "w", encoding="utf-8") as handle:
                json.dump(data, handle, indent=1, sort_keys=True)
            os.replace(tmp, self._path)
        except OSError as exc:
            raise IoFailureError(str(exc)) from exc

    # -- resumes ----------------------------------------------------------------

    def create_resume(self, full_name: str) -> str:
        with self._lock:
            resume_id = new_id(self._source)
            self._resumes[resume_id] = Resume(holder_did=self.holder_did, full_name=full_name, positions=[])
            self._resume_order.append(resume_id)
            self._persist()
            return resume_id

    def get_resume(self, resume_id: str) -> Resume:
        with self._lock:
            resume = self._resumes.get(resume_id)
        if resume is None:
            raise UnknownResumeError(resume_id)
        return resume

    def resumes(self) -> "list[tuple[str, Resume]]":
        with self._lock:
            return [(rid, self._resumes[rid]) for rid in self._resume_order]

    def add_position(self, resume_id: str, position: Position) -> Resume:
        with self._lock:
            resume = self._resumes.get(resume_id)
            if resume is None:
                raise UnknownResumeError(resume_id)
            resume.positions.append(position)
            self._persist()
            return resume

    # -- credentials -------------------------------------------------------------

    def credentials(self) -> list:
        with self._lock:
            return list(self._credentials)

    def acquire_credential(self, issuer_client, resume_id: str) -> VerifiableCredential:
        """Run the full offer/token/proof exchange, verify the returned
        credential against the registry, and store it."""
        resume = self.get_resume(resume_id)
        offer = issuer_client.create_offer(resume.to_wire())
        access_ref, c_nonce = issuer_client.exchange_token(offer["offerId"])
        proof = build_proof(self.holder_key, c_nonce, Did.parse(offer["issuer"]), now=self._clock())
        token_text = issuer_client.issue_credential(access_ref, proof.encode())

        vc = decode_credential(CompactToken.decode(token_text))
        if vc.subject != self.holder_did:
            raise SubjectMismatchError("issuer bound the credential to a different subject")
        self._verify_against_registry(vc)
        vc.signature_verified = True
        with self._lock:
            self._credentials.append(vc)
            self._persist()
        return vc

    def _verify_against_registry(self, vc: VerifiableCredential) -> None:
        if self.registry is None:
            raise IssuerUnresolvableError("wallet has no registry client")
        try:
            document = self.registry.resolve_did_document(vc.issuer)
        except RescredError as exc:
            raise IssuerUnresolvableError(f"{vc.issuer}: {exc}") from exc
        key = document.key_by_id(vc.token.header.get("kid"))
        if key is None:
            raise IssuerSignatureInvalidError(f"issuer document has no key {vc.token.header.get('kid')!r}")
        try:
            verify_token(vc.token, key)
        except (BadSignatureError, CryptoError) as exc:
            raise IssuerSignatureInvalidError(str(exc)) from exc

    # -- presentation requests ------------------------------------------------

    def receive_presentation_request(self, frame: dict) -> bool:
        """Store an incoming request frame; duplicates are ignored."""
        request_id = frame.get("requestId")
        if not request_id:
            return False
        with self._lock:
            if request_id in self._requests:
                return False
            self._requests[request_id] = StoredRequest(frame=frame, received_at=self._clock())
            self._persist()
            return True

    def pending_requests(self) -> "list[StoredRequest]":
        with self._lock:
            return [r for r in self._requests.values() if r.status == "pending"]

    def all_requests(self) -> "list[StoredRequest]":
        with self._lock:
            return list(self._requests.values())

    def get_request(self, request_id: str) -> StoredRequest:
        with self._lock:
            stored = self._requests.get(request_id)
        if stored is None:
            raise UnknownRequestError(request_id)
        return stored

    def handle_presentation_request(self, request: PresentationRequest) -> EncryptedEnvelope:
        """Answer a request: build the presentation for the matching
        credential, bind it to the request nonce, encrypt it to the
        verifier's key, and mark the request answered."""
        now = self._clock()
        with self._lock:
            stored = self._requests.get(request.request_id)
            if stored is not None and stored.status == "answered":
                raise RequestAlreadyAnsweredError(request.request_id)
            if now > request.expires_at:
                raise RequestExpiredError(request.request_id)
            vc = self._matching_credential(request.credential_type, now)
            vp = build_presentation(vc, self.holder_key, request.verifier_did, request.nonce.value, now=now)
            envelope = ecdh_encrypt(
                vp.encode().encode("ascii"),
                request.response_encryption_key,
                recipient_key_id=request.request_id,
                source=self._source,
            )
            if stored is None:
                stored = StoredRequest(frame=request.to_frame(), received_at=now)
                self._requests[request.request_id] = stored
            stored.status = "answered"
            self._persist()
            return envelope

    def answer_request(self, request_id: str) -> EncryptedEnvelope:
        stored = self.get_request(request_id)
        if stored.status == "answered":
            raise RequestAlreadyAnsweredError(request_id)
        return self.handle_presentation_request(PresentationRequest.from_frame(stored.frame))

    def decline_request(self, request_id: str) -> None:
        with self._lock:
            stored = self._requests.get(request_id)
            if stored is None:
                raise UnknownRequestError(request_id)
            if stored.status == "answered":
                raise RequestAlreadyAnsweredError(request_id)
            stored.status = "declined"
            self._persist()

    def _matching_credential(self, credential_type: str, now: int) -> VerifiableCredential:
        candidates = [
            vc for vc in self._credentials if vc.type == credential_type and vc.expires_at >= now
        ]
        if not candidates:
            raise NoMatchingCredentialError(f"no stored {credential_type} is currently valid")
        return max(candidates, key=lambda vc: vc.issued_at)
