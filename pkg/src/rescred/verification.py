"""Verifier service: presentation requests and the full trust-chain check.

A request carries a fresh single-use nonce and the verifier's encryption
public key; the holder answers with an encrypted presentation. Verification
runs a fixed pipeline of eleven checks, in this order, short-circuiting on
the first failure:

    envelope-decryption, presentation-structure, nonce-binding,
    audience-binding, holder-signature, holder-binding,
    credential-structure, issuer-resolution, issuer-signature,
    issuer-trusted, validity-window

Checks that were never reached appear in the report with ``passed=False``
and detail ``"not-run"`` so reports always list all eleven entries in
order. The request nonce is consumed exactly once per request no matter how
verification ends, which is what makes replaying a captured envelope
pointless. Issuer trust is consulted against the registry at verification
time, so revoking an issuer invalidates future verifications of everything
it ever issued.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field

from .credential import (
    CredentialError,
    Resume,
    decode_credential,
)
from .crypto import (
    CompactToken,
    CryptoError,
    EncryptedEnvelope,
    KeyPair,
    Nonce,
    PublicKey,
    ecdh_decrypt,
    generate_nonce,
    verify_token,
)
from .did import Did, DidError, METHOD_EBSI, resolve_did_key
from .encoding import b64url_decode, b64url_encode, canonical_json
from .errors import RescredError
from .registry import RegistryError
from .rng import RandomSource, default_source, new_id

CHECK_NAMES = (
    "envelope-decryption",
    "presentation-structure",
    "nonce-binding",
    "audience-binding",
    "holder-signature",
    "holder-binding",
    "credential-structure",
    "issuer-resolution",
    "issuer-signature",
    "issuer-trusted",
    "validity-window",
)

REQUEST_TTL_SECONDS = 600
CLOCK_SKEW_SECONDS = 60

OUTCOME_ACCEPTED = "accepted"
OUTCOME_REJECTED = "rejected"


class VerificationError(RescredError):
    pass


class VerifierUnconfiguredError(VerificationError):
    code = "verifier-unconfigured"


class UnknownRequestError(VerificationError):
    code = "unknown-request"


class RequestExpiredError(VerificationError):
    code = "request-expired"


class ReportNotFoundError(VerificationError):
    code = "not-found"


@dataclass
class PresentationRequest:
    request_id: str
    verifier_did: Did
    credential_type: str
    nonce: Nonce
    response_encryption_key: PublicKey
    expires_at: int

    def to_frame(self) -> dict:
        return {
            "requestId": self.request_id,
            "verifierDid": str(self.verifier_did),
            "credentialType": self.credential_type,
            "nonce": self.nonce.value,
            "responseKey": b64url_encode(self.response_encryption_key.point_bytes),
            "expiresAt": self.expires_at,
        }

    @classmethod
    def from_frame(cls, frame: dict, issued_at: int | None = None) -> "PresentationRequest":
        return cls(
            request_id=frame["requestId"],
            verifier_did=Did.parse(frame["verifierDid"]),
            credential_type=frame["credentialType"],
            nonce=Nonce(value=frame["nonce"], issued_at=issued_at or 0),
            response_encryption_key=PublicKey(curve="P-256", point_bytes=b64url_decode(frame["responseKey"])),
            expires_at=int(frame["expiresAt"]),
        )


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def to_wire(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


@dataclass
class VerificationReport:
    request_id: str
    outcome: str
    checks: list = field(default_factory=list)
    verified_at: int = 0
    presented_resume: Resume | None = None

    @property
    def accepted(self) -> bool:
        return self.outcome == OUTCOME_ACCEPTED

    @property
    def failed_check(self) -> str | None:
        for check in self.checks:
            if not check.passed:
                return check.name
        return None

    def to_wire(self) -> dict:
        return {
            "requestId": self.request_id,
            "outcome": self.outcome,
            "checks": [c.to_wire() for c in self.checks],
            "verifiedAt": self.verified_at,
            "failedCheck": self.failed_check,
            "presentedResume": self.presented_resume.to_wire() if self.presented_resume else None,
        }

    def to_bytes(self) -> bytes:
        return canonical_json(self.to_wire())

    @classmethod
    def from_wire(cls, wire: dict) -> "VerificationReport":
        return cls(
            request_id=wire["requestId"],
            outcome=wire["outcome"],
            checks=[CheckResult(name=c["name"], passed=c["passed"], detail=c.get("detail", "")) for c in wire["checks"]],
            verified_at=int(wire["verifiedAt"]),
            presented_resume=Resume.from_wire(wire["presentedResume"]) if wire.get("presentedResume") else None,
        )


class _CheckFailed(Exception):
    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class VerifierService:
    """Owns presentation requests, their nonces, and verification reports."""

    def __init__(
        self,
        verifier_did: Did | None,
        encryption_key: KeyPair | None,
        registry,
        clock=None,
        source: RandomSource | None = None,
        request_ttl: int = REQUEST_TTL_SECONDS,
        clock_skew: int = CLOCK_SKEW_SECONDS,
    ):
        if verifier_did is not None and verifier_did.method != METHOD_EBSI:
            raise VerifierUnconfiguredError("verifier identity must be a did:ebsi")
        self.verifier_did = verifier_did
        self.encryption_key = encryption_key
        self.registry = registry
        self._clock = clock or (lambda: int(time.time()))
        self._source = source or default_source()
        self._request_ttl = request_ttl
        self._skew = clock_skew
        self._lock = threading.Lock()
        self._requests: dict[str, PresentationRequest] = {}
        self._consumed: set = set()
        self._reports: dict[str, VerificationReport] = {}

    def _require_configured(self) -> None:
        if self.verifier_did is None or self.encryption_key is None:
            raise VerifierUnconfiguredError("verifier DID and encryption key are required")

    def create_presentation_request(self, credential_type: str) -> PresentationRequest:
        self._require_configured()
        now = self._clock()
        request = PresentationRequest(
            request_id=new_id(self._source),
            verifier_did=self.verifier_did,
            credential_type=credential_type,
            nonce=generate_nonce(self._source, now=now),
            response_encryption_key=self.encryption_key.public_key,
            expires_at=now + self._request_ttl,
        )
        with self._lock:
            self._requests[request.request_id] = request
        return request

    def get_request(self, request_id: str) -> PresentationRequest:
        with self._lock:
            request = self._requests.get(request_id)
        if request is None:
            raise UnknownRequestError(request_id)
        return request

    def verify_presentation(self, request_id: str, envelope: EncryptedEnvelope) -> VerificationReport:
        """Run the eleven checks against one request. The request is spent
        by this call whatever the outcome."""
        self._require_configured()
        now = self._clock()
        with self._lock:
            request = self._requests.get(request_id)
            if request is None or request_id in self._consumed:
                raise UnknownRequestError(request_id)
            if now > request.expires_at + self._skew:
                raise RequestExpiredError(request_id)
            # consume exactly once, before any checking
            self._consumed.add(request_id)
            request.nonce.consume()

        report = self._run_checks(request, envelope, now)
        with self._lock:
            self._reports[request_id] = report
        return report

    def get_report(self, request_id: str) -> VerificationReport:
        with self._lock:
            report = self._reports.get(request_id)
        if report is None:
            raise ReportNotFoundError(request_id)
        return report

    # -- the pipeline ---------------------------------------------------------

    def _run_checks(self, request: PresentationRequest, envelope: EncryptedEnvelope, now: int) -> VerificationReport:
        checks: list[CheckResult] = []
        resume: Resume | None = None
        state: dict = {}

        steps = (
            self._check_envelope_decryption,
            self._check_presentation_structure,
            self._check_nonce_binding,
            self._check_audience_binding,
            self._check_holder_signature,
            self._check_holder_binding,
            self._check_credential_structure,
            self._check_issuer_resolution,
            self._check_issuer_signature,
            self._check_issuer_trusted,
            self._check_validity_window,
        )
        failed = False
        for name, step in zip(CHECK_NAMES, steps):
            if failed:
                checks.append(CheckResult(name=name, passed=False, detail="not-run"))
                continue
            try:
                detail = step(request, envelope, state, now) or "ok"
                checks.append(CheckResult(name=name, passed=True, detail=detail))
            except _CheckFailed as failure:
                checks.append(CheckResult(name=name, passed=False, detail=failure.detail))
                failed = True

        if not failed:
            resume = state["credential"].claims
        return VerificationReport(
            request_id=request.request_id,
            outcome=OUTCOME_REJECTED if failed else OUTCOME_ACCEPTED,
            checks=checks,
            verified_at=now,
            presented_resume=resume,
        )

    def _check_envelope_decryption(self, request, envelope, state, now):
        try:
            state["vp_bytes"] = ecdh_decrypt(envelope, self.encryption_key)
        except CryptoError as exc:
            raise _CheckFailed(f"{exc.code}: {exc}") from exc
        return "envelope opened"

    def _check_presentation_structure(self, request, envelope, state, now):
        try:
            token = CompactToken.decode(state["vp_bytes"].decode("utf-8"))
            payload = token.payload
            holder = Did.parse(str(payload["iss"]))
            audience = Did.parse(str(payload["aud"]))
            nonce_value = payload["nonce"]
            inner = CompactToken.decode(payload["vp"]["credential"])
            if not isinstance(nonce_value, str):
                raise _CheckFailed("nonce claim has the wrong type")
        except _CheckFailed:
            raise
        except (KeyError, TypeError, UnicodeDecodeError) as exc:
            raise _CheckFailed(f"presentation claims incomplete: {exc!r}") from exc
        except (CryptoError, DidError, CredentialError) as exc:
            raise _CheckFailed(f"{exc.code}: {exc}") from exc
        state.update(vp_token=token, holder=holder, audience=audience, nonce_value=nonce_value, inner_token=inner)
        return "presentation decoded"

    def _check_nonce_binding(self, request, envelope, state, now):
        if state["nonce_value"] != request.nonce.value:
            raise _CheckFailed("presentation nonce does not match the request nonce")
        return "nonce matches request"

    def _check_audience_binding(self, request, envelope, state, now):
        if state["audience"] != self.verifier_did:
            raise _CheckFailed(f"presentation audience is {state['audience']}, not this verifier")
        return "audience is this verifier"

    def _check_holder_signature(self, request, envelope, state, now):
        try:
            holder_key = resolve_did_key(state["holder"])
            verify_token(state["vp_token"], holder_key)
        except (DidError, CryptoError) as exc:
            raise _CheckFailed(f"{exc.code}: {exc}") from exc
        return "outer signature valid for the holder did:key"

    def _check_holder_binding(self, request, envelope, state, now):
        subject = state["inner_token"].payload.get("sub")
        if subject != str(state["holder"]):
            raise _CheckFailed(f"presenter {state['holder']} is not the credential subject {subject}")
        return "presenter is the credential subject"

    def _check_credential_structure(self, request, envelope, state, now):
        try:
            credential = decode_credential(state["inner_token"])
        except (CredentialError, DidError) as exc:
            raise _CheckFailed(f"{exc.code}: {exc}") from exc
        if credential.type != request.credential_type:
            raise _CheckFailed(f"credential type {credential.type!r} was not requested")
        state["credential"] = credential
        return "credential decoded"

    def _check_issuer_resolution(self, request, envelope, state, now):
        try:
            document = self.registry.resolve_did_document(state["credential"].issuer)
        except (RegistryError, RescredError) as exc:
            raise _CheckFailed(f"{exc.code}: {exc}") from exc
        if document.deactivated:
            raise _CheckFailed("issuer document is deactivated")
        state["issuer_document"] = document
        return "issuer document resolved"

    def _check_issuer_signature(self, request, envelope, state, now):
        kid = state["inner_token"].header.get("kid")
        key = state["issuer_document"].key_by_id(kid) if isinstance(kid, str) else None
        if key is None:
            raise _CheckFailed(f"issuer document has no key {kid!r}")
        try:
            verify_token(state["inner_token"], key)
        except CryptoError as exc:
            raise _CheckFailed(f"{exc.code}: {exc}") from exc
        return "credential signature valid under the registered issuer key"

    def _check_issuer_trusted(self, request, envelope, state, now):
        issuer = state["credential"].issuer
        if not self.registry.tir_is_trusted(issuer, state["credential"].type, at=now):
            raise _CheckFailed(f"issuer {issuer} is not accredited for {state['credential'].type} now")
        return "issuer accredited in the trusted issuer registry"

    def _check_validity_window(self, request, envelope, state, now):
        credential = state["credential"]
        if credential.issued_at > now + self._skew:
            raise _CheckFailed("credential issued in the future")
        if credential.expires_at < now - self._skew:
            raise _CheckFailed("credential expired")
        return "credential within its validity window"


def build_response_payload(request_id: str, envelope: EncryptedEnvelope) -> bytes:
    """Wire payload of a response frame: the request id plus the envelope."""
    return canonical_json({"requestId": request_id, "envelope": envelope.to_wire()})


def parse_response_payload(payload: bytes) -> "tuple[str, EncryptedEnvelope]":
    data = json.loads(payload.decode("utf-8"))
    return data["requestId"], EncryptedEnvelope.from_wire(data["envelope"])
