"""HTTP service surfaces and the glue between parties.

Each core module stays transport-free; this module wraps them in FastAPI
apps with one JSON error shape (``{"code", "message"}``, codes identical to
the domain error codes), plus matching httpx clients. The agents bind a
core service to the messaging fabric: the verifier agent receives response
frames from the channel, routes them through the broker for durable
processing, and verifies; the wallet agent receives request frames, stores
them, and answers over the channel on approval.

Consoles: both agents expose the frames they would push to a human console
as a server-sent-events stream (``GET /console/events``). Each event is the
base64url of the exact channel frame bytes, so console clients run the same
frame decoder as every other party.
"""

from __future__ import annotations

import json
import queue
import socket
import threading
import time

import httpx
import uvicorn
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, StreamingResponse

from . import credential as credential_mod
from . import issuance as issuance_mod
from . import registry as registry_mod
from . import verification as verification_mod
from . import wallet as wallet_mod
from .credential import Position, Resume
from .crypto import CompactToken, EncryptedEnvelope
from .did import Did, DidDocument
from .encoding import b64url_encode, canonical_json
from .errors import RescredError
from .messaging import BrokerClient, ChannelClient, make_channel_frame
from .verification import (
    PresentationRequest,
    build_response_payload,
    parse_response_payload,
)
from .wallet import IssuanceFlowFailureError, Wallet

_STATUS_BY_CODE = {
    "not-found": 404,
    "unknown-offer": 404,
    "unknown-session": 404,
    "unknown-request": 404,
    "unknown-resume": 404,
    "no-document": 404,
    "already-registered": 409,
    "already-trusted": 409,
    "offer-already-used": 409,
    "request-already-answered": 409,
    "nonce-replayed": 409,
    "offer-expired": 410,
    "request-expired": 410,
}

_ERROR_CLASSES: dict[str, type] = {}
for module in (registry_mod, issuance_mod, verification_mod, wallet_mod, credential_mod):
    for name in dir(module):
        obj = getattr(module, name)
        if isinstance(obj, type) and issubclass(obj, RescredError) and getattr(obj, "code", None):
            _ERROR_CLASSES.setdefault(obj.code, obj)


def raise_coded(code: str, message: str):
    """Re-raise a wire error as the matching domain exception."""
    cls = _ERROR_CLASSES.get(code)
    if cls is IssuanceFlowFailureError:
        raise IssuanceFlowFailureError(message, issuer_code=code)
    if cls is not None:
        raise cls(message)
    raise RescredError(f"{code}: {message}")


def _install_error_handler(app: FastAPI) -> None:
    @app.exception_handler(RescredError)
    async def handle(request: Request, exc: RescredError):
        return JSONResponse(
            status_code=_STATUS_BY_CODE.get(exc.code, 400),
            content={"code": exc.code, "message": str(exc)},
        )


def _check_http(response: httpx.Response) -> dict:
    if response.status_code >= 400:
        try:
            body = response.json()
            raise_coded(body["code"], body.get("message", ""))
        except (KeyError, ValueError):
            pass
        raise RescredError(f"http {response.status_code}: {response.text[:200]}")
    return response.json()


# --------------------------------------------------------------------------
# Console streams (server-sent events of channel frames)
# --------------------------------------------------------------------------


class ConsoleStream:
    """Fan-out of channel frames to any number of console listeners."""

    def __init__(self):
        self._lock = threading.Lock()
        self._listeners: list[queue.Queue] = []

    def publish(self, frame_type: str, payload: bytes) -> None:
        frame_bytes = canonical_json(make_channel_frame(frame_type, payload))
        with self._lock:
            listeners = list(self._listeners)
        for listener in listeners:
            listener.put(frame_bytes)

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue()
        with self._lock:
            self._listeners.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._lock:
            if q in self._listeners:
                self._listeners.remove(q)

    def sse_response(self) -> StreamingResponse:
        q = self.subscribe()

        def stream():
            try:
                yield ": connected\n\n"
                while True:
                    try:
                        frame_bytes = q.get(timeout=1.0)
                        yield f"data: {b64url_encode(frame_bytes)}\n\n"
                    except queue.Empty:
                        yield ": keepalive\n\n"
            finally:
                self.unsubscribe(q)

        return StreamingResponse(stream(), media_type="text/event-stream")


# --------------------------------------------------------------------------
# Registry service
# --------------------------------------------------------------------------


def registry_app(registry: registry_mod.TrustRegistry) -> FastAPI:
    app = FastAPI(title="trust-registry")
    _install_error_handler(app)

    @app.get("/health")
    def health():
        return {"status": "ok", "service": "registry"}

    @app.get("/did/{did}")
    def resolve(did: str):
        return registry.resolve_did_document(Did.parse(did)).to_wire()

    @app.post("/did", status_code=201)
    def register(body: dict):
        receipt = registry.register_did_document(DidDocument.from_wire(body))
        return {"receipt": receipt}

    @app.get("/tir/{did}")
    def trusted(did: str, type: str, at: int | None = None):
        return {"trusted": registry.tir_is_trusted(Did.parse(did), type, at=at)}

    @app.post("/tir", status_code=201)
    def tir_register(body: dict):
        entry = registry.tir_register(Did.parse(body["did"]), list(body["accreditedFor"]))
        return entry.to_wire()

    @app.delete("/tir/{did}")
    def tir_revoke(did: str):
        return registry.tir_revoke(Did.parse(did)).to_wire()

    return app


class HttpRegistryClient:
    """Registry over HTTP; quacks like TrustRegistry for reads."""

    def __init__(self, base_url: str, timeout: float = 5.0, event_hooks: dict | None = None):
        self._client = httpx.Client(base_url=base_url, timeout=timeout, event_hooks=event_hooks or {})

    def resolve_did_document(self, did: Did) -> DidDocument:
        return DidDocument.from_wire(_check_http(self._client.get(f"/did/{did}")))

    def tir_is_trusted(self, did: Did, credential_type: str, at: int | None = None) -> bool:
        params = {"type": credential_type}
        if at is not None:
            params["at"] = str(at)
        return bool(_check_http(self._client.get(f"/tir/{did}", params=params))["trusted"])

    def register_did_document(self, doc: DidDocument) -> int:
        return int(_check_http(self._client.post("/did", json=doc.to_wire()))["receipt"])

    def tir_register(self, did: Did, accredited_for: list) -> dict:
        return _check_http(self._client.post("/tir", json={"did": str(did), "accreditedFor": accredited_for}))

    def tir_revoke(self, did: Did) -> dict:
        return _check_http(self._client.delete(f"/tir/{did}"))

    def close(self) -> None:
        self._client.close()


# --------------------------------------------------------------------------
# Issuer service
# --------------------------------------------------------------------------


def issuer_app(service: issuance_mod.IssuerService) -> FastAPI:
    app = FastAPI(title="issuer")
    _install_error_handler(app)

    @app.get("/health")
    def health():
        return {"status": "ok", "service": "issuer", "issuer": str(service.issuer_did)}

    @app.post("/offers", status_code=201)
    def create_offer(body: dict):
        resume = Resume.from_wire(body["resume"])
        offer = service.create_offer(resume, body.get("credentialType", credential_mod.RESUME_CREDENTIAL_TYPE))
        return offer.to_wire()

    @app.post("/token")
    def exchange(body: dict):
        access_ref, c_nonce = service.exchange_token(body["offerId"])
        return {"accessRef": access_ref, "cNonce": c_nonce}

    @app.post("/credential", status_code=201)
    def issue(body: dict):
        vc = service.issue_credential(body["accessRef"], CompactToken.decode(body["proof"]))
        return {"credential": vc.encode()}

    return app


class HttpIssuerClient:
    """Issuance endpoints over HTTP; the wallet's view of an issuer."""

    def __init__(self, base_url: str, timeout: float = 10.0, event_hooks: dict | None = None):
        self._client = httpx.Client(base_url=base_url, timeout=timeout, event_hooks=event_hooks or {})

    def _call(self, fn):
        try:
            return fn()
        except RescredError as exc:
            if isinstance(exc, wallet_mod.WalletError):
                raise
            raise IssuanceFlowFailureError(str(exc), issuer_code=exc.code) from exc

    def create_offer(self, resume_wire: dict, credential_type: str = credential_mod.RESUME_CREDENTIAL_TYPE) -> dict:
        return self._call(
            lambda: _check_http(
                self._client.post("/offers", json={"resume": resume_wire, "credentialType": credential_type})
            )
        )

    def exchange_token(self, offer_id: str) -> "tuple[str, str]":
        body = self._call(lambda: _check_http(self._client.post("/token", json={"offerId": offer_id})))
        return body["accessRef"], body["cNonce"]

    def issue_credential(self, access_ref: str, proof_text: str) -> str:
        body = self._call(
            lambda: _check_http(self._client.post("/credential", json={"accessRef": access_ref, "proof": proof_text}))
        )
        return body["credential"]

    def close(self) -> None:
        self._client.close()


class LocalIssuerClient:
    """In-process adapter with the same surface as HttpIssuerClient."""

    def __init__(self, service: issuance_mod.IssuerService):
        self._service = service

    def _call(self, fn):
        try:
            return fn()
        except wallet_mod.WalletError:
            raise
        except RescredError as exc:
            raise IssuanceFlowFailureError(str(exc), issuer_code=exc.code) from exc

    def create_offer(self, resume_wire: dict, credential_type: str = credential_mod.RESUME_CREDENTIAL_TYPE) -> dict:
        return self._call(lambda: self._service.create_offer(Resume.from_wire(resume_wire), credential_type).to_wire())

    def exchange_token(self, offer_id: str) -> "tuple[str, str]":
        return self._call(lambda: self._service.exchange_token(offer_id))

    def issue_credential(self, access_ref: str, proof_text: str) -> str:
        return self._call(lambda: self._service.issue_credential(access_ref, CompactToken.decode(proof_text)).encode())


# --------------------------------------------------------------------------
# Verifier agent and service
# --------------------------------------------------------------------------


class VerifierAgent:
    """Verifier core plus its messaging wiring: request frames go out over
    the realtime channel; response frames come back, pass through the broker
    for durable processing, and end up as verification reports."""

    def __init__(self, service: verification_mod.VerifierService):
        self.service = service
        self.console = ConsoleStream()
        self._channel: ChannelClient | None = None
        self._broker: BrokerClient | None = None
        self._seen_messages: set = set()
        self._inbox_topic = f"verify-inbox/{service.verifier_did}"

    def connect(self, channel_addr: "tuple[str, int]" = None, broker_addr: "tuple[str, int]" = None) -> None:
        if broker_addr is not None:
            self._broker = BrokerClient(*broker_addr)
            self._broker.subscribe(self._inbox_topic, self._process_queued, subscriber_id=self._inbox_topic)
        if channel_addr is not None:
            self._channel = ChannelClient(
                *channel_addr, party_did=self.service.verifier_did, on_frame=self._on_frame
            )

    def create_request(self, credential_type: str, holder_did: Did | None = None) -> PresentationRequest:
        request = self.service.create_presentation_request(credential_type)
        if holder_did is not None and self._channel is not None:
            payload = canonical_json(request.to_frame())
            self._channel.send(holder_did, "request", payload)
        return request

    def _on_frame(self, frame_type: str, payload: bytes) -> None:
        if frame_type == "response":
            if self._broker is not None:
                self._broker.publish(self._inbox_topic, payload)
            else:
                self._handle_response(payload)
        elif frame_type == "ack":
            self.console.publish("ack", payload)

    def _process_queued(self, msg) -> None:
        if msg.message_id in self._seen_messages:
            return  # consumer-side dedup: redeliveries cause no second verify
        self._seen_messages.add(msg.message_id)
        self._handle_response(msg.payload)

    def _handle_response(self, payload: bytes) -> None:
        try:
            request_id, envelope = parse_response_payload(payload)
            report = self.service.verify_presentation(request_id, envelope)
        except (RescredError, ValueError, KeyError) as exc:
            self.console.publish("response", canonical_json({"error": getattr(exc, "code", "error"), "message": str(exc)}))
            return
        self.console.publish("response", report.to_bytes())

    def close(self) -> None:
        if self._channel is not None:
            self._channel.close()
        if self._broker is not None:
            self._broker.close()


def verifier_app(agent: VerifierAgent) -> FastAPI:
    app = FastAPI(title="verifier")
    _install_error_handler(app)
    service = agent.service

    @app.get("/health")
    def health():
        return {"status": "ok", "service": "verifier", "verifier": str(service.verifier_did)}

    @app.post("/requests", status_code=201)
    def create_request(body: dict):
        holder = Did.parse(body["holderDid"]) if body.get("holderDid") else None
        request = agent.create_request(
            body.get("credentialType", credential_mod.RESUME_CREDENTIAL_TYPE), holder_did=holder
        )
        return request.to_frame()

    @app.get("/requests/{request_id}")
    def get_request(request_id: str):
        return service.get_request(request_id).to_frame()

    @app.post("/verify/{request_id}")
    def verify(request_id: str, body: dict):
        report = service.verify_presentation(request_id, EncryptedEnvelope.from_wire(body))
        agent.console.publish("response", report.to_bytes())
        return report.to_wire()

    @app.get("/reports/{request_id}")
    def report(request_id: str):
        return service.get_report(request_id).to_wire()

    @app.get("/console/events")
    def console_events():
        return agent.console.sse_response()

    return app


class HttpVerifierClient:
    def __init__(self, base_url: str, timeout: float = 10.0, event_hooks: dict | None = None):
        self._client = httpx.Client(base_url=base_url, timeout=timeout, event_hooks=event_hooks or {})

    def create_request(self, credential_type: str, holder_did: Did | None = None) -> dict:
        body = {"credentialType": credential_type}
        if holder_did is not None:
            body["holderDid"] = str(holder_did)
        return _check_http(self._client.post("/requests", json=body))

    def verify(self, request_id: str, envelope: EncryptedEnvelope) -> dict:
        return _check_http(self._client.post(f"/verify/{request_id}", json=envelope.to_wire()))

    def get_report(self, request_id: str) -> dict:
        return _check_http(self._client.get(f"/reports/{request_id}"))

    def close(self) -> None:
        self._client.close()


# --------------------------------------------------------------------------
# Wallet agent and service
# --------------------------------------------------------------------------


class WalletAgent:
    """Wallet core plus channel wiring. Incoming request frames are stored
    and surfaced to the console; approvals answer over the channel and ack
    receipt end to end."""

    def __init__(self, wallet: Wallet):
        self.wallet = wallet
        self.console = ConsoleStream()
        self._channel: ChannelClient | None = None

    def connect_channel(self, host: str, port: int) -> None:
        self._channel = ChannelClient(host, port, party_did=self.wallet.holder_did, on_frame=self._on_frame)

    def _on_frame(self, frame_type: str, payload: bytes) -> None:
        if frame_type != "request":
            return
        try:
            frame = json.loads(payload.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            return
        if self.wallet.receive_presentation_request(frame):
            self.console.publish("request", payload)
            if self._channel is not None and frame.get("verifierDid"):
                ack = canonical_json({"requestId": frame.get("requestId")})
                self._channel.send(Did.parse(frame["verifierDid"]), "ack", ack)

    def acquire(self, issuer: "str | object", resume_id: str):
        client = HttpIssuerClient(issuer) if isinstance(issuer, str) else issuer
        try:
            return self.wallet.acquire_credential(client, resume_id)
        finally:
            if isinstance(issuer, str):
                client.close()

    def approve(self, request_id: str) -> EncryptedEnvelope:
        stored = self.wallet.get_request(request_id)
        envelope = self.wallet.answer_request(request_id)
        if self._channel is not None:
            payload = build_response_payload(request_id, envelope)
            self._channel.send(Did.parse(stored.frame["verifierDid"]), "response", payload)
        return envelope

    def decline(self, request_id: str) -> None:
        self.wallet.decline_request(request_id)

    def close(self) -> None:
        if self._channel is not None:
            self._channel.close()
            self._channel = None


def wallet_app(agent: WalletAgent) -> FastAPI:
    app = FastAPI(title="wallet")
    _install_error_handler(app)
    wallet = agent.wallet

    @app.get("/health")
    def health():
        return {"status": "ok", "service": "wallet", "holder": str(wallet.holder_did)}

    @app.get("/wallet")
    def identity():
        return {"holderDid": str(wallet.holder_did)}

    @app.get("/resumes")
    def resumes():
        return [{"resumeId": rid, **resume.to_wire()} for rid, resume in wallet.resumes()]

    @app.post("/resumes", status_code=201)
    def create_resume(body: dict):
        resume_id = wallet.create_resume(body["fullName"])
        return {"resumeId": resume_id, **wallet.get_resume(resume_id).to_wire()}

    @app.post("/resumes/{resume_id}/positions", status_code=201)
    def add_position(resume_id: str, body: dict):
        resume = wallet.add_position(resume_id, Position.from_wire(body))
        return {"resumeId": resume_id, **resume.to_wire()}

    @app.get("/credentials")
    def credentials():
        now = int(time.time())
        return [
            {
                "id": vc.id,
                "type": vc.type,
                "issuer": str(vc.issuer),
                "subject": str(vc.subject),
                "issuedAt": vc.issued_at,
                "expiresAt": vc.expires_at,
                "status": "valid" if vc.expires_at >= now else "expired",
                "token": vc.encode(),
            }
            for vc in wallet.credentials()
        ]

    @app.post("/acquire", status_code=201)
    def acquire(body: dict):
        vc = agent.acquire(body["issuerUrl"], body["resumeId"])
        return {"id": vc.id, "issuer": str(vc.issuer), "token": vc.encode()}

    @app.get("/requests")
    def requests():
        return [stored.to_wire() for stored in wallet.all_requests()]

    @app.post("/requests/{request_id}/approve")
    def approve(request_id: str):
        agent.approve(request_id)
        return {"requestId": request_id, "status": "answered"}

    @app.post("/requests/{request_id}/decline")
    def decline(request_id: str):
        agent.decline(request_id)
        return {"requestId": request_id, "status": "declined"}

    @app.get("/console/events")
    def console_events():
        return agent.console.sse_response()

    return app


class HttpWalletClient:
    def __init__(self, base_url: str, timeout: float = 30.0):
        self._client = httpx.Client(base_url=base_url, timeout=timeout)

    def identity(self) -> dict:
        return _check_http(self._client.get("/wallet"))

    def create_resume(self, full_name: str) -> dict:
        return _check_http(self._client.post("/resumes", json={"fullName": full_name}))

    def add_position(self, resume_id: str, position_wire: dict) -> dict:
        return _check_http(self._client.post(f"/resumes/{resume_id}/positions", json=position_wire))

    def acquire(self, issuer_url: str, resume_id: str) -> dict:
        return _check_http(self._client.post("/acquire", json={"issuerUrl": issuer_url, "resumeId": resume_id}))

    def requests(self) -> list:
        return _check_http(self._client.get("/requests"))

    def approve(self, request_id: str) -> dict:
        return _check_http(self._client.post(f"/requests/{request_id}/approve"))

    def close(self) -> None:
        self._client.close()


# --------------------------------------------------------------------------
# Running apps in-process
# --------------------------------------------------------------------------


class PortInUseError(RescredError):
    code = "port-in-use"


class ServiceRunner:
    """Serves one FastAPI app on a background thread."""

    def __init__(self, app: FastAPI, host: str = "127.0.0.1", port: int = 0):
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            sock.bind((host, port))
        except OSError as exc:
            sock.close()
            raise PortInUseError(f"cannot bind {host}:{port}: {exc}") from exc
        sock.listen(128)
        self.host, self.port = sock.getsockname()
        self._sock = sock
        config = uvicorn.Config(app, log_level="error", access_log=False, lifespan="off")
        self._server = uvicorn.Server(config)
        self._thread = threading.Thread(target=self._server.run, kwargs={"sockets": [sock]}, daemon=True)
        self._thread.start()
        self._wait_ready()

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def _wait_ready(self, timeout: float = 10.0) -> None:
        deadline = time.monotonic() + timeout
        with httpx.Client() as client:
            while time.monotonic() < deadline:
                try:
                    client.get(f"{self.url}/health", timeout=0.5)
                    return
                except httpx.HTTPError:
                    time.sleep(0.02)
        raise RescredError(f"service on {self.url} did not become ready")

    def stop(self) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=5.0)
        try:
            self._sock.close()
        except OSError:
            pass
