"""Scenario driver: runs whole credential lifecycles from a script file.

Scripts are line-oriented; each non-comment line is one step, written as a
step name followed by ``key=value`` arguments (shell-style quoting). Steps
spin up services in-process, drive wallets over the same wire protocols the
real services use, and assert on verification outcomes. The driver writes a
JSON-lines transcript of every step and every frame its parties saw.

Adversarial presentation modes exist here, not in the wallet: the driver
holds the holder's store and can therefore build tampered, mis-signed,
mis-bound, or replayed presentations and submit them directly to the
verifier's endpoint.
"""

from __future__ import annotations

import json
import shlex
import time

from .credential import Position, build_presentation
from .crypto import CompactToken, ecdh_encrypt, generate_key_pair, sign_token
from .did import build_did_document, did_key_from_public_key, new_ebsi_did
from .errors import RescredError
from .issuance import IssuerService
from .messaging import Broker, BrokerServer, ChannelHub, ChannelServer
from .registry import TrustRegistry
from .services import (
    HttpRegistryClient,
    HttpVerifierClient,
    ServiceRunner,
    VerifierAgent,
    WalletAgent,
    issuer_app,
    registry_app,
    verifier_app,
)
from .verification import VerifierService
from .wallet import Wallet

ADVERSARIAL_MODES = (
    "honest",
    "tampered-credential",
    "tampered-presentation",
    "wrong-holder-key",
    "wrong-nonce",
    "replay",
)


class ScenarioParseError(RescredError):
    code = "parse-error"


class StepFailureError(RescredError):
    code = "step-failure"

    def __init__(self, message: str, step_index: int):
        super().__init__(f"step {step_index}: {message}")
        self.step_index = step_index


class Step:
    def __init__(self, name: str, args: dict, line: int):
        self.name = name
        self.args = args
        self.line = line


def parse_scenario(text: str) -> "list[Step]":
    steps = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            tokens = shlex.split(line)
        except ValueError as exc:
            raise ScenarioParseError(f"line {line_no}: {exc}") from exc
        name, *rest = tokens
        args = {}
        for token in rest:
            if "=" not in token:
                raise ScenarioParseError(f"line {line_no}: expected key=value, got {token!r}")
            key, value = token.split("=", 1)
            args[key] = value
        steps.append(Step(name=name, args=args, line=line_no))
    if not steps:
        raise ScenarioParseError("scenario has no steps")
    return steps


class ScenarioRunner:
    """Owns every service and wallet a script creates and tears them down."""

    def __init__(self, work_dir: str, transcript_path: str | None = None):
        self.work_dir = work_dir
        self.transcript: list[dict] = []
        self._transcript_path = transcript_path
        self.registry: TrustRegistry | None = None
        self.registry_runner: ServiceRunner | None = None
        self.registry_client: HttpRegistryClient | None = None
        self.broker: Broker | None = None
        self.broker_server: BrokerServer | None = None
        self.hub: ChannelHub | None = None
        self.channel_server: ChannelServer | None = None
        self.issuers: dict[str, dict] = {}
        self.verifiers: dict[str, dict] = {}
        self.wallets: dict[str, WalletAgent] = {}
        self.requests: dict[str, dict] = {}  # alias -> {requestId, verifier, frame, envelope, error, report}

    # -- transcript -----------------------------------------------------------

    def record(self, event: str, **fields) -> None:
        entry = {"t": int(time.time() * 1000), "event": event, **fields}
        self.transcript.append(entry)
        if self._transcript_path:
            with open(self._transcript_path, "a", encoding="utf-8") as handle:
                handle.write(json.dumps(entry, sort_keys=True) + "\n")

    def _tap_console(self, party: str, console) -> None:
        import threading

        q = console.subscribe()

        def drain():
            while True:
                frame_bytes = q.get()
                if frame_bytes is None:
                    return
                self.record("frame", party=party, frame=json.loads(frame_bytes))

        threading.Thread(target=drain, daemon=True).start()

    def _wire_hooks(self, party: str) -> dict:
        """httpx event hooks that write every request/response the driver
        makes into the transcript."""

        def on_request(request):
            body = request.content.decode("utf-8", "replace")[:2048] if request.content else ""
            self.record(
                "wire", transport="http", direction="send", party=party,
                method=request.method, url=str(request.url), body=body,
            )

        def on_response(response):
            response.read()
            self.record(
                "wire", transport="http", direction="recv", party=party,
                url=str(response.url), status=response.status_code,
                body=response.text[:2048],
            )

        return {"request": [on_request], "response": [on_response]}

    # -- step dispatch ----------------------------------------------------------

    def run(self, steps: "list[Step]") -> int:
        handlers = {
            "start-service": self.step_start_service,
            "create-wallet": self.step_create_wallet,
            "add-position": self.step_add_position,
            "acquire": self.step_acquire,
            "request-presentation": self.step_request_presentation,
            "answer": self.step_answer,
            "verify": self.step_verify,
            "revoke-issuer": self.step_revoke_issuer,
            "assert-outcome": self.step_assert_outcome,
            "assert-error": self.step_assert_error,
        }
        try:
            for index, step in enumerate(steps):
                handler = handlers.get(step.name)
                if handler is None:
                    raise ScenarioParseError(f"line {step.line}: unknown step {step.name!r}")
                try:
                    result = handler(step.args) or {}
                except AssertionError as exc:
                    self.record("assertion-failed", step=step.name, line=step.line, message=str(exc))
                    return 1
                except RescredError as exc:
                    raise StepFailureError(f"{step.name} at line {step.line}: {exc}", index) from exc
                self.record("step", step=step.name, line=step.line, args=step.args, result=result)
            return 0
        finally:
            self.close()

    # -- services ---------------------------------------------------------------

    def step_start_service(self, args: dict) -> dict:
        kind = args.get("kind")
        if kind == "registry":
            self.registry = TrustRegistry(data_dir=f"{self.work_dir}/registry")
            self.registry_runner = ServiceRunner(registry_app(self.registry))
            self.registry_client = HttpRegistryClient(self.registry_runner.url, event_hooks=self._wire_hooks("driver"))
            return {"url": self.registry_runner.url}
        if kind == "broker":
            self.broker = Broker(log_path=f"{self.work_dir}/broker.log", visibility_seconds=5.0)
            self.broker_server = BrokerServer(self.broker)
            self.hub = ChannelHub()
            self.channel_server = ChannelServer(self.hub)
            return {"broker": list(self.broker_server.address), "channel": list(self.channel_server.address)}
        if kind == "issuer":
            return self._start_issuer(args)
        if kind == "verifier":
            return self._start_verifier(args)
        raise ScenarioParseError(f"unknown service kind {kind!r}")

    def _require_infra(self) -> None:
        if self.registry_client is None:
            raise StepFailureError("registry not started", -1)
        if self.channel_server is None:
            raise StepFailureError("broker not started", -1)

    def _start_issuer(self, args: dict) -> dict:
        self._require_infra()
        name = args.get("name", "issuer")
        issuer_did = new_ebsi_did()
        key = generate_key_pair()
        self.registry_client.register_did_document(
            build_did_document(issuer_did, [("key-1", key.public_key)], now=int(time.time()))
        )
        if args.get("trust", "yes") == "yes":
            self.registry_client.tir_register(issuer_did, [args.get("type", "ResumeCredential")])
        service = IssuerService(
            issuer_did, key, credential_validity_seconds=int(args.get("validity", 365 * 86400))
        )
        runner = ServiceRunner(issuer_app(service))
        self.issuers[name] = {"did": issuer_did, "key": key, "service": service, "runner": runner}
        return {"did": str(issuer_did), "url": runner.url}

    def _start_verifier(self, args: dict) -> dict:
        self._require_infra()
        name = args.get("name", "verifier")
        verifier_did = new_ebsi_did()
        signing_key = generate_key_pair()
        enc_key = generate_key_pair()
        self.registry_client.register_did_document(
            build_did_document(verifier_did, [("key-1", signing_key.public_key)], now=int(time.time()))
        )
        agent = VerifierAgent(VerifierService(verifier_did, enc_key, self.registry_client))
        agent.connect(channel_addr=self.channel_server.address, broker_addr=self.broker_server.address)
        runner = ServiceRunner(verifier_app(agent))
        client = HttpVerifierClient(runner.url, event_hooks=self._wire_hooks(name))
        self._tap_console(name, agent.console)
        self.verifiers[name] = {"did": verifier_did, "agent": agent, "runner": runner, "client": client}
        return {"did": str(verifier_did), "url": runner.url}

    # -- wallet steps ------------------------------------------------------------

    def step_create_wallet(self, args: dict) -> dict:
        self._require_infra()
        name = args["name"]
        wallet = Wallet(f"{self.work_dir}/wallet-{name}.json", registry_client=self.registry_client)
        agent = WalletAgent(wallet)
        agent.connect_channel(*self.channel_server.address)
        resume_id = wallet.create_resume(args.get("full-name", name))
        self._tap_console(name, agent.console)
        self.wallets[name] = agent
        return {"holderDid": str(wallet.holder_did), "resumeId": resume_id}

    def _wallet(self, name: str) -> WalletAgent:
        agent = self.wallets.get(name)
        if agent is None:
            raise ScenarioParseError(f"unknown wallet {name!r}")
        return agent

    def step_add_position(self, args: dict) -> dict:
        agent = self._wallet(args["wallet"])
        resume_id = agent.wallet.resumes()[0][0]
        position = Position(
            kind=args.get("kind", "work"),
            title=args.get("title", ""),
            organization=args.get("organization", ""),
            start=args.get("start", "2020-01-01"),
            end=args.get("end"),
            description=args.get("description", ""),
        )
        resume = agent.wallet.add_position(resume_id, position)
        return {"positions": len(resume.positions)}

    def step_acquire(self, args: dict) -> dict:
        agent = self._wallet(args["wallet"])
        issuer = self.issuers.get(args["issuer"])
        if issuer is None:
            raise ScenarioParseError(f"unknown issuer {args['issuer']!r}")
        resume_id = agent.wallet.resumes()[0][0]
        from .services import HttpIssuerClient

        client = HttpIssuerClient(issuer["runner"].url, event_hooks=self._wire_hooks(args["wallet"]))
        try:
            vc = agent.acquire(client, resume_id)
        finally:
            client.close()
        return {"credentialId": vc.id, "issuer": str(vc.issuer)}

    # -- presentation steps --------------------------------------------------------

    def step_request_presentation(self, args: dict) -> dict:
        verifier = self.verifiers[args["verifier"]]
        agent = self._wallet(args["wallet"])
        frame = verifier["client"].create_request(
            args.get("type", "ResumeCredential"), holder_did=agent.wallet.holder_did
        )
        alias = args.get("as", frame["requestId"])
        self.requests[alias] = {
            "requestId": frame["requestId"],
            "verifier": args["verifier"],
            "wallet": args["wallet"],
            "frame": frame,
        }
        return {"requestId": frame["requestId"]}

    def _request(self, alias: str) -> dict:
        request = self.requests.get(alias)
        if request is None:
            raise ScenarioParseError(f"unknown request {alias!r}")
        return request

    def step_answer(self, args: dict) -> dict:
        request = self._request(args["request"])
        agent = self._wallet(args.get("wallet", request["wallet"]))
        request_id = request["requestId"]
        deadline = time.monotonic() + float(args.get("timeout", 5.0))
        while time.monotonic() < deadline:
            if any(r.frame.get("requestId") == request_id for r in agent.wallet.pending_requests()):
                break
            time.sleep(0.02)
        else:
            raise StepFailureError(f"request {request_id} never reached wallet", -1)
        envelope = agent.approve(request_id)
        request["envelope"] = envelope
        return {"answered": request_id}

    def step_verify(self, args: dict) -> dict:
        """Await the report for a channel answer, or (with mode=...) build a
        presentation directly and submit it to the verify endpoint."""
        request = self._request(args["request"])
        verifier = self.verifiers[request["verifier"]]
        mode = args.get("mode")
        if mode is None:
            deadline = time.monotonic() + float(args.get("timeout", 10.0))
            while time.monotonic() < deadline:
                try:
                    request["report"] = verifier["client"].get_report(request["requestId"])
                    return {"outcome": request["report"]["outcome"]}
                except RescredError:
                    time.sleep(0.05)
            raise StepFailureError(f"no report for {request['requestId']}", -1)
        if mode not in ADVERSARIAL_MODES:
            raise ScenarioParseError(f"unknown verify mode {mode!r}")
        envelope = self._build_presentation_envelope(request, mode)
        try:
            request["report"] = verifier["client"].verify(request["requestId"], envelope)
            request.pop("error", None)
            return {"outcome": request["report"]["outcome"], "mode": mode}
        except RescredError as exc:
            request["error"] = exc.code
            return {"error": exc.code, "mode": mode}

    def _build_presentation_envelope(self, request: dict, mode: str):
        from .verification import PresentationRequest

        if mode == "replay":
            envelope = request.get("envelope")
            if envelope is None:
                raise StepFailureError("nothing submitted yet to replay", -1)
            return envelope

        agent = self._wallet(request["wallet"])
        wallet = agent.wallet
        frame = PresentationRequest.from_frame(request["frame"])
        credentials = wallet.credentials()
        if not credentials:
            raise StepFailureError("wallet holds no credential to present", -1)
        vc = credentials[-1]
        now = int(time.time())

        if mode == "wrong-holder-key":
            thief = generate_key_pair()
            thief_did = did_key_from_public_key(thief.public_key)
            payload = {
                "iss": str(thief_did),
                "aud": str(frame.verifier_did),
                "nonce": frame.nonce.value,
                "iat": now,
                "vp": {"credential": vc.encode()},
            }
            vp_text = sign_token(payload, {"kid": str(thief_did)}, thief).encode()
        elif mode == "wrong-nonce":
            vp_text = build_presentation(vc, wallet.holder_key, frame.verifier_did, "stale-" + frame.nonce.value[:8], now=now).encode()
        elif mode == "tampered-presentation":
            vp = build_presentation(vc, wallet.holder_key, frame.verifier_did, frame.nonce.value, now=now)
            tampered = CompactToken(
                header=vp.token.header,
                payload=dict(vp.token.payload, iat=now + 7),
                signature=vp.token.signature,
            )
            vp_text = tampered.encode()
        elif mode == "tampered-credential":
            inner = vc.token
            doctored_vc_map = dict(
                inner.payload["vc"],
                resume=dict(inner.payload["vc"]["resume"], fullName="Dr. Totally Legitimate"),
            )
            doctored = CompactToken(
                header=inner.header,
                payload=dict(inner.payload, vc=doctored_vc_map),
                signature=inner.signature,
            )
            payload = {
                "iss": str(wallet.holder_did),
                "aud": str(frame.verifier_did),
                "nonce": frame.nonce.value,
                "iat": now,
                "vp": {"credential": doctored.encode()},
            }
            vp_text = sign_token(payload, {"kid": str(wallet.holder_did)}, wallet.holder_key).encode()
        else:  # honest
            vp_text = build_presentation(vc, wallet.holder_key, frame.verifier_did, frame.nonce.value, now=now).encode()

        envelope = ecdh_encrypt(vp_text.encode("ascii"), frame.response_encryption_key, frame.request_id)
        request["envelope"] = envelope
        return envelope

    # -- registry steps ------------------------------------------------------------

    def step_revoke_issuer(self, args: dict) -> dict:
        issuer = self.issuers.get(args["issuer"])
        if issuer is None:
            raise ScenarioParseError(f"unknown issuer {args['issuer']!r}")
        entry = self.registry_client.tir_revoke(issuer["did"])
        return {"revokedAt": entry["revokedAt"]}

    # -- assertions ------------------------------------------------------------------

    def step_assert_outcome(self, args: dict) -> dict:
        request = self._request(args["request"])
        report = request.get("report")
        assert report is not None, f"no report recorded for {args['request']}"
        expected = args["outcome"]
        assert report["outcome"] == expected, f"outcome {report['outcome']!r}, expected {expected!r}"
        if "failed-check" in args:
            assert report["failedCheck"] == args["failed-check"], (
                f"failed at {report['failedCheck']!r}, expected {args['failed-check']!r}"
            )
        if "checks" in args:
            passed = sum(1 for c in report["checks"] if c["passed"])
            assert passed == int(args["checks"]), f"{passed} checks passed, expected {args['checks']}"
        return {"outcome": report["outcome"], "failedCheck": report.get("failedCheck")}

    def step_assert_error(self, args: dict) -> dict:
        request = self._request(args["request"])
        error = request.get("error")
        assert error is not None, f"no error recorded for {args['request']}"
        assert error == args["code"], f"error {error!r}, expected {args['code']!r}"
        return {"error": error}

    # -- teardown -----------------------------------------------------------------------

    def close(self) -> None:
        for agent in self.wallets.values():
            self._quiet(agent.close)
        for verifier in self.verifiers.values():
            self._quiet(verifier["agent"].close)
            self._quiet(verifier["client"].close)
            self._quiet(verifier["runner"].stop)
        for issuer in self.issuers.values():
            self._quiet(issuer["runner"].stop)
        if self.channel_server:
            self._quiet(self.channel_server.close)
        if self.broker_server:
            self._quiet(self.broker_server.close)
        if self.broker:
            self._quiet(self.broker.close)
        if self.registry_client:
            self._quiet(self.registry_client.close)
        if self.registry_runner:
            self._quiet(self.registry_runner.stop)
        if self.registry:
            self._quiet(self.registry.close)

    @staticmethod
    def _quiet(fn) -> None:
        try:
            fn()
        except Exception:
            pass


def run_scenario(script_path: str, work_dir: str, transcript_path: str | None = None) -> "tuple[int, list]":
    """Parse and execute one scenario. Returns (exit code, transcript)."""
    try:
        with open(script_path, encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise ScenarioParseError(f"cannot read scenario: {exc}") from exc
    steps = parse_scenario(text)
    runner = ScenarioRunner(work_dir, transcript_path)
    exit_code = runner.run(steps)
    return exit_code, runner.transcript
