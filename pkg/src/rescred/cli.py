"""Command-line entry point.

Subcommands: ``registry serve``, ``broker serve``, ``issuer serve``,
``verifier serve``, ``wallet <init|add-position|acquire|respond|list|serve>``,
and ``scenario run <file>``. Every flag has an environment equivalent with
the ``RESCRED_`` prefix. Exit codes: 0 success, 1 failure (including failed
scenario assertions), 2 usage error.

``--insecure-seed`` makes every key, nonce, and identifier reproducible for
test runs. It is refused unless ``RESCRED_TEST_MODE=1`` is set, because a
seeded generator has no place outside a test bench.
"""

from __future__ import annotations

import argparse
import json
import os
import signal
import sys
import threading
import time

from .credential import Position
from .crypto import KeyPair, generate_key_pair, key_pair_from_scalar
from .did import Did, build_did_document, new_ebsi_did
from .encoding import b64url_decode, b64url_encode
from .errors import RescredError
from .rng import seed_for_tests

ENV_PREFIX = "RESCRED_"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class ConfigMissingError(RescredError):
    code = "config-missing"


def _env(name: str, default=None):
    return os.environ.get(ENV_PREFIX + name, default)


def _add_common(parser: argparse.ArgumentParser, *, port: bool = False) -> None:
    parser.add_argument("--data-dir", default=_env("DATA_DIR", "./data"), help="state directory")
    parser.add_argument("--registry-url", default=_env("REGISTRY_URL"), help="registry base URL")
    parser.add_argument("--broker-addr", default=_env("BROKER_ADDR"), help="broker host:port")
    parser.add_argument(
        "--channel-addr",
        default=_env("CHANNEL_ADDR"),
        help="realtime channel host:port (default: broker host, port+1)",
    )
    parser.add_argument(
        "--insecure-seed",
        type=int,
        default=int(_env("INSECURE_SEED")) if _env("INSECURE_SEED") else None,
        help="seed all randomness; test mode only",
    )
    if port:
        parser.add_argument("--port", type=int, default=int(_env("PORT", "0")), help="listen port (0 = ephemeral)")


def _parse_addr(text: str) -> "tuple[str, int]":
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


def _channel_addr(args) -> "tuple[str, int]":
    if args.channel_addr:
        return _parse_addr(args.channel_addr)
    if args.broker_addr:
        host, port = _parse_addr(args.broker_addr)
        return host, port + 1
    raise ConfigMissingError("need --channel-addr or --broker-addr")


def _apply_seed(args) -> None:
    if getattr(args, "insecure_seed", None) is None:
        return
    if os.environ.get(ENV_PREFIX + "TEST_MODE") != "1":
        raise SystemExit(
            f"--insecure-seed is refused outside test mode (set {ENV_PREFIX}TEST_MODE=1); exiting"
        )
    seed_for_tests(args.insecure_seed)


def _block_forever() -> None:
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        try:
            signal.signal(sig, lambda *_: stop.set())
        except ValueError:
            pass
    try:
        while not stop.is_set():
            time.sleep(0.2)
    except KeyboardInterrupt:
        pass


def _load_identity(path: str) -> dict:
    if not os.path.exists(path):
        raise ConfigMissingError(f"identity file {path} not found (run with --init to create one)")
    with open(path, encoding="utf-8") as handle:
        return json.load(handle)


def _save_identity(path: str, identity: dict) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(identity, handle, indent=1, sort_keys=True)


# -- serve commands -----------------------------------------------------------


def cmd_registry_serve(args) -> int:
    from .registry import TrustRegistry
    from .services import ServiceRunner, registry_app

    _apply_seed(args)
    registry = TrustRegistry(data_dir=os.path.join(args.data_dir, "registry"))
    runner = ServiceRunner(registry_app(registry), port=args.port)
    print(f"registry listening on {runner.url}")
    _block_forever()
    runner.stop()
    registry.close()
    return EXIT_OK


def cmd_broker_serve(args) -> int:
    from .messaging import Broker, BrokerServer, ChannelHub, ChannelServer

    _apply_seed(args)
    os.makedirs(args.data_dir, exist_ok=True)
    broker = Broker(log_path=os.path.join(args.data_dir, "broker.log"))
    broker_server = BrokerServer(broker, port=args.port)
    hub_port = args.port + 1 if args.port else 0
    channel_server = ChannelServer(ChannelHub(), port=hub_port)
    print(f"broker on {broker_server.address[0]}:{broker_server.address[1]}")
    print(f"channel on {channel_server.address[0]}:{channel_server.address[1]}")
    _block_forever()
    channel_server.close()
    broker_server.close()
    broker.close()
    return EXIT_OK


def _issuer_identity(args) -> "tuple[Did, KeyPair, str]":
    path = os.path.join(args.data_dir, "issuer.json")
    if args.init and not os.path.exists(path):
        key = generate_key_pair()
        identity = {
            "did": str(new_ebsi_did()),
            "privateScalar": b64url_encode(key.private_scalar),
            "keyId": "key-1",
        }
        _save_identity(path, identity)
    identity = _load_identity(path)
    return Did.parse(identity["did"]), key_pair_from_scalar(b64url_decode(identity["privateScalar"])), identity["keyId"]


def cmd_issuer_serve(args) -> int:
    from .issuance import IssuerService
    from .services import HttpRegistryClient, ServiceRunner, issuer_app

    _apply_seed(args)
    issuer_did, key, key_id = _issuer_identity(args)
    service = IssuerService(issuer_did, key, key_id=key_id, credential_validity_seconds=args.validity)
    if args.registry_url:
        client = HttpRegistryClient(args.registry_url)
        try:
            client.resolve_did_document(issuer_did)
        except RescredError:
            client.register_did_document(build_did_document(issuer_did, [(key_id, key.public_key)]))
            if args.accredit:
                client.tir_register(issuer_did, [args.credential_type])
        client.close()
    runner = ServiceRunner(issuer_app(service), port=args.port)
    print(f"issuer {issuer_did} listening on {runner.url}")
    _block_forever()
    runner.stop()
    return EXIT_OK


def cmd_verifier_serve(args) -> int:
    from .services import HttpRegistryClient, ServiceRunner, VerifierAgent, verifier_app
    from .verification import VerifierService

    _apply_seed(args)
    path = os.path.join(args.data_dir, "verifier.json")
    if args.init and not os.path.exists(path):
        enc_key = generate_key_pair()
        signing_key = generate_key_pair()
        _save_identity(
            path,
            {
                "did": str(new_ebsi_did()),
                "encryptionScalar": b64url_encode(enc_key.private_scalar),
                "signingScalar": b64url_encode(signing_key.private_scalar),
            },
        )
    identity = _load_identity(path)
    verifier_did = Did.parse(identity["did"])
    enc_key = key_pair_from_scalar(b64url_decode(identity["encryptionScalar"]))
    signing_key = key_pair_from_scalar(b64url_decode(identity["signingScalar"]))
    if not args.registry_url:
        raise ConfigMissingError("verifier serve needs --registry-url")
    registry_client = HttpRegistryClient(args.registry_url)
    try:
        registry_client.resolve_did_document(verifier_did)
    except RescredError:
        registry_client.register_did_document(build_did_document(verifier_did, [("key-1", signing_key.public_key)]))
    agent = VerifierAgent(VerifierService(verifier_did, enc_key, registry_client))
    channel = broker = None
    if args.broker_addr:
        broker = _parse_addr(args.broker_addr)
        channel = _channel_addr(args)
    agent.connect(channel_addr=channel, broker_addr=broker)
    runner = ServiceRunner(verifier_app(agent), port=args.port)
    print(f"verifier {verifier_did} listening on {runner.url}")
    _block_forever()
    runner.stop()
    agent.close()
    registry_client.close()
    return EXIT_OK


# -- wallet commands ------------------------------------------------------------


def _open_wallet(args):
    from .services import HttpRegistryClient
    from .wallet import Wallet

    registry_client = HttpRegistryClient(args.registry_url) if args.registry_url else None
    store = os.path.join(args.data_dir, "wallet.json")
    os.makedirs(args.data_dir, exist_ok=True)
    return Wallet(store, registry_client=registry_client)


def cmd_wallet_init(args) -> int:
    _apply_seed(args)
    wallet = _open_wallet(args)
    if args.name and not wallet.resumes():
        wallet.create_resume(args.name)
    print(str(wallet.holder_did))
    return EXIT_OK


def cmd_wallet_add_position(args) -> int:
    wallet = _open_wallet(args)
    resumes = wallet.resumes()
    if args.resume:
        resume_id = args.resume
    elif resumes:
        resume_id = resumes[0][0]
    else:
        resume_id = wallet.create_resume(args.full_name or "unnamed")
    position = Position(
        kind=args.kind,
        title=args.title,
        organization=args.organization,
        start=args.start,
        end=args.end,
        description=args.description or "",
    )
    resume = wallet.add_position(resume_id, position)
    print(json.dumps({"resumeId": resume_id, "positions": len(resume.positions)}))
    return EXIT_OK


def cmd_wallet_acquire(args) -> int:
    _apply_seed(args)
    wallet = _open_wallet(args)
    if wallet.registry is None:
        raise ConfigMissingError("wallet acquire needs --registry-url")
    resumes = wallet.resumes()
    if not resumes:
        raise ConfigMissingError("wallet has no resume; add positions first")
    resume_id = args.resume or resumes[0][0]
    from .services import HttpIssuerClient

    client = HttpIssuerClient(args.issuer_url)
    try:
        vc = wallet.acquire_credential(client, resume_id)
    finally:
        client.close()
    print(json.dumps({"credentialId": vc.id, "issuer": str(vc.issuer), "expiresAt": vc.expires_at}))
    return EXIT_OK


def cmd_wallet_respond(args) -> int:
    from .services import WalletAgent

    _apply_seed(args)
    wallet = _open_wallet(args)
    agent = WalletAgent(wallet)
    agent.connect_channel(*_channel_addr(args))
    time.sleep(args.wait)  # let buffered request frames drain
    pending = wallet.pending_requests()
    if args.request:
        pending = [r for r in pending if r.frame.get("requestId") == args.request]
    if not pending:
        print("no pending requests", file=sys.stderr)
        agent.close()
        return EXIT_FAILURE
    for stored in pending:
        agent.approve(stored.frame["requestId"])
        print(json.dumps({"answered": stored.frame["requestId"]}))
    time.sleep(0.2)  # give the response frame time to flush
    agent.close()
    return EXIT_OK


def cmd_wallet_list(args) -> int:
    wallet = _open_wallet(args)
    listing = {
        "holderDid": str(wallet.holder_did),
        "resumes": [{"resumeId": rid, **resume.to_wire()} for rid, resume in wallet.resumes()],
        "credentials": [
            {"id": vc.id, "type": vc.type, "issuer": str(vc.issuer), "expiresAt": vc.expires_at}
            for vc in wallet.credentials()
        ],
        "requests": [stored.to_wire() for stored in wallet.all_requests()],
    }
    print(json.dumps(listing, indent=1, sort_keys=True))
    return EXIT_OK


def cmd_wallet_serve(args) -> int:
    from .services import ServiceRunner, WalletAgent, wallet_app

    _apply_seed(args)
    wallet = _open_wallet(args)
    agent = WalletAgent(wallet)
    if args.broker_addr or args.channel_addr:
        agent.connect_channel(*_channel_addr(args))
    runner = ServiceRunner(wallet_app(agent), port=args.port)
    print(f"wallet {wallet.holder_did} listening on {runner.url}")
    _block_forever()
    runner.stop()
    agent.close()
    return EXIT_OK


# -- scenario --------------------------------------------------------------------


def cmd_scenario_run(args) -> int:
    from .scenario import ScenarioParseError, StepFailureError, run_scenario

    _apply_seed(args)
    path = args.script
    if not os.path.exists(path):
        bundled = os.path.join(os.path.dirname(__file__), "scenarios", path + ".scn")
        if os.path.exists(bundled):
            path = bundled
    os.makedirs(args.data_dir, exist_ok=True)
    work_dir = os.path.join(args.data_dir, f"scenario-{int(time.time() * 1000)}")
    os.makedirs(work_dir, exist_ok=True)
    try:
        exit_code, transcript = run_scenario(path, work_dir, transcript_path=args.transcript)
    except ScenarioParseError as exc:
        print(f"parse-error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StepFailureError as exc:
        print(f"step-failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    if not args.transcript:
        for entry in transcript:
            print(json.dumps(entry, sort_keys=True))
    summary = "PASS" if exit_code == 0 else "FAIL"
    print(f"{summary} {os.path.basename(path)}", file=sys.stderr)
    return EXIT_OK if exit_code == 0 else EXIT_FAILURE


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rescred", description="resume credential lifecycle suite")
    sub = parser.add_subparsers(dest="command", required=True)

    registry = sub.add_parser("registry", help="trust registry simulator")
    registry_sub = registry.add_subparsers(dest="action", required=True)
    serve = registry_sub.add_parser("serve")
    _add_common(serve, port=True)
    serve.set_defaults(fn=cmd_registry_serve)

    broker = sub.add_parser("broker", help="message broker and realtime channel")
    broker_sub = broker.add_subparsers(dest="action", required=True)
    serve = broker_sub.add_parser("serve")
    _add_common(serve, port=True)
    serve.set_defaults(fn=cmd_broker_serve)

    issuer = sub.add_parser("issuer", help="credential issuer service")
    issuer_sub = issuer.add_subparsers(dest="action", required=True)
    serve = issuer_sub.add_parser("serve")
    _add_common(serve, port=True)
    serve.add_argument("--init", action="store_true", help="create the identity file if absent")
    serve.add_argument("--no-accredit", dest="accredit", action="store_false", help="register the DID but skip the TIR")
    serve.add_argument("--credential-type", default="ResumeCredential")
    serve.add_argument("--validity", type=int, default=365 * 86400, help="credential validity in seconds")
    serve.set_defaults(fn=cmd_issuer_serve)

    verifier = sub.add_parser("verifier", help="presentation verifier service")
    verifier_sub = verifier.add_subparsers(dest="action", required=True)
    serve = verifier_sub.add_parser("serve")
    _add_common(serve, port=True)
    serve.add_argument("--init", action="store_true")
    serve.set_defaults(fn=cmd_verifier_serve)

    wallet = sub.add_parser("wallet", help="holder wallet")
    wallet_sub = wallet.add_subparsers(dest="action", required=True)

    init = wallet_sub.add_parser("init")
    _add_common(init)
    init.add_argument("--name", help="holder full name; creates an initial resume")
    init.set_defaults(fn=cmd_wallet_init)

    add_position = wallet_sub.add_parser("add-position")
    _add_common(add_position)
    add_position.add_argument("--resume")
    add_position.add_argument("--full-name")
    add_position.add_argument("--kind", required=True, choices=["education", "work", "certificate"])
    add_position.add_argument("--title", required=True)
    add_position.add_argument("--organization", required=True)
    add_position.add_argument("--start", required=True)
    add_position.add_argument("--end")
    add_position.add_argument("--description")
    add_position.set_defaults(fn=cmd_wallet_add_position)

    acquire = wallet_sub.add_parser("acquire")
    _add_common(acquire)
    acquire.add_argument("--issuer-url", required=True)
    acquire.add_argument("--resume")
    acquire.set_defaults(fn=cmd_wallet_acquire)

    respond = wallet_sub.add_parser("respond")
    _add_common(respond)
    respond.add_argument("--request", help="answer one request id (default: all pending)")
    respond.add_argument("--wait", type=float, default=1.0, help="seconds to wait for buffered frames")
    respond.set_defaults(fn=cmd_wallet_respond)

    listing = wallet_sub.add_parser("list")
    _add_common(listing)
    listing.set_defaults(fn=cmd_wallet_list)

    serve = wallet_sub.add_parser("serve")
    _add_common(serve, port=True)
    serve.set_defaults(fn=cmd_wallet_serve)

    scenario = sub.add_parser("scenario", help="run a scripted end-to-end scenario")
    scenario_sub = scenario.add_subparsers(dest="action", required=True)
    run = scenario_sub.add_parser("run")
    run.add_argument("script", help="path to a scenario file or the name of a bundled one")
    run.add_argument("--transcript", help="write the transcript to this JSONL file")
    _add_common(run)
    run.set_defaults(fn=cmd_scenario_run)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigMissingError as exc:
        print(f"config-missing: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(exc.code, file=sys.stderr)
            return EXIT_USAGE
        raise
    except RescredError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
