"""Tests for the holder wallet: identity, storage, acquisition, answers."""

import json

import pytest

from rescred import credential, crypto, did, issuance, registry, wallet as wallet_mod
from rescred.credential import Position
from rescred.services import LocalIssuerClient
from rescred.verification import VerifierService
from rescred.wallet import Wallet

NOW = 1_700_000_000


class ManualClock:
    def __init__(self, value=NOW):
        self.value = value

    def __call__(self):
        return self.value


@pytest.fixture
def clock():
    return ManualClock()


@pytest.fixture
def world(clock):
    """Registry plus a trusted issuer service."""
    reg = registry.TrustRegistry(clock=clock)
    issuer_did = did.new_ebsi_did()
    issuer_key = crypto.generate_key_pair()
    reg.register_did_document(did.build_did_document(issuer_did, [("key-1", issuer_key.public_key)], now=NOW))
    reg.tir_register(issuer_did, ["ResumeCredential"])
    service = issuance.IssuerService(issuer_did, issuer_key, clock=clock)
    return reg, service, issuer_did, issuer_key


def make_wallet(tmp_path, reg, clock, name="w1"):
    return Wallet(str(tmp_path / f"{name}.json"), registry_client=reg, clock=clock)


def prepared_wallet(tmp_path, world, clock):
    reg, service, _, _ = world
    w = make_wallet(tmp_path, reg, clock)
    rid = w.create_resume("Alex Example")
    w.add_position(rid, Position(kind="work", title="Engineer", organization="ACME", start="2020-01-01"))
    w.acquire_credential(LocalIssuerClient(service), rid)
    return w


class TestIdentity:
    def test_init_then_reload_same_did(self, tmp_path, clock):
        path = str(tmp_path / "w.json")
        first = Wallet(path, clock=clock)
        second = Wallet(path, clock=clock)
        assert first.holder_did == second.holder_did
        assert first.holder_key.private_scalar == second.holder_key.private_scalar

    def test_two_wallets_distinct(self, tmp_path, clock):
        a = Wallet(str(tmp_path / "a.json"), clock=clock)
        b = Wallet(str(tmp_path / "b.json"), clock=clock)
        assert a.holder_did != b.holder_did

    def test_corrupt_store(self, tmp_path, clock):
        path = tmp_path / "w.json"
        Wallet(str(path), clock=clock)
        path.write_text(path.read_text()[:40])
        with pytest.raises(wallet_mod.CorruptStoreError):
            Wallet(str(path), clock=clock)

    def test_tampered_identity_detected(self, tmp_path, clock):
        path = tmp_path / "w.json"
        Wallet(str(path), clock=clock)
        data = json.loads(path.read_text())
        data["holderDid"] = "did:key:z" + "2" * 48
        path.write_text(json.dumps(data))
        with pytest.raises(wallet_mod.CorruptStoreError):
            Wallet(str(path), clock=clock)


class TestResumes:
    def test_add_position_persists(self, tmp_path, clock):
        path = str(tmp_path / "w.json")
        w = Wallet(path, clock=clock)
        rid = w.create_resume("Alex Example")
        w.add_position(rid, Position(kind="education", title="BSc", organization="Uni", start="2015-09-01"))
        reloaded = Wallet(path, clock=clock)
        assert len(reloaded.get_resume(rid).positions) == 1

    def test_invalid_position_rejected(self, tmp_path, clock):
        w = Wallet(str(tmp_path / "w.json"), clock=clock)
        w.create_resume("Alex")
        with pytest.raises(credential.InvalidPositionError):
            Position(kind="work", title="t", organization="o", start="2022-01-01", end="2020-01-01")

    def test_unknown_resume(self, tmp_path, clock):
        w = Wallet(str(tmp_path / "w.json"), clock=clock)
        with pytest.raises(wallet_mod.UnknownResumeError):
            w.add_position("ghost", Position(kind="work", title="t", organization="o", start="2022-01-01"))


class TestAcquire:
    def test_happy_path_stores_verified_credential(self, tmp_path, world, clock):
        w = prepared_wallet(tmp_path, world, clock)
        (vc,) = w.credentials()
        assert vc.subject == w.holder_did
        assert vc.signature_verified is True

    def test_wrong_issuer_key_rejected_nothing_stored(self, tmp_path, clock):
        # registry carries a different key than the one the issuer signs with
        reg = registry.TrustRegistry(clock=clock)
        issuer_did = did.new_ebsi_did()
        signing_key = crypto.generate_key_pair()
        registered_key = crypto.generate_key_pair()
        reg.register_did_document(
            did.build_did_document(issuer_did, [("key-1", registered_key.public_key)], now=NOW)
        )
        service = issuance.IssuerService(issuer_did, signing_key, clock=clock)
        w = make_wallet(tmp_path, reg, clock)
        rid = w.create_resume("Alex")
        w.add_position(rid, Position(kind="work", title="E", organization="A", start="2020-01-01"))
        with pytest.raises(wallet_mod.IssuerSignatureInvalidError):
            w.acquire_credential(LocalIssuerClient(service), rid)
        assert w.credentials() == []

    def test_unresolvable_issuer(self, tmp_path, clock):
        reg = registry.TrustRegistry(clock=clock)  # empty registry
        issuer_did = did.new_ebsi_did()
        service = issuance.IssuerService(issuer_did, crypto.generate_key_pair(), clock=clock)
        w = make_wallet(tmp_path, reg, clock)
        rid = w.create_resume("Alex")
        w.add_position(rid, Position(kind="work", title="E", organization="A", start="2020-01-01"))
        with pytest.raises(wallet_mod.IssuerUnresolvableError):
            w.acquire_credential(LocalIssuerClient(service), rid)
        assert w.credentials() == []

    def test_issuer_error_code_surfaces(self, tmp_path, world, clock):
        reg, service, _, _ = world
        w = make_wallet(tmp_path, reg, clock)
        rid = w.create_resume("Alex")  # zero positions
        with pytest.raises(wallet_mod.IssuanceFlowFailureError) as excinfo:
            w.acquire_credential(LocalIssuerClient(service), rid)
        assert excinfo.value.issuer_code == "invalid-resume"

    def test_credentials_survive_reload(self, tmp_path, world, clock):
        w = prepared_wallet(tmp_path, world, clock)
        reloaded = Wallet(w._path, registry_client=world[0], clock=clock)
        assert len(reloaded.credentials()) == 1
        assert reloaded.credentials()[0].encode() == w.credentials()[0].encode()


class TestPresentationRequests:
    def build_request(self, world, clock, enc_key=None):
        reg, _, _, _ = world
        verifier_did = did.new_ebsi_did()
        reg.register_did_document(
            did.build_did_document(verifier_did, [("key-1", crypto.generate_key_pair().public_key)], now=NOW)
        )
        enc_key = enc_key or crypto.generate_key_pair()
        verifier = VerifierService(verifier_did, enc_key, reg, clock=clock)
        return verifier, verifier.create_presentation_request("ResumeCredential")

    def test_answer_round_trip_to_verifier(self, tmp_path, world, clock):
        w = prepared_wallet(tmp_path, world, clock)
        verifier, request = self.build_request(world, clock)
        w.receive_presentation_request(request.to_frame())
        envelope = w.answer_request(request.request_id)
        report = verifier.verify_presentation(request.request_id, envelope)
        assert report.outcome == "accepted"
        assert report.presented_resume.full_name == "Alex Example"

    def test_exact_nonce_echoed(self, tmp_path, world, clock):
        w = prepared_wallet(tmp_path, world, clock)
        enc_key = crypto.generate_key_pair()
        _, request = self.build_request(world, clock, enc_key=enc_key)
        envelope = w.handle_presentation_request(request)
        from rescred.crypto import CompactToken, ecdh_decrypt

        vp_token = CompactToken.decode(ecdh_decrypt(envelope, enc_key).decode("ascii"))
        assert vp_token.payload["nonce"] == request.nonce.value
        assert envelope.recipient_key_id == request.request_id

    def test_no_matching_credential(self, tmp_path, world, clock):
        reg, _, _, _ = world
        w = make_wallet(tmp_path, reg, clock)
        _, request = self.build_request(world, clock)
        with pytest.raises(wallet_mod.NoMatchingCredentialError):
            w.handle_presentation_request(request)

    def test_expired_credential_never_matches(self, tmp_path, world, clock):
        w = prepared_wallet(tmp_path, world, clock)
        clock.value = NOW + 366 * 86400
        _, request = self.build_request(world, clock)
        with pytest.raises(wallet_mod.NoMatchingCredentialError):
            w.handle_presentation_request(request)

    def test_answer_twice_rejected(self, tmp_path, world, clock):
        w = prepared_wallet(tmp_path, world, clock)
        _, request = self.build_request(world, clock)
        w.receive_presentation_request(request.to_frame())
        w.answer_request(request.request_id)
        with pytest.raises(wallet_mod.RequestAlreadyAnsweredError):
            w.answer_request(request.request_id)

    def test_expired_request(self, tmp_path, world, clock):
        w = prepared_wallet(tmp_path, world, clock)
        _, request = self.build_request(world, clock)
        clock.value = NOW + 601
        with pytest.raises(wallet_mod.RequestExpiredError):
            w.handle_presentation_request(request)

    def test_duplicate_frame_ignored(self, tmp_path, world, clock):
        w = prepared_wallet(tmp_path, world, clock)
        _, request = self.build_request(world, clock)
        assert w.receive_presentation_request(request.to_frame()) is True
        assert w.receive_presentation_request(request.to_frame()) is False
        assert len(w.pending_requests()) == 1

    def test_decline(self, tmp_path, world, clock):
        w = prepared_wallet(tmp_path, world, clock)
        _, request = self.build_request(world, clock)
        w.receive_presentation_request(request.to_frame())
        w.decline_request(request.request_id)
        assert w.pending_requests() == []
        assert w.get_request(request.request_id).status == "declined"

    def test_newest_matching_credential_wins(self, tmp_path, world, clock):
        reg, service, _, _ = world
        w = prepared_wallet(tmp_path, world, clock)
        clock.value = NOW + 100
        rid = w.resumes()[0][0]
        newer = w.acquire_credential(LocalIssuerClient(service), rid)
        _, request = self.build_request(world, clock)
        envelope = w.handle_presentation_request(request)
        # the envelope embeds the newer credential: check via decryption
        # using the test-held verifier key is done in the round-trip test;
        # here the wallet's chosen credential is observable by issued_at
        chosen = w._matching_credential("ResumeCredential", clock())
        assert chosen.id == newer.id


class TestNoKeyLeakage:
    def test_private_scalar_absent_from_all_emitted_wire_bytes(self, tmp_path, world, clock):
        """Capture every byte the wallet hands to other parties during a
        full acquire-and-answer flow and scan for the private scalar."""
        reg, service, _, _ = world
        emitted = []

        class RecordingIssuerClient(LocalIssuerClient):
            def create_offer(self, resume_wire, credential_type="ResumeCredential"):
                emitted.append(json.dumps(resume_wire).encode())
                return super().create_offer(resume_wire, credential_type)

            def exchange_token(self, offer_id):
                emitted.append(offer_id.encode())
                return super().exchange_token(offer_id)

            def issue_credential(self, access_ref, proof_text):
                emitted.append(access_ref.encode())
                emitted.append(proof_text.encode())
                return super().issue_credential(access_ref, proof_text)

        w = make_wallet(tmp_path, reg, clock)
        rid = w.create_resume("Alex")
        w.add_position(rid, Position(kind="work", title="E", organization="A", start="2020-01-01"))
        w.acquire_credential(RecordingIssuerClient(service), rid)

        verifier_did = did.new_ebsi_did()
        reg.register_did_document(
            did.build_did_document(verifier_did, [("key-1", crypto.generate_key_pair().public_key)], now=NOW)
        )
        enc_key = crypto.generate_key_pair()
        verifier = VerifierService(verifier_did, enc_key, reg, clock=clock)
        request = verifier.create_presentation_request("ResumeCredential")
        envelope = w.handle_presentation_request(request)
        emitted.append(json.dumps(envelope.to_wire()).encode())
        # the envelope ciphertext is opaque; also scan the decrypted VP
        from rescred.crypto import ecdh_decrypt

        emitted.append(ecdh_decrypt(envelope, enc_key))

        scalar = w.holder_key.private_scalar
        from rescred.encoding import b64url_encode

        needles = [scalar, scalar.hex().encode(), b64url_encode(scalar).encode()]
        for blob in emitted:
            for needle in needles:
                assert needle not in blob
