"""Tests for the offer/token/credential exchange and proof of possession."""

import pytest

from rescred import credential, crypto, did, issuance, registry
from rescred.issuance import IssuerService, build_proof

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
def issuer_identity():
    return did.new_ebsi_did(), crypto.generate_key_pair()


@pytest.fixture
def service(issuer_identity, clock):
    issuer_did, key = issuer_identity
    return IssuerService(issuer_did, key, clock=clock)


@pytest.fixture
def holder_key():
    return crypto.generate_key_pair()


def make_resume(holder_key):
    holder = did.did_key_from_public_key(holder_key.public_key)
    return credential.Resume(
        holder_did=holder,
        full_name="Alex Example",
        positions=[credential.Position(kind="work", title="Engineer", organization="ACME", start="2020-01-01")],
    )


def run_flow(service, holder_key, clock=None):
    offer = service.create_offer(make_resume(holder_key), "ResumeCredential")
    access_ref, c_nonce = service.exchange_token(offer.offer_id)
    proof = build_proof(holder_key, c_nonce, service.issuer_did, now=NOW)
    return service.issue_credential(access_ref, proof)


class TestOffers:
    def test_offer_has_future_expiry(self, service, holder_key):
        offer = service.create_offer(make_resume(holder_key), "ResumeCredential")
        assert offer.expires_at == NOW + 600
        assert service.get_offer(offer.offer_id) == offer

    def test_offer_ids_distinct(self, service, holder_key):
        a = service.create_offer(make_resume(holder_key), "ResumeCredential")
        b = service.create_offer(make_resume(holder_key), "ResumeCredential")
        assert a.offer_id != b.offer_id

    def test_empty_resume_rejected(self, service, holder_key):
        resume = make_resume(holder_key)
        resume.positions = []
        with pytest.raises(credential.InvalidResumeError):
            service.create_offer(resume, "ResumeCredential")

    def test_unconfigured_issuer(self, holder_key):
        bare = IssuerService(None, None)
        with pytest.raises(issuance.IssuerUnconfiguredError):
            bare.create_offer(make_resume(holder_key), "ResumeCredential")


class TestExchange:
    def test_fresh_offer_yields_challenge(self, service, holder_key):
        offer = service.create_offer(make_resume(holder_key), "ResumeCredential")
        access_ref, c_nonce = service.exchange_token(offer.offer_id)
        assert access_ref
        from rescred.encoding import b64url_decode

        assert len(b64url_decode(c_nonce)) >= 16

    def test_second_exchange_rejected(self, service, holder_key):
        offer = service.create_offer(make_resume(holder_key), "ResumeCredential")
        service.exchange_token(offer.offer_id)
        with pytest.raises(issuance.OfferAlreadyUsedError):
            service.exchange_token(offer.offer_id)

    def test_expired_offer(self, service, holder_key, clock):
        offer = service.create_offer(make_resume(holder_key), "ResumeCredential")
        clock.value = NOW + 601
        with pytest.raises(issuance.OfferExpiredError):
            service.exchange_token(offer.offer_id)

    def test_unknown_offer(self, service):
        with pytest.raises(issuance.UnknownOfferError):
            service.exchange_token("nope")


class TestIssue:
    def test_happy_path_binds_prover(self, service, holder_key):
        vc = run_flow(service, holder_key)
        assert vc.subject == did.did_key_from_public_key(holder_key.public_key)
        assert crypto.verify_token(vc.token, service.signing_key.public_key)

    def test_stale_nonce_mismatch(self, service, holder_key):
        offer1 = service.create_offer(make_resume(holder_key), "ResumeCredential")
        _, stale_nonce = service.exchange_token(offer1.offer_id)
        offer2 = service.create_offer(make_resume(holder_key), "ResumeCredential")
        access2, _ = service.exchange_token(offer2.offer_id)
        proof = build_proof(holder_key, stale_nonce, service.issuer_did, now=NOW)
        with pytest.raises(issuance.NonceMismatchError):
            service.issue_credential(access2, proof)

    def test_replayed_proof(self, service, holder_key):
        offer = service.create_offer(make_resume(holder_key), "ResumeCredential")
        access_ref, c_nonce = service.exchange_token(offer.offer_id)
        proof = build_proof(holder_key, c_nonce, service.issuer_did, now=NOW)
        service.issue_credential(access_ref, proof)
        with pytest.raises(issuance.NonceReplayedError):
            service.issue_credential(access_ref, proof)

    def test_wrong_audience(self, service, holder_key):
        offer = service.create_offer(make_resume(holder_key), "ResumeCredential")
        access_ref, c_nonce = service.exchange_token(offer.offer_id)
        proof = build_proof(holder_key, c_nonce, did.new_ebsi_did(), now=NOW)
        with pytest.raises(issuance.AudienceMismatchError):
            service.issue_credential(access_ref, proof)

    def test_proof_signed_by_other_key(self, service, holder_key):
        offer = service.create_offer(make_resume(holder_key), "ResumeCredential")
        access_ref, c_nonce = service.exchange_token(offer.offer_id)
        honest = build_proof(holder_key, c_nonce, service.issuer_did, now=NOW)
        # the attacker claims the holder's kid but signs with their own key
        attacker = crypto.generate_key_pair()
        forged = crypto.sign_token(dict(honest.payload), {"kid": honest.header["kid"]}, attacker)
        with pytest.raises(issuance.BadProofSignatureError):
            service.issue_credential(access_ref, forged)

    def test_unknown_session(self, service, holder_key):
        proof = build_proof(holder_key, "n", service.issuer_did, now=NOW)
        with pytest.raises(issuance.UnknownSessionError):
            service.issue_credential("missing", proof)

    def test_expired_challenge_nonce(self, service, holder_key, clock):
        offer = service.create_offer(make_resume(holder_key), "ResumeCredential")
        access_ref, c_nonce = service.exchange_token(offer.offer_id)
        clock.value = NOW + 301
        proof = build_proof(holder_key, c_nonce, service.issuer_did, now=clock.value)
        with pytest.raises(issuance.NonceMismatchError):
            service.issue_credential(access_ref, proof)


class TestProofOfPossessionSoundness:
    def test_adversarial_proofs_never_issue(self, service, holder_key):
        """No credential may ever be bound to a DID whose key did not sign
        the proof: wrong keys, wrong nonces, wrong audiences, replays."""
        import random

        rng = random.Random(99)
        issued = 0
        for i in range(120):
            offer = service.create_offer(make_resume(holder_key), "ResumeCredential")
            access_ref, c_nonce = service.exchange_token(offer.offer_id)
            mode = rng.choice(["wrong-key", "wrong-nonce", "wrong-aud", "replay"])
            try:
                if mode == "wrong-key":
                    honest = build_proof(holder_key, c_nonce, service.issuer_did, now=NOW)
                    attacker = crypto.generate_key_pair()
                    proof = crypto.sign_token(dict(honest.payload), {"kid": honest.header["kid"]}, attacker)
                    service.issue_credential(access_ref, proof)
                elif mode == "wrong-nonce":
                    proof = build_proof(holder_key, "bogus-" + str(i), service.issuer_did, now=NOW)
                    service.issue_credential(access_ref, proof)
                elif mode == "wrong-aud":
                    proof = build_proof(holder_key, c_nonce, did.new_ebsi_did(), now=NOW)
                    service.issue_credential(access_ref, proof)
                else:
                    proof = build_proof(holder_key, c_nonce, service.issuer_did, now=NOW)
                    service.issue_credential(access_ref, proof)
                    service.issue_credential(access_ref, proof)  # replay
                    issued += 1  # only the first succeeded; replay must raise
            except issuance.IssuanceError:
                if mode == "replay":
                    issued += 1  # the honest first issue counted already
                continue
            if mode != "replay":
                pytest.fail(f"adversarial proof accepted in mode {mode}")

    def test_subject_always_matches_proof_signer(self, service):
        for _ in range(20):
            holder = crypto.generate_key_pair()
            vc = run_flow(service, holder)
            assert vc.subject == did.did_key_from_public_key(holder.public_key)


def test_issued_credential_verifies_against_registry(issuer_identity, clock):
    """Cross-module: resolve the issuer document and verify the token."""
    issuer_did, key = issuer_identity
    reg = registry.TrustRegistry(clock=clock)
    doc = did.build_did_document(issuer_did, [("key-1", key.public_key)], now=NOW)
    reg.register_did_document(doc)
    service = IssuerService(issuer_did, key, clock=clock)
    holder = crypto.generate_key_pair()
    vc = run_flow(service, holder)
    resolved = reg.resolve_did_document(vc.issuer)
    registered_key = resolved.key_by_id(vc.token.header["kid"])
    assert crypto.verify_token(vc.token, registered_key) == vc.token.payload
