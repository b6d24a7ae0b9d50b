"""Tests for presentation requests and the eleven-check verification."""

import pytest

from rescred import credential, crypto, did, registry, verification
from rescred.credential import Position, Resume, build_credential, build_presentation
from rescred.crypto import CompactToken, ecdh_encrypt
from rescred.verification import CHECK_NAMES, VerifierService

NOW = 1_700_000_000


class ManualClock:
    def __init__(self, value=NOW):
        self.value = value

    def __call__(self):
        return self.value


class World:
    """A registry with one trusted issuer, one holder, and one verifier."""

    def __init__(self, clock=None, validity=365 * 86400, trust=True):
        self.clock = clock or ManualClock()
        self.registry = registry.TrustRegistry(clock=self.clock)
        self.issuer_did = did.new_ebsi_did()
        self.issuer_key = crypto.generate_key_pair()
        doc = did.build_did_document(self.issuer_did, [("key-1", self.issuer_key.public_key)], now=self.clock())
        self.registry.register_did_document(doc)
        if trust:
            self.registry.tir_register(self.issuer_did, ["ResumeCredential"])
        self.holder_key = crypto.generate_key_pair()
        self.holder_did = did.did_key_from_public_key(self.holder_key.public_key)
        self.resume = Resume(
            holder_did=self.holder_did,
            full_name="Alex Example",
            positions=[Position(kind="work", title="Engineer", organization="ACME", start="2020-01-01")],
        )
        self.vc = build_credential(self.resume, self.issuer_did, self.issuer_key, validity, now=self.clock())
        self.verifier_did = did.new_ebsi_did()
        verifier_doc = did.build_did_document(
            self.verifier_did, [("key-1", crypto.generate_key_pair().public_key)], now=self.clock()
        )
        self.registry.register_did_document(verifier_doc)
        self.enc_key = crypto.generate_key_pair()
        self.verifier = VerifierService(self.verifier_did, self.enc_key, self.registry, clock=self.clock)

    def request(self):
        return self.verifier.create_presentation_request("ResumeCredential")

    def honest_envelope(self, request, vc=None, nonce=None, audience=None):
        vp = build_presentation(
            vc or self.vc,
            self.holder_key,
            audience or self.verifier_did,
            nonce or request.nonce.value,
            now=self.clock(),
        )
        return self.seal(request, vp.encode())

    def seal(self, request, vp_text: str):
        return ecdh_encrypt(vp_text.encode("ascii"), request.response_encryption_key, request.request_id)

    def verify_honest(self):
        request = self.request()
        return self.verifier.verify_presentation(request.request_id, self.honest_envelope(request))


def resign_outer(world, payload: dict) -> str:
    token = crypto.sign_token(payload, {"kid": str(world.holder_did)}, world.holder_key)
    return token.encode()


class TestHappyPath:
    def test_accepted_with_all_checks(self):
        world = World()
        report = world.verify_honest()
        assert report.outcome == "accepted"
        assert [c.name for c in report.checks] == list(CHECK_NAMES)
        assert all(c.passed for c in report.checks)
        assert report.presented_resume == world.resume
        assert report.failed_check is None

    def test_report_wire_round_trip(self):
        world = World()
        report = world.verify_honest()
        rebuilt = verification.VerificationReport.from_wire(report.to_wire())
        assert rebuilt.to_bytes() == report.to_bytes()

    def test_requests_have_distinct_nonces(self):
        world = World()
        assert world.request().nonce.value != world.request().nonce.value

    def test_request_frame_round_trip(self):
        world = World()
        request = world.request()
        frame = request.to_frame()
        rebuilt = verification.PresentationRequest.from_frame(frame)
        assert rebuilt.request_id == request.request_id
        assert rebuilt.nonce.value == request.nonce.value
        assert rebuilt.response_encryption_key == request.response_encryption_key

    def test_unconfigured_verifier(self):
        with pytest.raises(verification.VerifierUnconfiguredError):
            VerifierService(None, None, registry.TrustRegistry()).create_presentation_request("X")


class TestRejections:
    """Each adversarial input must fail at exactly its check, with every
    later check reported as not run."""

    def assert_failed_at(self, report, check_name):
        assert report.outcome == "rejected"
        assert report.failed_check == check_name
        index = CHECK_NAMES.index(check_name)
        for check in report.checks[:index]:
            assert check.passed, f"{check.name} should have passed"
        assert not report.checks[index].passed
        for check in report.checks[index + 1 :]:
            assert check.detail == "not-run"
        assert report.presented_resume is None

    def test_garbage_envelope(self):
        world = World()
        request = world.request()
        alien = crypto.generate_key_pair()
        envelope = ecdh_encrypt(b"whatever", alien.public_key, request.request_id)
        report = world.verifier.verify_presentation(request.request_id, envelope)
        self.assert_failed_at(report, "envelope-decryption")

    def test_junk_plaintext(self):
        world = World()
        request = world.request()
        report = world.verifier.verify_presentation(request.request_id, world.seal(request, "not a token"))
        self.assert_failed_at(report, "presentation-structure")

    def test_wrong_nonce(self):
        world = World()
        request = world.request()
        envelope = world.honest_envelope(request, nonce="completely-different-nonce")
        report = world.verifier.verify_presentation(request.request_id, envelope)
        self.assert_failed_at(report, "nonce-binding")

    def test_stale_nonce_from_other_request(self):
        world = World()
        first = world.request()
        second = world.request()
        envelope = world.honest_envelope(second, nonce=first.nonce.value)
        report = world.verifier.verify_presentation(second.request_id, envelope)
        self.assert_failed_at(report, "nonce-binding")

    def test_wrong_audience(self):
        world = World()
        request = world.request()
        envelope = world.honest_envelope(request, audience=did.new_ebsi_did())
        report = world.verifier.verify_presentation(request.request_id, envelope)
        self.assert_failed_at(report, "audience-binding")

    def test_tampered_presentation_payload(self):
        world = World()
        request = world.request()
        vp = build_presentation(world.vc, world.holder_key, world.verifier_did, request.nonce.value, now=NOW)
        tampered = CompactToken(
            header=vp.token.header,
            payload=dict(vp.token.payload, iat=NOW + 9),
            signature=vp.token.signature,
        )
        report = world.verifier.verify_presentation(request.request_id, world.seal(request, tampered.encode()))
        self.assert_failed_at(report, "holder-signature")

    def test_presentation_signed_by_non_subject(self):
        world = World()
        request = world.request()
        thief = crypto.generate_key_pair()
        thief_did = did.did_key_from_public_key(thief.public_key)
        payload = {
            "iss": str(thief_did),
            "aud": str(world.verifier_did),
            "nonce": request.nonce.value,
            "iat": NOW,
            "vp": {"credential": world.vc.encode()},
        }
        stolen = crypto.sign_token(payload, {"kid": str(thief_did)}, thief).encode()
        report = world.verifier.verify_presentation(request.request_id, world.seal(request, stolen))
        self.assert_failed_at(report, "holder-binding")

    def test_tampered_credential_payload(self):
        world = World()
        request = world.request()
        inner = world.vc.token
        doctored_resume = dict(inner.payload["vc"], resume=dict(inner.payload["vc"]["resume"], fullName="Dr. Fraud"))
        doctored = CompactToken(
            header=inner.header,
            payload=dict(inner.payload, vc=doctored_resume),
            signature=inner.signature,
        )
        payload = {
            "iss": str(world.holder_did),
            "aud": str(world.verifier_did),
            "nonce": request.nonce.value,
            "iat": NOW,
            "vp": {"credential": doctored.encode()},
        }
        report = world.verifier.verify_presentation(
            request.request_id, world.seal(request, resign_outer(world, payload))
        )
        self.assert_failed_at(report, "issuer-signature")

    def test_structurally_broken_credential(self):
        world = World()
        request = world.request()
        inner = world.vc.token
        stripped = CompactToken(
            header=inner.header,
            payload={k: v for k, v in inner.payload.items() if k != "exp"},
            signature=inner.signature,
        )
        payload = {
            "iss": str(world.holder_did),
            "aud": str(world.verifier_did),
            "nonce": request.nonce.value,
            "iat": NOW,
            "vp": {"credential": stripped.encode()},
        }
        report = world.verifier.verify_presentation(
            request.request_id, world.seal(request, resign_outer(world, payload))
        )
        self.assert_failed_at(report, "credential-structure")

    def test_unknown_issuer(self):
        world = World()
        ghost_did = did.new_ebsi_did()
        ghost_key = crypto.generate_key_pair()
        vc = build_credential(world.resume, ghost_did, ghost_key, 3600, now=NOW)
        request = world.request()
        report = world.verifier.verify_presentation(request.request_id, world.honest_envelope(request, vc=vc))
        self.assert_failed_at(report, "issuer-resolution")

    def test_issuer_signed_with_unregistered_key(self):
        world = World()
        rogue_key = crypto.generate_key_pair()
        vc = build_credential(world.resume, world.issuer_did, rogue_key, 3600, now=NOW)
        request = world.request()
        report = world.verifier.verify_presentation(request.request_id, world.honest_envelope(request, vc=vc))
        self.assert_failed_at(report, "issuer-signature")

    def test_issuer_never_in_tir(self):
        world = World(trust=False)
        report = world.verify_honest()
        self.assert_failed_at(report, "issuer-trusted")

    def test_issuer_revoked_after_issuance(self):
        world = World()
        assert world.verify_honest().outcome == "accepted"
        world.clock.value = NOW + 100
        world.registry.tir_revoke(world.issuer_did)
        world.clock.value = NOW + 200
        report = world.verify_honest()
        self.assert_failed_at(report, "issuer-trusted")

    def test_expired_credential(self):
        world = World(validity=3600)
        world.clock.value = NOW + 3600 + 61  # beyond expiry plus skew
        report = world.verify_honest()
        self.assert_failed_at(report, "validity-window")

    def test_recently_expired_credential_within_skew_passes(self):
        world = World(validity=3600)
        world.clock.value = NOW + 3600 + 30
        assert world.verify_honest().outcome == "accepted"


class TestRequestLifecycle:
    def test_nonce_single_use(self):
        world = World()
        request = world.request()
        envelope = world.honest_envelope(request)
        first = world.verifier.verify_presentation(request.request_id, envelope)
        assert first.outcome == "accepted"
        with pytest.raises(verification.UnknownRequestError):
            world.verifier.verify_presentation(request.request_id, envelope)

    def test_rejected_verification_also_consumes(self):
        world = World()
        request = world.request()
        report = world.verifier.verify_presentation(request.request_id, world.seal(request, "junk"))
        assert report.outcome == "rejected"
        with pytest.raises(verification.UnknownRequestError):
            world.verifier.verify_presentation(request.request_id, world.honest_envelope(request))

    def test_unknown_request(self):
        world = World()
        request = world.request()
        with pytest.raises(verification.UnknownRequestError):
            world.verifier.verify_presentation("missing", world.honest_envelope(request))

    def test_expired_request_runs_no_checks(self):
        world = World()
        request = world.request()
        envelope = world.honest_envelope(request)
        world.clock.value = NOW + 600 + 61
        with pytest.raises(verification.RequestExpiredError):
            world.verifier.verify_presentation(request.request_id, envelope)
        with pytest.raises(verification.ReportNotFoundError):
            world.verifier.get_report(request.request_id)

    def test_get_report_is_stable(self):
        world = World()
        request = world.request()
        report = world.verifier.verify_presentation(request.request_id, world.honest_envelope(request))
        assert world.verifier.get_report(request.request_id).to_bytes() == report.to_bytes()
        assert world.verifier.get_report(request.request_id).to_bytes() == report.to_bytes()

    def test_report_not_found(self):
        world = World()
        with pytest.raises(verification.ReportNotFoundError):
            world.verifier.get_report("nothing")


class TestDeterminism:
    def test_identical_inputs_identical_report_bytes(self):
        from rescred.rng import SeededRandomSource

        reports = []
        for _ in range(2):
            clock = ManualClock()
            reg = registry.TrustRegistry(clock=clock)
            source = SeededRandomSource(5)
            issuer_did = did.new_ebsi_did(source)
            issuer_key = crypto.generate_key_pair(source)
            reg.register_did_document(
                did.build_did_document(issuer_did, [("key-1", issuer_key.public_key)], now=NOW)
            )
            reg.tir_register(issuer_did, ["ResumeCredential"])
            holder_key = crypto.generate_key_pair(source)
            holder = did.did_key_from_public_key(holder_key.public_key)
            resume = Resume(
                holder_did=holder,
                full_name="Alex Example",
                positions=[Position(kind="work", title="Engineer", organization="ACME", start="2020-01-01")],
            )
            vc = build_credential(resume, issuer_did, issuer_key, 3600, now=NOW, source=source)
            verifier_did = did.new_ebsi_did(source)
            enc_key = crypto.generate_key_pair(source)
            verifier = VerifierService(verifier_did, enc_key, reg, clock=clock, source=source)
            request = verifier.create_presentation_request("ResumeCredential")
            vp = build_presentation(vc, holder_key, verifier_did, request.nonce.value, now=NOW)
            envelope = ecdh_encrypt(
                vp.encode().encode("ascii"), request.response_encryption_key, request.request_id, source=source
            )
            reports.append(verifier.verify_presentation(request.request_id, envelope).to_bytes())
        assert reports[0] == reports[1]
