"""Tests for the command-line surface."""

import json
import os
import subprocess
import sys

import pytest

from rescred.cli import main


def run_cli(args, env_extra=None):
    env = dict(os.environ)
    if env_extra:
        env.update(env_extra)
    return subprocess.run(
        [sys.executable, "-m", "rescred.cli", *args],
        capture_output=True,
        text=True,
        env=env,
        timeout=120,
    )


class TestWalletVerbs:
    def test_init_twice_prints_same_did(self, tmp_path):
        first = run_cli(["wallet", "init", "--data-dir", str(tmp_path)])
        second = run_cli(["wallet", "init", "--data-dir", str(tmp_path)])
        assert first.returncode == 0 and second.returncode == 0
        assert first.stdout.strip() == second.stdout.strip()
        assert first.stdout.startswith("did:key:z")

    def test_add_position_and_list(self, tmp_path):
        run_cli(["wallet", "init", "--data-dir", str(tmp_path), "--name", "Alex Example"])
        added = run_cli(
            [
                "wallet",
                "add-position",
                "--data-dir",
                str(tmp_path),
                "--kind",
                "work",
                "--title",
                "Engineer",
                "--organization",
                "ACME",
                "--start",
                "2020-01-01",
            ]
        )
        assert added.returncode == 0, added.stderr
        listing = run_cli(["wallet", "list", "--data-dir", str(tmp_path)])
        data = json.loads(listing.stdout)
        assert data["resumes"][0]["positions"][0]["title"] == "Engineer"


class TestServeErrors:
    def test_issuer_serve_without_identity_is_config_missing(self, tmp_path):
        result = run_cli(["issuer", "serve", "--data-dir", str(tmp_path)])
        assert result.returncode == 2
        assert "config-missing" in result.stderr

    def test_verifier_serve_without_registry(self, tmp_path):
        result = run_cli(["verifier", "serve", "--data-dir", str(tmp_path), "--init"])
        assert result.returncode == 2
        assert "config-missing" in result.stderr


class TestSeedGate:
    def test_seed_refused_outside_test_mode(self, tmp_path):
        env = {k: v for k, v in os.environ.items() if k != "RESCRED_TEST_MODE"}
        result = subprocess.run(
            [sys.executable, "-m", "rescred.cli", "wallet", "init", "--data-dir", str(tmp_path), "--insecure-seed", "1"],
            capture_output=True,
            text=True,
            env=env,
            timeout=60,
        )
        assert result.returncode == 2
        assert "test mode" in result.stderr

    def test_seed_accepted_in_test_mode(self, tmp_path):
        a = run_cli(
            ["wallet", "init", "--data-dir", str(tmp_path / "a"), "--insecure-seed", "42"],
            env_extra={"RESCRED_TEST_MODE": "1"},
        )
        b = run_cli(
            ["wallet", "init", "--data-dir", str(tmp_path / "b"), "--insecure-seed", "42"],
            env_extra={"RESCRED_TEST_MODE": "1"},
        )
        assert a.returncode == 0 and b.returncode == 0
        assert a.stdout.strip() == b.stdout.strip()


class TestScenarioCommand:
    def test_missing_file_is_parse_error(self, tmp_path):
        result = run_cli(["scenario", "run", str(tmp_path / "missing.scn"), "--data-dir", str(tmp_path)])
        assert result.returncode == 2
        assert "parse-error" in result.stderr

    def test_bad_step_is_parse_error(self, tmp_path):
        script = tmp_path / "bad.scn"
        script.write_text("launch-the-missiles now=yes\n")
        result = run_cli(["scenario", "run", str(script), "--data-dir", str(tmp_path)])
        assert result.returncode == 2

    def test_bundled_scenario_by_name(self, tmp_path):
        result = run_cli(
            ["scenario", "run", "replay_attack", "--data-dir", str(tmp_path), "--transcript", str(tmp_path / "t.jsonl")]
        )
        assert result.returncode == 0, result.stderr
        assert "PASS replay_attack.scn" in result.stderr
        lines = [json.loads(l) for l in (tmp_path / "t.jsonl").read_text().splitlines()]
        assert any(e["event"] == "step" and e["step"] == "assert-error" for e in lines)

    def test_failing_assertion_exits_one(self, tmp_path):
        script = tmp_path / "fail.scn"
        script.write_text(
            "\n".join(
                [
                    "start-service kind=registry",
                    "start-service kind=broker",
                    "start-service kind=issuer name=acme trust=yes",
                    "start-service kind=verifier name=hr",
                    'create-wallet name=alice full-name="Alice"',
                    "add-position wallet=alice kind=work title=T organization=O start=2020-01-01",
                    "acquire wallet=alice issuer=acme",
                    "request-presentation verifier=hr wallet=alice type=ResumeCredential as=r1",
                    "verify request=r1 mode=honest",
                    "assert-outcome request=r1 outcome=rejected",
                ]
            )
        )
        result = run_cli(["scenario", "run", str(script), "--data-dir", str(tmp_path)])
        assert result.returncode == 1


class TestSeededScenarioDeterminism:
    def test_same_seed_reproduces_all_identities(self, tmp_path):
        """With one seed, every DID, credential id, and request id that a
        scenario mints comes out identical run over run."""

        def projection(transcript_path):
            entries = [json.loads(l) for l in transcript_path.read_text().splitlines()]
            picked = []
            for e in entries:
                if e["event"] != "step":
                    continue
                result = {
                    k: v
                    for k, v in e.get("result", {}).items()
                    if k in ("did", "holderDid", "requestId", "credentialId", "issuer", "outcome", "failedCheck", "resumeId")
                }
                picked.append((e["step"], json.dumps(result, sort_keys=True)))
            return picked

        runs = []
        for run in ("one", "two"):
            out = tmp_path / run
            out.mkdir()
            result = run_cli(
                [
                    "scenario",
                    "run",
                    "revoked_issuer",
                    "--data-dir",
                    str(out),
                    "--transcript",
                    str(out / "t.jsonl"),
                    "--insecure-seed",
                    "12345",
                ],
                env_extra={"RESCRED_TEST_MODE": "1"},
            )
            assert result.returncode == 0, result.stderr
            runs.append(projection(out / "t.jsonl"))
        assert runs[0] == runs[1]


def test_main_returns_usage_for_unknown_command():
    with pytest.raises(SystemExit) as excinfo:
        main(["definitely-not-a-command"])
    assert excinfo.value.code == 2
