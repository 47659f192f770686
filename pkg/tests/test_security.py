import json
import threading
import time
from datetime import datetime, timedelta, timezone
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from fleetopt.errors import ParseError
from fleetopt.security import (
    HttpTextClient,
    PROMPT_HEADER,
    SecurityObservation,
    StubTextClient,
    build_prompt,
    doc_store_filename,
    generate_remediation,
    parse_scan_report,
    post_security_observations,
    recommend_security,
)

from conftest import FIXTURES, write_json

SCANNED_AT = datetime(2025, 3, 31, 22, 0, tzinfo=timezone.utc)


def make_obs(check="restrict-privileges", resource="pod-a", kind="Pod", hint="fix it"):
    return SecurityObservation(
        check_name=check,
        resource_name=resource,
        resource_kind=kind,
        namespace="default",
        severity="high",
        doc_link="https://docs.example.io/controls/x",
        remediation_hint=hint,
        scanned_at=SCANNED_AT,
        scan_id="scan-0009",
    )


def scan_doc(results):
    return {"scan_id": "scan-0009", "scanned_at": "2025-03-31T22:00:00Z", "results": results}


def failed(check, resource, kind="Pod", namespace="default"):
    return {
        "check_name": check, "status": "failed", "resource_name": resource,
        "resource_kind": kind, "namespace": namespace, "severity": "medium",
        "doc_link": "", "remediation_hint": f"hint for {check}",
    }


def passed(check, resource):
    return {"check_name": check, "status": "passed", "resource_name": resource}


# -- parsing -----------------------------------------------------------------

def test_fixture_scan_report_counts():
    observations = parse_scan_report(FIXTURES / "scan_report.json")
    assert len(observations) == 2  # 2 failed, 3 passed
    names = {o.check_name for o in observations}
    assert names == {"minimum-memory-guarantee", "privileged-container"}


def test_all_pass_report_is_empty(tmp_path):
    path = write_json(tmp_path / "scan.json", scan_doc([passed("a", "x"), passed("b", "y")]))
    assert parse_scan_report(path) == []


def test_same_check_on_two_pods_gives_two_observations(tmp_path):
    path = write_json(
        tmp_path / "scan.json",
        scan_doc([failed("c1", "pod-a"), failed("c1", "pod-b")]),
    )
    observations = parse_scan_report(path)
    assert len(observations) == 2
    assert {o.resource_name for o in observations} == {"pod-a", "pod-b"}


def test_duplicate_tuple_collapsed(tmp_path):
    path = write_json(
        tmp_path / "scan.json",
        scan_doc([failed("c1", "pod-a"), failed("c1", "pod-a")]),
    )
    assert len(parse_scan_report(path)) == 1


def test_malformed_report(tmp_path):
    bad = tmp_path / "scan.json"
    bad.write_text("{broken")
    with pytest.raises(ParseError):
        parse_scan_report(bad)
    path = write_json(tmp_path / "scan2.json", scan_doc([{"status": "failed"}]))
    with pytest.raises(ParseError):
        parse_scan_report(path)


# -- prompts -----------------------------------------------------------------

def test_prompt_structure_with_doc():
    obs = make_obs()
    prompt = build_prompt(obs, "Some doc text.")
    header_idx = prompt.index(PROMPT_HEADER)
    obs_idx = prompt.index('"check_name"')
    doc_idx = prompt.index("Some doc text.")
    assert header_idx == 0
    assert header_idx < obs_idx < doc_idx


def test_prompt_without_doc_is_a_prefix():
    obs = make_obs()
    with_doc = build_prompt(obs, "DOCTEXT")
    without = build_prompt(obs)
    assert with_doc.startswith(without)
    assert "DOCTEXT" not in without


def test_prompt_deterministic():
    a = build_prompt(make_obs(), "doc")
    b = build_prompt(make_obs(), "doc")
    assert a == b


# -- generation --------------------------------------------------------------

def test_stub_client_returns_canned_guide():
    client = StubTextClient(guides={"restrict-privileges": "THE GUIDE"})
    prompt = build_prompt(make_obs())
    assert generate_remediation(prompt, client, timeout=timedelta(seconds=5)) == "THE GUIDE"


def test_stub_client_default_template_mentions_check():
    client = StubTextClient()
    text = generate_remediation(build_prompt(make_obs()), client, timeout=timedelta(seconds=5))
    assert "restrict-privileges" in text


class SleepyClient:
    def generate(self, prompt):
        time.sleep(5)
        return "too late"


def test_timeout_falls_back_to_empty():
    start = time.monotonic()
    text = generate_remediation(
        build_prompt(make_obs()), SleepyClient(), timeout=timedelta(milliseconds=100)
    )
    assert text == ""
    assert time.monotonic() - start < 2.0


class EmptyClient:
    def generate(self, prompt):
        return "   "


def test_empty_response_falls_back():
    assert generate_remediation("p", EmptyClient(), timeout=timedelta(seconds=1)) == ""


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        reply = json.dumps({"text": f"echo: {len(body['prompt'])} chars"}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(reply)))
        self.end_headers()
        self.wfile.write(reply)

    def log_message(self, *args):
        pass


def test_http_client_speaks_documented_wire_format():
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        client = HttpTextClient(f"http://127.0.0.1:{server.server_port}/generate")
        prompt = build_prompt(make_obs())
        text = generate_remediation(prompt, client, timeout=timedelta(seconds=5))
        assert text == f"echo: {len(prompt)} chars"
    finally:
        server.shutdown()


# -- the agent pass ------------------------------------------------------------

def test_one_new_check_yields_one_recommendation(board):
    observations = [make_obs()]
    post_security_observations(board, observations)
    recs = recommend_security(board, FIXTURES / "docs", StubTextClient())
    assert len(recs) == 1
    rec = recs[0]
    assert rec.extras["steps"]
    assert len(rec.evidence) >= 1
    assert rec.extras["severity"] == "high"
    assert board.get(rec.blackboard_key()) is not None


def test_rerun_without_new_observations_yields_nothing(board):
    post_security_observations(board, [make_obs()])
    first = recommend_security(board, None, StubTextClient())
    assert len(first) == 1
    second = recommend_security(board, None, StubTextClient())
    assert second == []


def test_missing_doc_fixture_still_produces_recommendation(board, tmp_path):
    post_security_observations(board, [make_obs()])
    recs = recommend_security(board, tmp_path / "empty-docs", StubTextClient())
    assert len(recs) == 1
    assert recs[0].extras["doc_excerpt"] == ""
    assert recs[0].extras["steps"]


def test_fallback_to_hint_on_client_failure(board):
    class FailingClient:
        def generate(self, prompt):
            raise RuntimeError("boom")

    post_security_observations(board, [make_obs(hint="the documented hint")])
    recs = recommend_security(board, None, FailingClient())
    assert recs[0].extras["steps"] == "the documented hint"
    assert recs[0].extras["fallback_used"] is True
    assert "hint used" in recs[0].rationale


def test_evidence_chain_resolves(board):
    obs = make_obs()
    post_security_observations(board, [obs])
    recs = recommend_security(board, None, StubTextClient())
    ref = recs[0].evidence[0]
    record = board.get_version(ref.key, ref.version)
    assert record is not None
    assert record.value["scan_id"] == obs.scan_id


def test_doc_store_lookup_uses_link_hash():
    link = "https://docs.example.io/controls/min-memory"
    assert (FIXTURES / "docs" / doc_store_filename(link)).exists()
