import json
from datetime import datetime, timedelta, timezone

import pytest

from fleetopt.errors import MalformedRecord, StaleTarget
from fleetopt.recommendation import (
    EvidenceRef,
    ImpactVector,
    Recommendation,
    STATUS_APPLIED,
    STATUS_APPROVED,
    STATUS_SURFACED,
)
from fleetopt.workflow import (
    FeedbackRecord,
    apply_patch,
    emit_proposal,
    ingest_feedback,
    window_id,
)

from conftest import write_json

NOW = datetime(2025, 3, 31, 23, 55, tzinfo=timezone.utc)
WINDOW = window_id(NOW)


def make_rec(rec_id="abc123", status=STATUS_SURFACED, resource="vm-1"):
    return Recommendation(
        id=rec_id,
        agent="rightsizing",
        handle_doc={"platform": "vm", "id": resource, "project": "p",
                    "owner": "o", "flavor_name": "m1.large", "labels": {}},
        current_flavor="m1.large",
        proposed_flavor="m1.medium",
        patch=[
            {"resource": resource, "path": "flavor_name", "old": "m1.large", "new": "m1.medium"},
            {"resource": resource, "path": "requests/cpu", "old": 8.0, "new": 0.55},
        ],
        impact=ImpactVector(cost=0.04, sustainability=0.04),
        rationale="P95 far below the lower threshold.",
        evidence=[EvidenceRef(key=f"/observations/utilization/vm/{resource}", version=1)],
        status=status,
    )


def test_window_id_format():
    assert WINDOW == "2025-W14"
    assert window_id(datetime(2024, 8, 1, tzinfo=timezone.utc)) == "2024-W31"


# -- emission ------------------------------------------------------------------

def test_emit_writes_three_files(tmp_path):
    artifact = emit_proposal(make_rec(), tmp_path, WINDOW)
    assert artifact.directory.is_dir()
    assert artifact.patch_file.exists()
    assert artifact.summary_file.exists()
    assert artifact.metadata_file.exists()
    summary = artifact.summary_file.read_text()
    assert "P95" in summary
    assert "@1" in summary  # evidence citation key@version
    patch = json.loads(artifact.patch_file.read_text())
    assert patch["changes"][0]["new"] == "m1.medium"


def test_metadata_round_trips(tmp_path):
    rec = make_rec()
    artifact = emit_proposal(rec, tmp_path, WINDOW)
    meta = json.loads(artifact.metadata_file.read_text())
    assert Recommendation.from_doc(meta["recommendation"]) == rec
    assert meta["rec_id"] == rec.id


def test_emit_twice_is_noop(tmp_path):
    rec = make_rec()
    first = emit_proposal(rec, tmp_path, WINDOW)
    stamp = first.metadata_file.stat().st_mtime_ns
    second = emit_proposal(rec, tmp_path, WINDOW)
    assert second.directory == first.directory
    assert first.metadata_file.stat().st_mtime_ns == stamp


def test_ten_recs_ten_sibling_directories(tmp_path):
    for i in range(10):
        emit_proposal(make_rec(rec_id=f"rec-{i:02d}", resource=f"vm-{i}"), tmp_path, WINDOW)
    window_dir = tmp_path / "proposals" / WINDOW
    assert len([d for d in window_dir.iterdir() if d.is_dir()]) == 10


def test_only_surfaced_recs_emit(tmp_path):
    with pytest.raises(ValueError):
        emit_proposal(make_rec(status="pending"), tmp_path, WINDOW)


def test_crashed_emit_leaves_no_partial_proposal(tmp_path, monkeypatch):
    rec = make_rec()
    import fleetopt.workflow as wf

    original = wf._render_summary

    def boom(*args, **kwargs):
        raise RuntimeError("disk died")

    monkeypatch.setattr(wf, "_render_summary", boom)
    with pytest.raises(RuntimeError):
        emit_proposal(rec, tmp_path, WINDOW)
    monkeypatch.setattr(wf, "_render_summary", original)
    window_dir = tmp_path / "proposals" / WINDOW
    assert not (window_dir / rec.id).exists()
    assert not any(window_dir.iterdir())  # no temp litter either
    # a clean retry completes the proposal
    artifact = emit_proposal(rec, tmp_path, WINDOW)
    assert artifact.directory.is_dir()


# -- feedback ------------------------------------------------------------------

def seed_rec(board, rec):
    board.put(rec.blackboard_key(), rec.to_doc())
    return rec


def test_approval_updates_status_and_writes_feedback(board, tmp_path):
    rec = seed_rec(board, make_rec())
    path = write_json(
        tmp_path / "fb.json",
        [{"rec_id": rec.id, "action": "approved", "actor": "alex",
          "at": NOW.isoformat()}],
    )
    records, diagnostics = ingest_feedback(path, board)
    assert len(records) == 1
    assert diagnostics == []
    assert board.get(f"/feedback/{rec.id}") is not None
    assert board.get(rec.blackboard_key()).value["status"] == STATUS_APPROVED


def test_unknown_rec_skipped_others_processed(board, tmp_path):
    rec = seed_rec(board, make_rec())
    path = write_json(
        tmp_path / "fb.json",
        [
            {"rec_id": "ghost", "action": "approved", "actor": "a", "at": NOW.isoformat()},
            {"rec_id": rec.id, "action": "rejected", "actor": "a", "at": NOW.isoformat()},
        ],
    )
    records, diagnostics = ingest_feedback(path, board)
    assert len(records) == 1
    assert len(diagnostics) == 1
    assert "ghost" in diagnostics[0]
    assert board.get(rec.blackboard_key()).value["status"] == "rejected"


def test_modified_requires_patch(board, tmp_path):
    rec = seed_rec(board, make_rec())
    path = write_json(
        tmp_path / "fb.json",
        [{"rec_id": rec.id, "action": "modified", "actor": "a", "at": NOW.isoformat()}],
    )
    records, diagnostics = ingest_feedback(path, board)
    assert records == []
    assert len(diagnostics) == 1


def test_modified_patch_replaces_patch(board, tmp_path):
    rec = seed_rec(board, make_rec())
    new_patch = [{"resource": "vm-1", "path": "flavor_name", "old": "m1.large", "new": "m1.small"}]
    path = write_json(
        tmp_path / "fb.json",
        [{"rec_id": rec.id, "action": "modified", "actor": "a",
          "at": NOW.isoformat(), "modified_patch": new_patch}],
    )
    records, _ = ingest_feedback(path, board)
    assert len(records) == 1
    stored = board.get(rec.blackboard_key()).value
    assert stored["status"] == "modified"
    assert stored["patch"] == new_patch


def test_feedback_on_pending_rec_rejected_as_invalid_transition(board, tmp_path):
    rec = seed_rec(board, make_rec(status="pending"))
    path = write_json(
        tmp_path / "fb.json",
        [{"rec_id": rec.id, "action": "approved", "actor": "a", "at": NOW.isoformat()}],
    )
    records, diagnostics = ingest_feedback(path, board)
    assert records == []
    assert "invalid transition" in diagnostics[0]


def test_malformed_feedback_file(board, tmp_path):
    bad = tmp_path / "fb.json"
    bad.write_text("{]")
    with pytest.raises(MalformedRecord):
        ingest_feedback(bad, board)


# -- application ------------------------------------------------------------------

def test_apply_updates_fleet_state(board, tmp_path):
    rec = make_rec(status=STATUS_APPROVED)
    fleet = {("vm", "vm-1"): "m1.large"}
    audit = tmp_path / "audit.log"
    updated = apply_patch(rec, fleet, audit_log=audit, board=board, mode="operator", at=NOW)
    assert updated[("vm", "vm-1")] == "m1.medium"
    assert fleet[("vm", "vm-1")] == "m1.large"  # input not mutated
    entries = [json.loads(line) for line in audit.read_text().splitlines()]
    assert len(entries) == 1
    assert entries[0]["rec_id"] == rec.id
    assert entries[0]["mode"] == "operator"


def test_apply_stale_target(tmp_path):
    rec = make_rec(status=STATUS_APPROVED)
    fleet = {("vm", "vm-1"): "m1.small"}  # drifted out-of-band
    with pytest.raises(StaleTarget):
        apply_patch(rec, fleet, audit_log=tmp_path / "a.log", at=NOW)
    assert not (tmp_path / "a.log").exists()


def test_operator_mode_requires_approval(tmp_path):
    with pytest.raises(ValueError):
        apply_patch(make_rec(status=STATUS_SURFACED), {("vm", "vm-1"): "m1.large"},
                    mode="operator", at=NOW)


def test_auto_mode_full_audit_chain(board, tmp_path):
    """One proposal, one feedback marker, one audit entry, all sharing the
    rec id, for every applied change."""
    rec = seed_rec(board, make_rec())
    artifact = emit_proposal(rec, tmp_path, WINDOW)
    audit = tmp_path / "audit.log"
    fleet = {("vm", "vm-1"): "m1.large"}
    apply_patch(rec, fleet, audit_log=audit, board=board, mode="auto", at=NOW)

    assert artifact.metadata_file.exists()
    marker = board.get(f"/feedback/{rec.id}")
    assert marker is not None
    assert marker.value["action"] == "approved"
    assert marker.value["actor"] == "auto-mode"
    entries = [json.loads(line) for line in audit.read_text().splitlines()]
    assert [e["rec_id"] for e in entries] == [rec.id]
    assert board.get(rec.blackboard_key()).value["status"] == STATUS_APPLIED


def test_feedback_record_validation():
    with pytest.raises(MalformedRecord):
        FeedbackRecord(rec_id="x", action="exploded", actor="a", at=NOW)
    with pytest.raises(MalformedRecord):
        FeedbackRecord(rec_id="x", action="modified", actor="a", at=NOW)
