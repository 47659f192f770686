"""Proposal emission, operator feedback, and patch application.

Surfaced recommendations become merge-request-style artifacts in a plain
directory tree an external bot could push to a forge:

    proposals/<window-id>/<rec-id>/
        patch.json      the configuration delta (resource, path, old, new)
        summary.md      human-readable rationale, evidence links, impact
        metadata.json   machine-readable mirror that round-trips to the
                        Recommendation

Emission is atomic (temp directory + rename): a killed emit leaves either
nothing or a complete proposal. Window ids are ISO weeks (e.g. 2024-W31),
matching the weekly reporting cadence.

Feedback files are JSON lists of ``{"rec_id", "action", "actor", "at",
"modified_patch"?}``; each valid record is versioned under
``/feedback/<rec-id>`` and the recommendation's status is updated. Applied
changes append one JSON line per change to an audit log, so every applied
change has exactly one proposal, one feedback record (or auto-mode marker),
and one audit entry sharing its rec_id.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import tempfile
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .blackboard import Blackboard
from .errors import DuplicateProposal, MalformedRecord, StaleTarget, UnknownRecommendation
from .observer import _iso, _parse_ts, cas_put
from .recommendation import (
    OBJECTIVES,
    Recommendation,
    STATUS_APPLIED,
    STATUS_APPROVED,
    STATUS_MODIFIED,
    STATUS_SURFACED,
    can_transition,
)

log = logging.getLogger(__name__)

FEEDBACK_ACTIONS = ("approved", "rejected", "modified")
FEEDBACK_PREFIX = "/feedback"
AUDIT_LOG_NAME = "audit.log"


def window_id(now: datetime) -> str:
    """ISO-week window id, e.g. 2024-W31."""
    year, week, _ = now.isocalendar()
    return f"{year}-W{week:02d}"


@dataclass(frozen=True)
class ProposalArtifact:
    rec_id: str
    directory: Path
    patch_file: Path
    summary_file: Path
    metadata_file: Path


@dataclass(frozen=True)
class FeedbackRecord:
    rec_id: str
    action: str
    actor: str
    at: datetime
    modified_patch: list[dict] | None = None

    def __post_init__(self):
        if self.action not in FEEDBACK_ACTIONS:
            raise MalformedRecord(f"unknown feedback action {self.action!r}")
        if self.action == "modified" and not self.modified_patch:
            raise MalformedRecord("modified feedback requires modified_patch")

    def to_doc(self) -> dict:
        doc = {
            "rec_id": self.rec_id,
            "action": self.action,
            "actor": self.actor,
            "at": _iso(self.at),
        }
        if self.modified_patch is not None:
            doc["modified_patch"] = [dict(p) for p in self.modified_patch]
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "FeedbackRecord":
        try:
            return cls(
                rec_id=doc["rec_id"],
                action=doc["action"],
                actor=doc.get("actor", ""),
                at=_parse_ts(doc["at"]),
                modified_patch=doc.get("modified_patch"),
            )
        except KeyError as exc:
            raise MalformedRecord(f"feedback record missing field {exc}") from None


# -- emission -------------------------------------------------------------------

def emit_proposal(
    rec: Recommendation, repo_root: str | Path, window: str
) -> ProposalArtifact:
    """Write the three-file proposal bundle for a surfaced recommendation.

    Re-emitting the same rec id in the same window is a no-op (the existing
    bundle is returned and a DuplicateProposal diagnostic logged).
    """
    if rec.status != STATUS_SURFACED:
        raise ValueError(f"only surfaced recommendations are emitted, got {rec.status!r}")
    window_dir = Path(repo_root) / "proposals" / window
    window_dir.mkdir(parents=True, exist_ok=True)
    final_dir = window_dir / rec.id
    artifact = ProposalArtifact(
        rec_id=rec.id,
        directory=final_dir,
        patch_file=final_dir / "patch.json",
        summary_file=final_dir / "summary.md",
        metadata_file=final_dir / "metadata.json",
    )
    if final_dir.exists():
        log.info("%s", DuplicateProposal(f"proposal {rec.id} already emitted in {window}"))
        return artifact

    tmp_dir = Path(tempfile.mkdtemp(prefix=f".{rec.id}.", dir=window_dir))
    try:
        (tmp_dir / "patch.json").write_text(
            json.dumps({"resource": rec.handle_doc["id"], "changes": rec.patch}, indent=2)
            + "\n"
        )
        (tmp_dir / "summary.md").write_text(_render_summary(rec, window))
        (tmp_dir / "metadata.json").write_text(
            json.dumps(
                {
                    "rec_id": rec.id,
                    "agent": rec.agent,
                    "window": window,
                    "status": rec.status,
                    "impact": rec.impact.to_doc(),
                    "recommendation": rec.to_doc(),
                },
                indent=2,
            )
            + "\n"
        )
        os.rename(tmp_dir, final_dir)
    except BaseException:
        # leave no partial proposal behind
        for child in tmp_dir.glob("*"):
            child.unlink()
        tmp_dir.rmdir()
        raise
    return artifact


def _render_summary(rec: Recommendation, window: str) -> str:
    impact_rows = "\n".join(
        f"| {objective} | {rec.impact.component(objective):+.4f} |"
        for objective in OBJECTIVES
    )
    evidence = "\n".join(f"- `{ref}`" for ref in rec.evidence) or "- (none)"
    changes = "\n".join(
        f"- `{p['path']}`: `{p['old']}` -> `{p['new']}`" for p in rec.patch
    )
    extra = ""
    if rec.extras.get("steps"):
        extra = f"\n## Remediation steps\n\n{rec.extras['steps']}\n"
    doc_excerpt = rec.extras.get("doc_excerpt")
    if doc_excerpt:
        extra += f"\n## Documentation excerpt\n\n{doc_excerpt}\n"
    return (
        f"# Change proposal {rec.id}\n\n"
        f"- Agent: {rec.agent}\n"
        f"- Window: {window}\n"
        f"- Resource: {rec.handle_doc['platform']}/{rec.handle_doc['id']}\n"
        f"- Change: {rec.current_flavor or '-'} -> {rec.proposed_flavor or '-'}\n\n"
        f"## Rationale\n\n{rec.rationale}\n\n"
        f"## Projected impact (fraction of cluster capacity)\n\n"
        f"| objective | delta |\n|---|---|\n{impact_rows}\n\n"
        f"## Changes\n\n{changes}\n\n"
        f"## Evidence\n\n{evidence}\n"
        f"{extra}"
    )


# -- feedback -------------------------------------------------------------------

STATUS_BY_ACTION = {
    "approved": STATUS_APPROVED,
    "rejected": "rejected",
    "modified": STATUS_MODIFIED,
}


def ingest_feedback(
    source: str | Path, board: Blackboard
) -> tuple[list[FeedbackRecord], list[str]]:
    """Validate and persist operator feedback; returns (records, diagnostics).

    Unknown recommendation ids and malformed records are skipped with a
    diagnostic; the rest are processed. Valid feedback is written under
    /feedback/<rec-id> and the recommendation status updated accordingly.
    """
    path = Path(source)
    try:
        rows = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedRecord(f"cannot parse feedback file {path}: {exc}") from None
    if not isinstance(rows, list):
        raise MalformedRecord(f"feedback file {path} must be a JSON list")

    accepted: list[FeedbackRecord] = []
    diagnostics: list[str] = []
    for i, row in enumerate(rows):
        try:
            record = FeedbackRecord.from_doc(row)
        except MalformedRecord as exc:
            diagnostics.append(f"record {i}: {exc}")
            continue
        rec_key = _find_recommendation_key(board, record.rec_id)
        if rec_key is None:
            diagnostics.append(
                f"record {i}: {UnknownRecommendation(f'no recommendation {record.rec_id}')}"
            )
            continue
        rec = Recommendation.from_doc(board.get(rec_key).value)
        new_status = STATUS_BY_ACTION[record.action]
        if not can_transition(rec.status, new_status):
            diagnostics.append(
                f"record {i}: invalid transition {rec.status} -> {new_status} "
                f"for {record.rec_id}"
            )
            continue
        cas_put(board, f"{FEEDBACK_PREFIX}/{record.rec_id}", record.to_doc())
        updated = rec.with_status(new_status)
        if record.action == "modified" and record.modified_patch:
            updated = dataclasses.replace(
                updated, patch=[dict(p) for p in record.modified_patch]
            )
        cas_put(board, updated.blackboard_key(), updated.to_doc())
        accepted.append(record)
    return accepted, diagnostics


def _find_recommendation_key(board: Blackboard, rec_id: str) -> str | None:
    for agent in ("rightsizing", "security"):
        key = f"/recommendations/{agent}/{rec_id}"
        if board.get(key) is not None:
            return key
    # fall back to a prefix scan for third-party agents
    for record in board.list_prefix("/recommendations/"):
        if record.value.get("id") == rec_id:
            return record.key
    return None


# -- application ----------------------------------------------------------------

def apply_patch(
    rec: Recommendation,
    fleet_state: dict[tuple[str, str], str],
    audit_log: str | Path | None = None,
    board: Blackboard | None = None,
    mode: str = "operator",
    at: datetime | None = None,
) -> dict[tuple[str, str], str]:
    """Apply an approved (or auto-mode) recommendation to the fleet state.

    ``fleet_state`` maps (platform, id) -> flavor name and is returned
    updated (a new dict). A resource whose live flavor drifted from the
    recommendation's recorded current flavor raises StaleTarget and nothing
    changes. The change is appended to the audit log and, when a blackboard
    is given, the recommendation moves to applied (auto mode also writes the
    auto-approval marker under /feedback/).
    """
    if mode not in ("operator", "auto"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "operator" and rec.status not in (STATUS_APPROVED, STATUS_MODIFIED):
        raise ValueError(f"operator mode applies approved/modified recs, got {rec.status!r}")

    key = rec.resource_key
    if rec.current_flavor:
        live = fleet_state.get(key)
        if live != rec.current_flavor:
            raise StaleTarget(
                f"resource {key} is on {live!r}, recommendation expects "
                f"{rec.current_flavor!r}; invalidated"
            )
    updated_state = dict(fleet_state)
    if rec.proposed_flavor:
        updated_state[key] = rec.proposed_flavor

    if at is None:
        at = datetime.now(timezone.utc)
    if audit_log is not None:
        entry = {
            "rec_id": rec.id,
            "agent": rec.agent,
            "resource": list(key),
            "old": rec.current_flavor,
            "new": rec.proposed_flavor,
            "mode": mode,
            "at": _iso(at),
        }
        with open(audit_log, "a") as fh:
            fh.write(json.dumps(entry, separators=(",", ":")) + "\n")

    if board is not None:
        current = rec
        if mode == "auto":
            if current.status == "pending":
                current = current.with_status(STATUS_SURFACED)
                cas_put(board, current.blackboard_key(), current.to_doc())
            if current.status == STATUS_SURFACED:
                marker = FeedbackRecord(
                    rec_id=rec.id, action="approved", actor="auto-mode", at=at
                )
                cas_put(board, f"{FEEDBACK_PREFIX}/{rec.id}", marker.to_doc())
                current = current.with_status(STATUS_APPROVED)
                cas_put(board, current.blackboard_key(), current.to_doc())
        applied = current.with_status(STATUS_APPLIED)
        cas_put(board, applied.blackboard_key(), applied.to_doc())
    return updated_state
