"""The security agent: scan parsing, prompt construction, remediation.

Scan reports arrive as a JSON document mirroring a scanner's output:
``{"scan_id", "scanned_at", "results": [{"check_name", "status",
"resource_name", "resource_kind", "namespace", "severity", "doc_link",
"remediation_hint"}, ...]}``. Failed checks become versioned observations
under ``/observations/security/<scan_id>/<digest>``.

Remediation steps come from a pluggable text-generation client behind a
single documented endpoint contract: request ``{"prompt": <text>}``,
response ``{"text": <text>}``. :class:`StubTextClient` is the deterministic
reference implementation; :class:`HttpTextClient` speaks the same wire
format over HTTP. Client failures and timeouts degrade to the observation's
remediation hint — no failed check ever yields empty guidance.

Documentation excerpts are read from a local doc store: a directory mapping
``sha256(doc_link)[:16] + ".txt"`` to extracted text.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import urllib.request
from concurrent.futures import ThreadPoolExecutor, TimeoutError as FutureTimeout
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path
from typing import Protocol

from .blackboard import Blackboard
from .errors import ClientError, GenerationTimeout, ParseError
from .observer import _iso, _parse_ts, cas_put
from .recommendation import EvidenceRef, ImpactVector, Recommendation, content_id
from .rightsizing import rejected_ids_in_window

log = logging.getLogger(__name__)

AGENT_NAME = "security"

SECURITY_OBSERVATION_PREFIX = "/observations/security"
CURSOR_KEY = "/agents/security/cursor"

SEVERITIES = ("low", "medium", "high", "critical")

# Impact magnitude on the security objective per severity (configurable).
SEVERITY_IMPACT = {"low": 0.1, "medium": 0.3, "high": 0.6, "critical": 1.0}

PROMPT_HEADER = (
    "I did run a kubescape scan and it identified the following problem. "
    "Please give me a step by step guide on how to resolve this:"
)

DEFAULT_CLIENT_TIMEOUT = timedelta(seconds=30)
MAX_INFLIGHT = 4


@dataclass(frozen=True)
class SecurityObservation:
    """One failed compliance check from one scan."""

    check_name: str
    resource_name: str
    resource_kind: str
    namespace: str
    severity: str
    doc_link: str
    remediation_hint: str
    scanned_at: datetime
    scan_id: str

    def __post_init__(self):
        if not self.check_name or not self.resource_name:
            raise ParseError("check_name and resource_name must be non-empty")
        if self.severity not in SEVERITIES:
            raise ParseError(f"unknown severity {self.severity!r}")

    @property
    def identity(self) -> tuple:
        return (
            self.scan_id,
            self.check_name,
            self.resource_kind,
            self.resource_name,
            self.namespace,
        )

    def blackboard_key(self) -> str:
        digest = hashlib.sha256(
            json.dumps(self.identity, separators=(",", ":")).encode()
        ).hexdigest()[:12]
        return f"{SECURITY_OBSERVATION_PREFIX}/{self.scan_id}/{digest}"

    def to_doc(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["scanned_at"] = _iso(self.scanned_at)
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "SecurityObservation":
        doc = dict(doc)
        doc["scanned_at"] = _parse_ts(doc["scanned_at"])
        return cls(**doc)


def parse_scan_report(source: str | Path) -> list[SecurityObservation]:
    """Extract failed checks from a scan report; passing checks are ignored
    and duplicate failed-check tuples collapse to one (with a log line)."""
    path = Path(source)
    try:
        doc = json.loads(path.read_text())
        scan_id = doc["scan_id"]
        scanned_at = _parse_ts(doc["scanned_at"])
        results = doc["results"]
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ParseError(f"cannot parse scan report {path}: {exc}") from None
    observations: list[SecurityObservation] = []
    seen: set[tuple] = set()
    for i, row in enumerate(results):
        try:
            status = row["status"]
            if status not in ("passed", "failed"):
                raise ParseError(f"unknown status {status!r}")
            if status == "passed":
                continue
            obs = SecurityObservation(
                check_name=row["check_name"],
                resource_name=row["resource_name"],
                resource_kind=row.get("resource_kind", ""),
                namespace=row.get("namespace", ""),
                severity=row.get("severity", "medium"),
                doc_link=row.get("doc_link", ""),
                remediation_hint=row.get("remediation_hint", ""),
                scanned_at=scanned_at,
                scan_id=scan_id,
            )
        except (KeyError, TypeError) as exc:
            raise ParseError(f"scan report {path} result {i}: missing field {exc}") from None
        if obs.identity in seen:
            log.warning("scan %s: duplicate failed check %s collapsed", scan_id, obs.identity)
            continue
        seen.add(obs.identity)
        observations.append(obs)
    return observations


def post_security_observations(
    board: Blackboard, observations: list[SecurityObservation]
) -> int:
    n = 0
    for obs in observations:
        cas_put(board, obs.blackboard_key(), obs.to_doc())
        n += 1
    return n


# -- prompt and generation -----------------------------------------------------

def build_prompt(obs: SecurityObservation, doc_text: str | None = None) -> str:
    """Byte-deterministic remediation prompt: the fixed instruction, the
    observation serialized as JSON, then the documentation text if any."""
    body = json.dumps(obs.to_doc(), indent=2, sort_keys=True)
    prompt = f"{PROMPT_HEADER}\n\n{body}"
    if doc_text:
        prompt = f"{prompt}\n\n{doc_text}"
    return prompt


class TextGenerationClient(Protocol):
    def generate(self, prompt: str) -> str:
        """Return generated text for the prompt; may raise ClientError."""
        ...


class StubTextClient:
    """Deterministic reference client: answers with a canned guide keyed by
    the check_name found in the prompt's serialized observation."""

    def __init__(self, guides: dict[str, str] | None = None):
        self.guides = dict(guides or {})
        self.calls = 0

    def generate(self, prompt: str) -> str:
        self.calls += 1
        check_name = ""
        for line in prompt.splitlines():
            stripped = line.strip()
            if stripped.startswith('"check_name":'):
                check_name = stripped.split(":", 1)[1].strip().strip(',').strip('"')
                break
        if check_name in self.guides:
            return self.guides[check_name]
        if not check_name:
            raise ClientError("prompt carries no check_name")
        return (
            f"Step 1: review the failed check '{check_name}' in the linked "
            f"documentation.\nStep 2: apply the remediation hint to the "
            f"affected resource.\nStep 3: re-run the scan to confirm the "
            f"check passes."
        )


class HttpTextClient:
    """Client for the documented HTTP endpoint: POST {"prompt": ...} ->
    {"text": ...}. Network errors surface as ClientError."""

    def __init__(self, endpoint: str, request_timeout: float = 30.0):
        self.endpoint = endpoint
        self.request_timeout = request_timeout

    def generate(self, prompt: str) -> str:
        payload = json.dumps({"prompt": prompt}).encode("utf-8")
        req = urllib.request.Request(
            self.endpoint, data=payload, headers={"Content-Type": "application/json"}
        )
        try:
            with urllib.request.urlopen(req, timeout=self.request_timeout) as resp:
                body = json.loads(resp.read().decode("utf-8"))
        except Exception as exc:
            raise ClientError(f"text endpoint failed: {exc}") from None
        text = body.get("text")
        if not isinstance(text, str):
            raise ClientError("text endpoint response lacks a 'text' field")
        return text


def generate_remediation(
    prompt: str,
    client: TextGenerationClient,
    timeout: timedelta = DEFAULT_CLIENT_TIMEOUT,
) -> str:
    """Invoke the client under a strict timeout. Returns "" on timeout,
    client error, or empty output — the caller substitutes the observation's
    remediation hint ("fallback totality")."""
    pool = ThreadPoolExecutor(max_workers=1)
    future = pool.submit(client.generate, prompt)
    try:
        text = future.result(timeout=timeout.total_seconds())
    except FutureTimeout:
        log.warning("remediation generation timed out after %s", timeout)
        return ""
    except ClientError as exc:
        log.warning("remediation generation failed: %s", exc)
        return ""
    except Exception as exc:
        log.warning("remediation generation failed: %s: %s", type(exc).__name__, exc)
        return ""
    finally:
        # a timed-out client thread is abandoned, not awaited
        pool.shutdown(wait=False, cancel_futures=True)
    if not text or not text.strip():
        return ""
    return text


# -- doc store ------------------------------------------------------------------

def doc_store_filename(doc_link: str) -> str:
    return hashlib.sha256(doc_link.encode("utf-8")).hexdigest()[:16] + ".txt"


def lookup_doc(doc_store: str | Path | None, doc_link: str) -> str | None:
    if not doc_store or not doc_link:
        return None
    path = Path(doc_store) / doc_store_filename(doc_link)
    if not path.exists():
        return None
    return path.read_text()


# -- end-to-end agent pass -------------------------------------------------------

def recommend_security(
    board: Blackboard,
    doc_store: str | Path | None,
    client: TextGenerationClient,
    timeout: timedelta = DEFAULT_CLIENT_TIMEOUT,
    severity_impact: dict[str, float] | None = None,
    max_inflight: int = MAX_INFLIGHT,
    reporting_window: timedelta = timedelta(days=7),
) -> list[Recommendation]:
    """Process every security observation newer than the agent's cursor into
    a remediation recommendation; advances the cursor afterwards.

    Per-observation failures degrade (hint fallback) or become log
    diagnostics; rejected-in-window checks are suppressed.
    """
    severity_impact = severity_impact or SEVERITY_IMPACT
    cursor_rec = board.get(CURSOR_KEY)
    cursor = cursor_rec.value["revision"] if cursor_rec else 0

    new_records = [
        r
        for r in board.changes_since(cursor)
        if r.key.startswith(SECURITY_OBSERVATION_PREFIX + "/")
    ]
    head = board.store_revision
    if not new_records:
        _advance_cursor(board, head)
        return []

    observations = [(r, SecurityObservation.from_doc(r.value)) for r in new_records]
    latest_scan = max(obs.scanned_at for _, obs in observations)
    rejected = rejected_ids_in_window(board, latest_scan, reporting_window)

    prompts: list[str] = []
    for _, obs in observations:
        doc_text = lookup_doc(doc_store, obs.doc_link)
        prompts.append(build_prompt(obs, doc_text))

    # bounded concurrent generation, results kept in input order
    with ThreadPoolExecutor(max_workers=max_inflight) as pool:
        steps = list(
            pool.map(lambda p: generate_remediation(p, client, timeout), prompts)
        )

    recs: list[Recommendation] = []
    for (record, obs), prompt, generated in zip(observations, prompts, steps):
        fallback_used = not generated
        text = generated or obs.remediation_hint or (
            f"Review check '{obs.check_name}' on {obs.resource_kind} "
            f"{obs.resource_name}; no generated guidance available."
        )
        iso_week = "{}-W{:02d}".format(*obs.scanned_at.isocalendar()[:2])
        rec_id = content_id(AGENT_NAME, *obs.identity[1:], iso_week)
        if rec_id in rejected:
            log.info("security check %s suppressed: rejected in window", obs.check_name)
            continue
        existing = board.get(f"/recommendations/{AGENT_NAME}/{rec_id}")
        if existing is not None:
            recs.append(Recommendation.from_doc(existing.value))
            continue
        doc_text = lookup_doc(doc_store, obs.doc_link)
        platform = "vm" if obs.resource_kind.lower() == "virtualmachine" else "container"
        rationale = (
            f"Remediate failed check '{obs.check_name}' ({obs.severity}) on "
            f"{obs.resource_kind or 'resource'} {obs.resource_name} in namespace "
            f"{obs.namespace or '-'} (scan {obs.scan_id}). "
            f"Documentation: {obs.doc_link or 'none'}."
            + (" Generated guidance unavailable; remediation hint used." if fallback_used else "")
        )
        rec = Recommendation(
            id=rec_id,
            agent=AGENT_NAME,
            handle_doc={
                "platform": platform,
                "id": obs.resource_name,
                "project": obs.namespace,
                "owner": "",
                "flavor_name": "",
                "labels": {"resource_kind": obs.resource_kind},
            },
            current_flavor="",
            proposed_flavor="",
            patch=[
                {
                    "resource": obs.resource_name,
                    "path": f"compliance/{obs.check_name}",
                    "old": "failed",
                    "new": "remediated",
                }
            ],
            impact=ImpactVector(security=severity_impact.get(obs.severity, 0.3)),
            rationale=rationale,
            evidence=[EvidenceRef(key=record.key, version=record.version)],
            extras={
                "steps": text,
                "doc_excerpt": doc_text or "",
                "severity": obs.severity,
                "scan_id": obs.scan_id,
                "fallback_used": fallback_used,
            },
        )
        cas_put(board, rec.blackboard_key(), rec.to_doc())
        recs.append(rec)

    _advance_cursor(board, head)
    return recs


def _advance_cursor(board: Blackboard, revision: int) -> None:
    cas_put(board, CURSOR_KEY, {"revision": revision})
