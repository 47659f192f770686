"""Inventory/telemetry ingestion and versioned utilization observations.

File-based adapters stand in for live platform APIs but produce the same
normalized record model:

* inventory: a JSON document — a list of resource objects with fields
  ``platform`` ("vm" | "container"), ``id``, ``project``, ``owner``,
  ``flavor_name`` and optional ``labels`` (string map);
* telemetry: header-described CSV with columns ``resource_id, timestamp,
  cpu_used, mem_used, cpu_request, mem_request, cpu_limit, mem_limit``.
  Timestamps are ISO-8601 UTC; a limit of 0 means "unset". Rows for one
  resource must be strictly increasing in time.

Observations aggregate one resource's samples over a rolling window (closed
at the old edge) and are CAS-written to the blackboard under
``/observations/utilization/<platform>/<id>``. The stored document keeps the
samples columnar (parallel arrays) to stay compact at fleet scale.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable

from .blackboard import Blackboard
from .errors import (
    DuplicateResource,
    EmptyWindow,
    NonMonotonicTimestamps,
    ParseError,
    UnknownResource,
    VersionConflict,
)

log = logging.getLogger(__name__)

PLATFORMS = ("vm", "container")
DEFAULT_SAMPLING_PERIOD = timedelta(minutes=5)
DEFAULT_WINDOW = timedelta(days=7)

TELEMETRY_COLUMNS = (
    "resource_id",
    "timestamp",
    "cpu_used",
    "mem_used",
    "cpu_request",
    "mem_request",
    "cpu_limit",
    "mem_limit",
)

OBSERVATION_PREFIX = "/observations/utilization"
CLUSTER_METRICS_KEY = "/metrics/cluster"

CAS_RETRIES = 8


@dataclass(frozen=True)
class ResourceHandle:
    """Identity and context of one fleet resource. (platform, id) is the
    fleet-unique key; labels carry free-form metadata (image, instance ids)."""

    platform: str
    id: str
    project: str
    owner: str
    flavor_name: str
    labels: dict[str, str] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.platform not in PLATFORMS:
            raise ParseError(f"unknown platform {self.platform!r} for resource {self.id!r}")
        if not self.id:
            raise ParseError("resource id must be non-empty")

    @property
    def fleet_key(self) -> tuple[str, str]:
        return (self.platform, self.id)

    def to_doc(self) -> dict:
        return {
            "platform": self.platform,
            "id": self.id,
            "project": self.project,
            "owner": self.owner,
            "flavor_name": self.flavor_name,
            "labels": dict(self.labels),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "ResourceHandle":
        return cls(
            platform=doc["platform"],
            id=doc["id"],
            project=doc.get("project", ""),
            owner=doc.get("owner", ""),
            flavor_name=doc.get("flavor_name", ""),
            labels=dict(doc.get("labels", {})),
        )


@dataclass(frozen=True)
class TelemetrySample:
    at: datetime
    cpu_used: float
    mem_used: float
    cpu_request: float = 0.0
    mem_request: float = 0.0
    cpu_limit: float = 0.0  # 0 = unset
    mem_limit: float = 0.0  # 0 = unset


@dataclass(frozen=True)
class UtilizationObservation:
    """One resource's telemetry window, ready for the rightsizing agent."""

    handle: ResourceHandle
    window_start: datetime
    window_end: datetime
    samples: tuple[TelemetrySample, ...]
    sampling_period: timedelta = DEFAULT_SAMPLING_PERIOD

    def to_doc(self) -> dict:
        return {
            "handle": self.handle.to_doc(),
            "window_start": _iso(self.window_start),
            "window_end": _iso(self.window_end),
            "sampling_period_s": self.sampling_period.total_seconds(),
            "samples": {
                "at": [_iso(s.at) for s in self.samples],
                "cpu_used": [s.cpu_used for s in self.samples],
                "mem_used": [s.mem_used for s in self.samples],
                "cpu_request": [s.cpu_request for s in self.samples],
                "mem_request": [s.mem_request for s in self.samples],
                "cpu_limit": [s.cpu_limit for s in self.samples],
                "mem_limit": [s.mem_limit for s in self.samples],
            },
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "UtilizationObservation":
        cols = doc["samples"]
        samples = tuple(
            TelemetrySample(
                at=_parse_ts(cols["at"][i]),
                cpu_used=cols["cpu_used"][i],
                mem_used=cols["mem_used"][i],
                cpu_request=cols["cpu_request"][i],
                mem_request=cols["mem_request"][i],
                cpu_limit=cols["cpu_limit"][i],
                mem_limit=cols["mem_limit"][i],
            )
            for i in range(len(cols["at"]))
        )
        return cls(
            handle=ResourceHandle.from_doc(doc["handle"]),
            window_start=_parse_ts(doc["window_start"]),
            window_end=_parse_ts(doc["window_end"]),
            samples=samples,
            sampling_period=timedelta(seconds=doc["sampling_period_s"]),
        )


def _iso(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def _parse_ts(text: str) -> datetime:
    try:
        ts = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError as exc:
        raise ParseError(f"bad timestamp {text!r}: {exc}") from None
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


# -- ingestion ----------------------------------------------------------------

def ingest_inventory(source: str | Path) -> list[ResourceHandle]:
    """Parse an inventory document into handles; duplicates are rejected."""
    path = Path(source)
    try:
        rows = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot parse inventory {path}: {exc}") from None
    if not isinstance(rows, list):
        raise ParseError(f"inventory {path} must be a JSON list of resources")
    handles: list[ResourceHandle] = []
    seen: set[tuple[str, str]] = set()
    for i, row in enumerate(rows):
        try:
            handle = ResourceHandle.from_doc(row)
        except (KeyError, TypeError) as exc:
            raise ParseError(f"inventory {path} record {i}: missing field {exc}") from None
        if handle.fleet_key in seen:
            raise DuplicateResource(
                f"inventory {path} record {i}: duplicate resource {handle.fleet_key}"
            )
        seen.add(handle.fleet_key)
        handles.append(handle)
    return handles


def ingest_telemetry(
    source: str | Path, handles: Iterable[ResourceHandle]
) -> dict[ResourceHandle, list[TelemetrySample]]:
    """Parse a telemetry CSV, grouping samples per handle in time order.

    Every referenced resource must exist in ``handles``; per-resource
    timestamps must be strictly increasing in file order.
    """
    path = Path(source)
    by_id = {h.id: h for h in handles}
    out: dict[ResourceHandle, list[TelemetrySample]] = {h: [] for h in handles}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(TELEMETRY_COLUMNS) - set(reader.fieldnames):
            raise ParseError(
                f"telemetry {path}: header must contain {', '.join(TELEMETRY_COLUMNS)}"
            )
        for lineno, row in enumerate(reader, start=2):
            rid = row["resource_id"]
            handle = by_id.get(rid)
            if handle is None:
                raise UnknownResource(f"telemetry {path} line {lineno}: unknown resource {rid!r}")
            try:
                sample = TelemetrySample(
                    at=_parse_ts(row["timestamp"]),
                    cpu_used=float(row["cpu_used"]),
                    mem_used=float(row["mem_used"]),
                    cpu_request=float(row["cpu_request"]),
                    mem_request=float(row["mem_request"]),
                    cpu_limit=float(row["cpu_limit"]),
                    mem_limit=float(row["mem_limit"]),
                )
            except (ValueError, ParseError) as exc:
                raise ParseError(f"telemetry {path} line {lineno}: {exc}") from None
            bucket = out[handle]
            if bucket and sample.at <= bucket[-1].at:
                raise NonMonotonicTimestamps(
                    f"telemetry {path} line {lineno}: timestamp {_iso(sample.at)} "
                    f"not after {_iso(bucket[-1].at)} for resource {rid!r}"
                )
            bucket.append(sample)
    return out


def build_observation(
    handle: ResourceHandle,
    samples: list[TelemetrySample],
    window: timedelta = DEFAULT_WINDOW,
    now: datetime | None = None,
    sampling_period: timedelta = DEFAULT_SAMPLING_PERIOD,
) -> UtilizationObservation:
    """Trim samples to [now - window, now] (closed at the old edge) and wrap
    them in an observation. ``now`` defaults to the last sample's timestamp.

    Raises EmptyWindow when no samples survive — the resource is skipped,
    not fatal.
    """
    if not samples:
        raise EmptyWindow(f"no samples at all for {handle.fleet_key}")
    if now is None:
        now = samples[-1].at
    start = now - window
    inside = [s for s in samples if start <= s.at <= now]
    if not inside:
        raise EmptyWindow(
            f"no samples within {window} of {_iso(now)} for {handle.fleet_key}"
        )
    return UtilizationObservation(
        handle=handle,
        window_start=start,
        window_end=now,
        samples=tuple(inside),
        sampling_period=sampling_period,
    )


def observation_key(handle: ResourceHandle) -> str:
    return f"{OBSERVATION_PREFIX}/{handle.platform}/{handle.id}"


def post_observations(
    board: Blackboard, observations: Iterable[UtilizationObservation]
) -> int:
    """CAS-write each observation under its resource key; returns the count.

    Each write retries a bounded number of times on version conflicts
    (re-reading the current version) before propagating the conflict.
    """
    n = 0
    for obs in observations:
        key = observation_key(obs.handle)
        cas_put(board, key, obs.to_doc())
        n += 1
    return n


def cas_put(board: Blackboard, key: str, value) -> tuple[int, int]:
    """put() with bounded retry against concurrent writers."""
    for _ in range(CAS_RETRIES):
        current = board.get(key)
        expected = current.version if current else 0
        try:
            return board.put(key, value, expected_version=expected)
        except VersionConflict:
            continue
    # final attempt propagates the conflict
    current = board.get(key)
    expected = current.version if current else 0
    return board.put(key, value, expected_version=expected)


def post_cluster_metrics(board: Blackboard, metrics: dict[str, float]) -> None:
    """Publish cluster-level current metric values under /metrics/cluster
    (consumed by the prioritizer's dynamic weighting)."""
    cas_put(board, CLUSTER_METRICS_KEY, dict(metrics))
