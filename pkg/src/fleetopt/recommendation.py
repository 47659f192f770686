"""The shared recommendation record and its lifecycle.

Every agent emits :class:`Recommendation` objects: a configuration patch,
a per-objective impact vector, a rationale citing the statistics it rests
on, and evidence references (blackboard key@version pairs) that let an
auditor reconstruct the decision. Status moves only along
pending -> surfaced -> {approved -> applied, rejected, modified -> applied}.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

OBJECTIVES = ("reliability", "performance", "security", "cost", "sustainability")

STATUS_PENDING = "pending"
STATUS_SURFACED = "surfaced"
STATUS_APPROVED = "approved"
STATUS_REJECTED = "rejected"
STATUS_MODIFIED = "modified"
STATUS_APPLIED = "applied"

VALID_TRANSITIONS = {
    STATUS_PENDING: {STATUS_SURFACED},
    STATUS_SURFACED: {STATUS_APPROVED, STATUS_REJECTED, STATUS_MODIFIED},
    STATUS_APPROVED: {STATUS_APPLIED},
    STATUS_MODIFIED: {STATUS_APPLIED},
    STATUS_REJECTED: set(),
    STATUS_APPLIED: set(),
}

RECOMMENDATION_PREFIX = "/recommendations"


def can_transition(current: str, nxt: str) -> bool:
    return nxt in VALID_TRANSITIONS.get(current, set())


@dataclass(frozen=True)
class ImpactVector:
    """Per-objective projected deltas as signed fractions of cluster
    capacity; positive means improvement."""

    reliability: float = 0.0
    performance: float = 0.0
    security: float = 0.0
    cost: float = 0.0
    sustainability: float = 0.0

    def __post_init__(self):
        for name in OBJECTIVES:
            v = getattr(self, name)
            if not -1.0 <= v <= 1.0:
                raise ValueError(f"impact component {name}={v} outside [-1, 1]")

    def component(self, objective: str) -> float:
        return getattr(self, objective)

    def to_doc(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_doc(cls, doc: dict) -> "ImpactVector":
        return cls(**{k: doc.get(k, 0.0) for k in OBJECTIVES})


@dataclass(frozen=True)
class EvidenceRef:
    """A blackboard citation: this key at this version backs the claim."""

    key: str
    version: int

    def to_doc(self) -> dict:
        return {"key": self.key, "version": self.version}

    @classmethod
    def from_doc(cls, doc: dict) -> "EvidenceRef":
        return cls(key=doc["key"], version=doc["version"])

    def __str__(self) -> str:
        return f"{self.key}@{self.version}"


@dataclass
class Recommendation:
    """A versioned, evidence-backed change proposal."""

    id: str
    agent: str
    handle_doc: dict                 # serialized ResourceHandle
    current_flavor: str
    proposed_flavor: str
    patch: list[dict]                # field-delta documents (see workflow docs)
    impact: ImpactVector
    rationale: str
    evidence: list[EvidenceRef]
    status: str = STATUS_PENDING
    version: int = 1
    extras: dict = field(default_factory=dict)  # agent-specific payload

    @property
    def resource_key(self) -> tuple[str, str]:
        return (self.handle_doc["platform"], self.handle_doc["id"])

    def blackboard_key(self) -> str:
        return f"{RECOMMENDATION_PREFIX}/{self.agent}/{self.id}"

    def with_status(self, status: str) -> "Recommendation":
        if not can_transition(self.status, status):
            raise ValueError(f"invalid status transition {self.status} -> {status}")
        return dataclasses.replace(self, status=status, version=self.version + 1)

    def to_doc(self) -> dict:
        return {
            "id": self.id,
            "agent": self.agent,
            "handle": dict(self.handle_doc),
            "current_flavor": self.current_flavor,
            "proposed_flavor": self.proposed_flavor,
            "patch": [dict(p) for p in self.patch],
            "impact": self.impact.to_doc(),
            "rationale": self.rationale,
            "evidence": [e.to_doc() for e in self.evidence],
            "status": self.status,
            "version": self.version,
            "extras": dict(self.extras),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Recommendation":
        return cls(
            id=doc["id"],
            agent=doc["agent"],
            handle_doc=dict(doc["handle"]),
            current_flavor=doc["current_flavor"],
            proposed_flavor=doc["proposed_flavor"],
            patch=[dict(p) for p in doc["patch"]],
            impact=ImpactVector.from_doc(doc["impact"]),
            rationale=doc["rationale"],
            evidence=[EvidenceRef.from_doc(e) for e in doc["evidence"]],
            status=doc["status"],
            version=doc["version"],
            extras=dict(doc.get("extras", {})),
        )


def content_id(*parts) -> str:
    """Stable 16-hex-digit id from the canonical JSON of the parts."""
    blob = json.dumps(parts, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]
