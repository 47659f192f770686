"""Global prioritization, conflict resolution, capping, and sequencing.

All pending recommendations from all agents are scored with a hybrid
static/dynamic weighting over the five objectives (reliability >
performance > security > cost > sustainability by default). Dynamic weights
grow with the distance between each objective's current metric and its
operator target, so actions that close the widest gaps rank first.

Conflicts — multiple recommendations touching the same resource — are
resolved goal-first: the survivor is the one whose dominant objective ranks
highest in the static priority order ("reliability overrides cost" as a
policy family), realized as single-step arbitration rather than a plan
graph. The module never creates or mutates recommendation content; it only
annotates status.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import datetime, timedelta

from .blackboard import Blackboard
from .errors import MissingObjective
from .observer import CLUSTER_METRICS_KEY, _parse_ts, cas_put
from .recommendation import (
    OBJECTIVES,
    RECOMMENDATION_PREFIX,
    Recommendation,
    STATUS_PENDING,
    STATUS_SURFACED,
)

log = logging.getLogger(__name__)

DEFAULT_CAP = 10


@dataclass(frozen=True)
class ObjectiveConfig:
    """Static precedence and weights plus the target/current metric values
    that drive dynamic weighting."""

    static_priority: tuple[str, ...] = OBJECTIVES
    static_weight: dict[str, float] = field(
        default_factory=lambda: {o: w for o, w in zip(OBJECTIVES, (5.0, 4.0, 3.0, 2.0, 1.0))}
    )
    targets: dict[str, float] = field(default_factory=dict)
    current: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if sorted(self.static_priority) != sorted(OBJECTIVES):
            raise MissingObjective(
                f"static_priority must list the five objectives exactly once, "
                f"got {self.static_priority}"
            )
        missing = [o for o in OBJECTIVES if o not in self.static_weight]
        if missing:
            raise MissingObjective(f"static_weight missing objectives: {missing}")
        ordered = [self.static_weight[o] for o in self.static_priority]
        if any(nxt >= prev for prev, nxt in zip(ordered, ordered[1:])):
            raise MissingObjective(
                "static weights must strictly decrease along the priority order"
            )

    def rank(self, objective: str) -> int:
        return self.static_priority.index(objective)

    def to_doc(self) -> dict:
        return {
            "static_priority": list(self.static_priority),
            "static_weight": dict(self.static_weight),
            "targets": dict(self.targets),
            "current": dict(self.current),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "ObjectiveConfig":
        return cls(
            static_priority=tuple(doc.get("static_priority", OBJECTIVES)),
            static_weight={
                k: float(v)
                for k, v in doc.get(
                    "static_weight",
                    {o: w for o, w in zip(OBJECTIVES, (5.0, 4.0, 3.0, 2.0, 1.0))},
                ).items()
            },
            targets={k: float(v) for k, v in doc.get("targets", {}).items()},
            current={k: float(v) for k, v in doc.get("current", {}).items()},
        )


@dataclass
class RankedRecommendation:
    rec: Recommendation
    score: float
    weights_used: dict[str, float]
    conflict_group: str | None = None
    annotation: str = ""


def dynamic_weights(cfg: ObjectiveConfig) -> dict[str, float]:
    """w[o] = static_weight[o] * (1 + d[o]), d = clamp(|target - current| /
    |target|, 0, 1). Objectives without a positive target get d = 0."""
    weights = {}
    for objective in OBJECTIVES:
        if objective not in cfg.static_weight:
            raise MissingObjective(f"no static weight for {objective}")
        target = cfg.targets.get(objective, 0.0)
        current = cfg.current.get(objective)
        if target and current is not None:
            distance = min(max(abs(target - current) / abs(target), 0.0), 1.0)
        else:
            distance = 0.0
        weights[objective] = cfg.static_weight[objective] * (1.0 + distance)
    return weights


def score(rec: Recommendation, weights: dict[str, float]) -> float:
    """Weighted dot product of the impact vector."""
    missing = [o for o in OBJECTIVES if o not in weights]
    if missing:
        raise MissingObjective(f"weights missing objectives: {missing}")
    return sum(weights[o] * rec.impact.component(o) for o in OBJECTIVES)


def dominant_objective(rec: Recommendation, cfg: ObjectiveConfig) -> str:
    """Objective with the largest absolute impact component; ties break by
    static priority order."""
    best = max(
        OBJECTIVES,
        key=lambda o: (abs(rec.impact.component(o)), -cfg.rank(o)),
    )
    return best


def resolve_conflicts(
    ranked: list[RankedRecommendation],
    cfg: ObjectiveConfig = ObjectiveConfig(),
) -> list[RankedRecommendation]:
    """Cluster recommendations by target resource and keep one per cluster.

    The survivor has the dominant objective with the highest static
    priority; within the same dominant objective the higher score wins,
    then the lexicographically smaller id. Losers are annotated
    "deferred: conflict" and dropped from the returned sequence (they stay
    on the blackboard untouched).
    """
    groups: dict[tuple[str, str], list[RankedRecommendation]] = {}
    for item in ranked:
        groups.setdefault(item.rec.resource_key, []).append(item)
    survivors: list[RankedRecommendation] = []
    for resource, members in groups.items():
        group_id = f"{resource[0]}/{resource[1]}"
        if len(members) == 1:
            survivors.append(members[0])
            continue
        for member in members:
            member.conflict_group = group_id
        winner = min(
            members,
            key=lambda m: (
                cfg.rank(dominant_objective(m.rec, cfg)),
                -m.score,
                m.rec.id,
            ),
        )
        for member in members:
            if member is not winner:
                member.annotation = "deferred: conflict"
        survivors.append(winner)
    survivors.sort(key=lambda m: (-m.score, m.rec.id))
    return survivors


def rank_and_cap(
    ranked: list[RankedRecommendation], k: int = DEFAULT_CAP
) -> tuple[list[RankedRecommendation], list[RankedRecommendation]]:
    """Sort by score descending (ties by id) and split at the cap: the first
    k are surfaced, the rest stay pending on the blackboard."""
    ordered = sorted(ranked, key=lambda m: (-m.score, m.rec.id))
    return ordered[:k], ordered[k:]


def suppress_rejected(
    ranked: list[RankedRecommendation],
    feedback: list[dict],
    window: timedelta,
    now: datetime,
) -> list[RankedRecommendation]:
    """Drop recommendations whose id was rejected within the reporting
    window; older rejections do not suppress."""
    cutoff = now - window
    rejected = {
        f["rec_id"]
        for f in feedback
        if f.get("action") == "rejected" and cutoff < _parse_ts(f["at"]) <= now
    }
    return [m for m in ranked if m.rec.id not in rejected]


@dataclass
class StrategizeResult:
    surfaced: list[RankedRecommendation]
    retained: list[RankedRecommendation]
    weights: dict[str, float]


def strategize(
    board: Blackboard,
    cfg: ObjectiveConfig = ObjectiveConfig(),
    cap: int = DEFAULT_CAP,
    now: datetime | None = None,
    reporting_window: timedelta = timedelta(days=7),
) -> StrategizeResult:
    """One full pass: read pending recommendations from a consistent
    snapshot, weight, suppress rejected, resolve conflicts, cap, and persist
    surfaced statuses back to the blackboard."""
    metrics_rec = board.get(CLUSTER_METRICS_KEY)
    current = dict(cfg.current)
    if metrics_rec:
        current.update(
            {k: v for k, v in metrics_rec.value.items() if k in OBJECTIVES}
        )
    weights = dynamic_weights(
        ObjectiveConfig(
            static_priority=cfg.static_priority,
            static_weight=cfg.static_weight,
            targets=cfg.targets,
            current=current,
        )
    )

    records = board.list_prefix(RECOMMENDATION_PREFIX + "/")
    pending = [
        Recommendation.from_doc(r.value)
        for r in records
        if r.value.get("status") == STATUS_PENDING
    ]
    ranked = [
        RankedRecommendation(rec=rec, score=score(rec, weights), weights_used=weights)
        for rec in pending
    ]

    if now is None:
        now = datetime.now(tz=_parse_ts("1970-01-01T00:00:00Z").tzinfo)
    feedback = [r.value for r in board.list_prefix("/feedback/")]
    ranked = suppress_rejected(ranked, feedback, reporting_window, now)
    survivors = resolve_conflicts(ranked, cfg)
    surfaced, retained = rank_and_cap(survivors, cap)

    for item in surfaced:
        updated = item.rec.with_status(STATUS_SURFACED)
        cas_put(board, updated.blackboard_key(), updated.to_doc())
        item.rec = updated
    return StrategizeResult(surfaced=surfaced, retained=retained, weights=weights)
