"""The rightsizing agent: breach detection, catalog matching, impact.

Per resource the pipeline is: window stats -> model selection -> forecast ->
breach finding -> required allocation (P95 max of history and forecast, plus
a safety buffer) -> nearest feasible catalog flavor -> impact quantification
-> an explainable, evidence-backed recommendation written to the blackboard.

A breach must be *persistent*: the historical P95 utilization and the
forecast P95 utilization have to agree on the same side of the threshold
before anything is proposed. Resources whose recommendation was rejected in
the current reporting window are skipped, and per-resource failures become
diagnostics rather than aborting the batch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np

from .blackboard import Blackboard
from .catalog import Flavor, FlavorCatalog
from .errors import NoFeasibleFlavor, SeriesTooShort
from .forecast import (
    DEFAULT_HORIZON,
    Forecast,
    ModelChoice,
    SeriesStats,
    compute_stats,
    forecast as run_forecast,
    select_model,
)
from .observer import OBSERVATION_PREFIX, cas_put, _parse_ts
from .recommendation import (
    EvidenceRef,
    ImpactVector,
    Recommendation,
    content_id,
)

log = logging.getLogger(__name__)

AGENT_NAME = "rightsizing"

KIND_UNDER = "under"
KIND_OVER = "over"
KIND_NONE = "none"
KIND_IDLE = "suspected_idle"

DIM_CPU = "cpu"
DIM_MEM = "mem"
DIM_BOTH = "both"


@dataclass(frozen=True)
class RightsizingConfig:
    """Operator thresholds. Utilization thresholds are fractions of the
    allocated capacity; the buffer pads the recommended allocation."""

    lower_threshold: float = 0.20
    upper_threshold: float = 0.85
    idle_threshold: float = 0.05
    buffer: float = 0.10
    horizon: timedelta = DEFAULT_HORIZON
    reporting_window: timedelta = timedelta(days=7)

    def to_doc(self) -> dict:
        return {
            "lower_threshold": self.lower_threshold,
            "upper_threshold": self.upper_threshold,
            "idle_threshold": self.idle_threshold,
            "buffer": self.buffer,
            "horizon_days": self.horizon / timedelta(days=1),
            "reporting_window_days": self.reporting_window / timedelta(days=1),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "RightsizingConfig":
        return cls(
            lower_threshold=doc.get("lower_threshold", 0.20),
            upper_threshold=doc.get("upper_threshold", 0.85),
            idle_threshold=doc.get("idle_threshold", 0.05),
            buffer=doc.get("buffer", 0.10),
            horizon=timedelta(days=doc.get("horizon_days", 7.0)),
            reporting_window=timedelta(days=doc.get("reporting_window_days", 7.0)),
        )


@dataclass(frozen=True)
class ClusterCapacity:
    cpu: float
    mem: float


@dataclass(frozen=True)
class BreachFinding:
    """Outcome of threshold analysis for one resource, with the stats and
    forecasts that justify it."""

    kind: str
    dimension: str | None
    stats_cpu: SeriesStats
    stats_mem: SeriesStats
    forecast_cpu: Forecast
    forecast_mem: Forecast


def detect_breach(
    stats_cpu: SeriesStats,
    stats_mem: SeriesStats,
    fc_cpu: Forecast,
    fc_mem: Forecast,
    cfg: RightsizingConfig = RightsizingConfig(),
) -> BreachFinding:
    """Classify a resource against the utilization thresholds.

    A dimension is under (over) only when both the historical and forecast
    P95 utilization sit below (above) the threshold. Over-breaches win over
    everything (safety); suspected idle requires the mean utilization under
    the idle threshold on both dimensions.
    """

    def state(stats: SeriesStats, fc: Forecast) -> str:
        hist = stats.p95 / stats.allocated
        fut = fc.p95_forecast / stats.allocated
        if hist < cfg.lower_threshold and fut < cfg.lower_threshold:
            return KIND_UNDER
        if hist > cfg.upper_threshold and fut > cfg.upper_threshold:
            return KIND_OVER
        return KIND_NONE

    states = {DIM_CPU: state(stats_cpu, fc_cpu), DIM_MEM: state(stats_mem, fc_mem)}
    common = dict(
        stats_cpu=stats_cpu, stats_mem=stats_mem,
        forecast_cpu=fc_cpu, forecast_mem=fc_mem,
    )

    over_dims = [d for d, s in states.items() if s == KIND_OVER]
    if over_dims:
        dim = DIM_BOTH if len(over_dims) == 2 else over_dims[0]
        return BreachFinding(kind=KIND_OVER, dimension=dim, **common)

    idle = (
        stats_cpu.mean / stats_cpu.allocated < cfg.idle_threshold
        and stats_mem.mean / stats_mem.allocated < cfg.idle_threshold
    )
    if idle:
        return BreachFinding(kind=KIND_IDLE, dimension=DIM_BOTH, **common)

    under_dims = [d for d, s in states.items() if s == KIND_UNDER]
    if under_dims:
        dim = DIM_BOTH if len(under_dims) == 2 else under_dims[0]
        return BreachFinding(kind=KIND_UNDER, dimension=dim, **common)

    return BreachFinding(kind=KIND_NONE, dimension=None, **common)


def required_allocation(
    finding: BreachFinding, buffer: float = 0.10
) -> tuple[float, float]:
    """Needed capacity per dimension: max(historical P95, forecast P95)
    times (1 + buffer)."""
    if finding.kind == KIND_NONE:
        raise ValueError("required_allocation needs an actionable finding")
    cpu = max(finding.stats_cpu.p95, finding.forecast_cpu.p95_forecast) * (1.0 + buffer)
    mem = max(finding.stats_mem.p95, finding.forecast_mem.p95_forecast) * (1.0 + buffer)
    return cpu, mem


def select_flavor(
    needed: dict[str, float],
    catalog: FlavorCatalog,
    current: Flavor,
) -> Flavor | None:
    """Nearest feasible flavor for the requirement vector.

    Feasible flavors satisfy every required dimension; the winner minimizes
    the Euclidean distance over the shared numeric dimensions, each
    normalized by its catalog-wide maximum. Ties break by lower cost_rank
    then name. Returns None when the winner equals the current flavor (no
    recommendation); raises NoFeasibleFlavor when nothing in the catalog is
    big enough.
    """
    if len(catalog) == 0:
        raise NoFeasibleFlavor("catalog is empty")
    feasible = [
        f
        for f in catalog
        if all(
            (f.dimension(d) is not None and f.dimension(d) >= v)
            for d, v in needed.items()
        )
    ]
    if not feasible:
        raise NoFeasibleFlavor(
            f"no flavor satisfies {needed} (largest need exceeds the catalog)"
        )

    norms = {}
    for d in needed:
        dims = [f.dimension(d) for f in catalog if f.dimension(d) is not None]
        norms[d] = max(dims) if dims else 1.0

    def distance(f: Flavor) -> float:
        return sum(
            ((f.dimension(d) - v) / (norms[d] or 1.0)) ** 2 for d, v in needed.items()
        )

    winner = min(feasible, key=lambda f: (distance(f), f.cost_rank, f.name))
    if winner.name == current.name:
        return None
    return winner


def build_impact(
    current: Flavor,
    proposed: Flavor,
    cluster: ClusterCapacity,
    finding: BreachFinding,
) -> ImpactVector:
    """Project the change onto the five objectives, normalized to cluster
    capacity. Freed capacity (positive when downsizing) drives cost and
    sustainability; reliability and performance gain only when an
    over-breach is relieved by upsizing; this agent never moves security.
    """
    if current.name == proposed.name:
        raise ValueError("impact of a no-op change is identically zero; guarded upstream")
    freed_cpu = (current.cpu - proposed.cpu) / cluster.cpu
    freed_mem = (current.mem - proposed.mem) / cluster.mem
    freed = (freed_cpu + freed_mem) / 2.0
    clamp = lambda v: max(-1.0, min(1.0, v))
    headroom = clamp(max(-freed, 0.0)) if finding.kind == KIND_OVER else 0.0
    return ImpactVector(
        reliability=headroom,
        performance=headroom,
        security=0.0,
        cost=clamp(freed),
        sustainability=clamp(freed),
    )


# -- end-to-end agent pass -----------------------------------------------------

@dataclass
class RecommendOutcome:
    """recommend() result: the recommendations plus the per-resource finding
    mix and diagnostics the evaluation and reports need."""

    recommendations: list[Recommendation] = field(default_factory=list)
    findings: dict[tuple[str, str], str] = field(default_factory=dict)
    diagnostics: list[str] = field(default_factory=list)
    cluster: ClusterCapacity | None = None

    @property
    def finding_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for kind in self.findings.values():
            counts[kind] = counts.get(kind, 0) + 1
        return counts


def rejected_ids_in_window(
    board: Blackboard, now: datetime, window: timedelta
) -> set[str]:
    """Recommendation ids with a rejection newer than now - window."""
    cutoff = now - window
    out = set()
    for rec in board.list_prefix("/feedback/"):
        doc = rec.value
        if doc.get("action") != "rejected":
            continue
        at = _parse_ts(doc["at"])
        if cutoff < at <= now:
            out.add(doc["rec_id"])
    return out


def recommend(
    board: Blackboard,
    catalog: FlavorCatalog,
    cfg: RightsizingConfig = RightsizingConfig(),
    now: datetime | None = None,
) -> RecommendOutcome:
    """Run the full rightsizing pass over every posted utilization
    observation and write recommendations under /recommendations/rightsizing/.

    Per-resource errors (unknown flavor, short series, no feasible flavor)
    become diagnostics. Recommendations already on the blackboard keep their
    stored status; ids rejected within the reporting window are suppressed.
    """
    outcome = RecommendOutcome()
    records = board.list_prefix(OBSERVATION_PREFIX + "/")

    # cluster capacity = total currently allocated, for impact normalization
    total_cpu = total_mem = 0.0
    for rec in records:
        flavor = catalog.get(rec.value["handle"].get("flavor_name", ""))
        if flavor is not None:
            total_cpu += flavor.cpu
            total_mem += flavor.mem
    if total_cpu <= 0 or total_mem <= 0:
        total_cpu = max(total_cpu, 1.0)
        total_mem = max(total_mem, 1.0)
    cluster = ClusterCapacity(cpu=total_cpu, mem=total_mem)
    outcome.cluster = cluster

    if now is None and records:
        now = max(_parse_ts(r.value["window_end"]) for r in records)
    if now is None:
        now = datetime.now(timezone.utc)
    rejected = rejected_ids_in_window(board, now, cfg.reporting_window)

    for obs_record in records:
        handle = obs_record.value["handle"]
        label = f"{handle['platform']}/{handle['id']}"
        try:
            rec = _recommend_one(
                board, obs_record, catalog, cfg, cluster, rejected, outcome
            )
        except SeriesTooShort as exc:
            outcome.diagnostics.append(f"{label}: series too short ({exc})")
            continue
        except NoFeasibleFlavor as exc:
            outcome.diagnostics.append(f"{label}: no feasible flavor ({exc})")
            continue
        except Exception as exc:  # never abort the batch
            outcome.diagnostics.append(f"{label}: {type(exc).__name__}: {exc}")
            continue
        if rec is not None:
            outcome.recommendations.append(rec)
    return outcome


def _recommend_one(
    board: Blackboard,
    obs_record,
    catalog: FlavorCatalog,
    cfg: RightsizingConfig,
    cluster: ClusterCapacity,
    rejected: set[str],
    outcome: RecommendOutcome,
) -> Recommendation | None:
    doc = obs_record.value
    handle = doc["handle"]
    fleet_key = (handle["platform"], handle["id"])
    label = f"{handle['platform']}/{handle['id']}"

    flavor = catalog.get(handle.get("flavor_name", ""))
    if flavor is None:
        outcome.diagnostics.append(
            f"{label}: flavor {handle.get('flavor_name')!r} not in catalog"
        )
        return None

    cols = doc["samples"]
    cpu = np.asarray(cols["cpu_used"], dtype=float)
    mem = np.asarray(cols["mem_used"], dtype=float)
    period = timedelta(seconds=doc["sampling_period_s"])
    window_end = _parse_ts(doc["window_end"])

    stats_cpu = compute_stats(cpu, flavor.cpu)
    stats_mem = compute_stats(mem, flavor.mem)
    # model selection runs on utilization (normalized) series; forecasts on
    # the raw series — equivalent by scale equivariance, and the variance
    # floor is calibrated for normalized data
    model_cpu = select_model(cpu / flavor.cpu, period=period)
    model_mem = select_model(mem / flavor.mem, period=period)
    fc_cpu = run_forecast(cpu, model_cpu, cfg.horizon, period, start=window_end)
    fc_mem = run_forecast(mem, model_mem, cfg.horizon, period, start=window_end)

    finding = detect_breach(stats_cpu, stats_mem, fc_cpu, fc_mem, cfg)
    outcome.findings[fleet_key] = finding.kind
    if finding.kind == KIND_NONE:
        return None

    needed_cpu, needed_mem = required_allocation(finding, cfg.buffer)
    proposed = select_flavor(
        {"cpu": needed_cpu, "mem": needed_mem}, catalog, current=flavor
    )
    if proposed is None:
        return None  # already on the best-fitting flavor

    rec_id = content_id(
        AGENT_NAME,
        handle["platform"],
        handle["id"],
        flavor.name,
        proposed.name,
        doc["window_start"],
        doc["window_end"],
    )
    if rec_id in rejected:
        outcome.diagnostics.append(
            f"{label}: suppressed, rejected in current reporting window"
        )
        return None

    existing = board.get(f"/recommendations/{AGENT_NAME}/{rec_id}")
    if existing is not None:
        return Recommendation.from_doc(existing.value)

    impact = build_impact(flavor, proposed, cluster, finding)
    direction = "Upsize" if finding.kind == KIND_OVER else "Downsize"
    rationale = (
        f"{direction} {label} from {flavor.name} ({flavor.cpu:g}C/{flavor.mem:g}GiB) "
        f"to {proposed.name} ({proposed.cpu:g}C/{proposed.mem:g}GiB). "
        f"Finding: {finding.kind} on {finding.dimension}. "
        f"Historical P95: cpu {stats_cpu.p95:.4f} cores "
        f"({stats_cpu.p95 / flavor.cpu:.2%} of {flavor.cpu:g}), "
        f"mem {stats_mem.p95:.4f} GiB ({stats_mem.p95 / flavor.mem:.2%} of {flavor.mem:g}). "
        f"Forecast P95 over {cfg.horizon / timedelta(days=1):g} days: "
        f"cpu {fc_cpu.p95_forecast:.4f} cores, mem {fc_mem.p95_forecast:.4f} GiB "
        f"(cpu model: {fc_cpu.model.rationale}). "
        f"Required with {cfg.buffer:.0%} buffer: "
        f"cpu {needed_cpu:.4f} cores, mem {needed_mem:.4f} GiB. "
        f"Thresholds: under {cfg.lower_threshold:g}, over {cfg.upper_threshold:g}, "
        f"idle {cfg.idle_threshold:g}."
    )
    patch = [
        {
            "resource": handle["id"],
            "path": "flavor_name",
            "old": flavor.name,
            "new": proposed.name,
        },
        {
            "resource": handle["id"],
            "path": "requests/cpu",
            "old": flavor.cpu,
            "new": round(needed_cpu, 6),
        },
        {
            "resource": handle["id"],
            "path": "requests/mem",
            "old": flavor.mem,
            "new": round(needed_mem, 6),
        },
    ]
    rec = Recommendation(
        id=rec_id,
        agent=AGENT_NAME,
        handle_doc=dict(handle),
        current_flavor=flavor.name,
        proposed_flavor=proposed.name,
        patch=patch,
        impact=impact,
        rationale=rationale,
        evidence=[EvidenceRef(key=obs_record.key, version=obs_record.version)],
        extras={
            "needed": {"cpu": needed_cpu, "mem": needed_mem},
            "finding": finding.kind,
            "dimension": finding.dimension,
            "stats": {"cpu": stats_cpu.to_doc(), "mem": stats_mem.to_doc()},
            "forecast_p95": {"cpu": fc_cpu.p95_forecast, "mem": fc_mem.p95_forecast},
            "window": {"start": doc["window_start"], "end": doc["window_end"]},
        },
    )
    cas_put(board, rec.blackboard_key(), rec.to_doc())
    return rec
