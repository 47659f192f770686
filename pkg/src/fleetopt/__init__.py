"""Explainable rightsizing and security recommendations for edge-cloud fleets.

Agents coordinate over a versioned blackboard: the observer posts telemetry
windows, the rightsizing and security agents derive evidence-backed change
proposals, a prioritizer weights and de-conflicts them, and the workflow
adapter turns the survivors into auditable merge-request-style artifacts.
A fleet simulator reproduces the evaluation metrics on seeded synthetic
workloads.
"""

__version__ = "0.1.0"

from .blackboard import Blackboard, VersionedRecord
from .catalog import Flavor, FlavorCatalog
from .errors import FleetoptError
from .forecast import (
    Forecast,
    ModelChoice,
    SeriesStats,
    compute_stats,
    forecast,
    percentile_nearest_rank,
    sample_entropy,
    select_model,
)
from .observer import (
    ResourceHandle,
    TelemetrySample,
    UtilizationObservation,
    build_observation,
    ingest_inventory,
    ingest_telemetry,
    post_observations,
)
from .prioritizer import (
    ObjectiveConfig,
    RankedRecommendation,
    dynamic_weights,
    rank_and_cap,
    resolve_conflicts,
    score,
    strategize,
    suppress_rejected,
)
from .recommendation import EvidenceRef, ImpactVector, Recommendation
from .rightsizing import (
    BreachFinding,
    RightsizingConfig,
    build_impact,
    detect_breach,
    recommend,
    required_allocation,
    select_flavor,
)
from .security import (
    SecurityObservation,
    StubTextClient,
    build_prompt,
    generate_remediation,
    parse_scan_report,
    recommend_security,
)
from .simulator import (
    EpisodeMetrics,
    FleetSpec,
    SimFleet,
    ablation_curve,
    evaluate_error_rate,
    generate_fleet,
    run_episode,
)
from .workflow import (
    FeedbackRecord,
    ProposalArtifact,
    apply_patch,
    emit_proposal,
    ingest_feedback,
)

__all__ = [name for name in dir() if not name.startswith("_")]
