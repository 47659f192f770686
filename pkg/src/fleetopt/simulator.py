"""Synthetic fleet generation, policy episodes, and evaluation metrics.

The generator produces a seeded fleet matching the workload distribution the
evaluation targets: most VMs stationary and heavily underutilized (85% below
10% mean CPU by default), a thin heavy tail carrying more than half of the
CPU-hours, bounded week-to-week variance, and a size mix dominated by small
machines with an idle long tail of big ones. Distribution constraints are
verified post-generation and violations raise InfeasibleSpec.

Episodes compare allocation policies over the same telemetry:

* ``none`` — static original allocations;
* ``reactive`` — autoscaler stand-in: retarget to P95(trailing day) x 1.15,
  recomputed daily, snapped to the catalog, applied when the current
  allocation deviates more than 10% from the target;
* ``auto`` — the full recommender pipeline with every ranked change applied
  automatically (the surfacing cap governs operator workload, not
  autonomous application);
* ``operator`` — the pipeline with only the top ``accept_fraction`` of the
  strategizer ranking approved and applied.

"Before" metrics use the original allocations, "after" the post-change
allocations, both measured over the week following the recommendation
point; the theoretical oracle snaps every VM to the smallest feasible
flavor for its exact history-window P95 plus buffer.
"""

from __future__ import annotations

import logging
import math
import shutil
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .blackboard import Blackboard
from .catalog import Flavor, FlavorCatalog
from .errors import InfeasibleSpec
from .forecast import percentile_nearest_rank
from .observer import _iso, cas_put
from .prioritizer import (
    ObjectiveConfig,
    RankedRecommendation,
    strategize,
)
from .recommendation import Recommendation, STATUS_APPROVED
from .rightsizing import (
    KIND_IDLE,
    KIND_NONE,
    KIND_UNDER,
    RecommendOutcome,
    RightsizingConfig,
    recommend,
)
from .workflow import FeedbackRecord, apply_patch

log = logging.getLogger(__name__)

POLICY_NONE = "none"
POLICY_REACTIVE = "reactive"
POLICY_AUTO = "auto"
POLICY_OPERATOR = "operator"
POLICIES = (POLICY_NONE, POLICY_REACTIVE, POLICY_AUTO, POLICY_OPERATOR)

FLEET_START = datetime(2025, 1, 6, tzinfo=timezone.utc)  # a Monday

# Fleet profile: shares of n_vms per behavior group. The idle-big group is
# spread across the four largest flavors; smalls absorb the remainder of the
# below-10% share. Calibrated once against the acceptance bounds and frozen.
IDLE_BIG_SHARE = 0.25
IDLE_BIG_SPLIT = (("large", 0.24), ("xlarge", 0.24), ("2xlarge", 0.24), ("4xlarge", 0.28))
SMALL_FLAVOR = "small"
MIDDLE_FLAVOR = "medium"
HEAVY_FLAVOR = "xlarge"

MEAN_UTIL_RANGES = {
    "small": (0.075, 0.098),
    "idle": (0.005, 0.030),
    "middle": (0.10, 0.14),
    "heavy": (0.50, 0.75),
}
REL_SD = {"small": 0.12, "idle": 0.12, "middle": 0.12, "heavy": 0.04}
OU_THETA = 0.05
SEASONAL_AMPLITUDE = 0.2  # relative to the mean level
UTIL_FLOOR = 5e-4
UTIL_CEIL = 0.98


def default_fleet_catalog() -> FlavorCatalog:
    """Continuum catalog: 2 GiB per core, quarter-core presets up to 64C."""
    sizes = [
        ("micro", 0.25), ("mini", 0.5), ("tiny", 1), ("small", 2), ("medium", 4),
        ("large", 8), ("xlarge", 16), ("2xlarge", 32), ("4xlarge", 64),
    ]
    return FlavorCatalog(
        Flavor(name=n, cpu=float(c), mem=float(2 * c), cost_rank=float(i + 1))
        for i, (n, c) in enumerate(sizes)
    )


@dataclass
class FleetSpec:
    n_vms: int = 528
    seed: int = 7
    catalog: FlavorCatalog = field(default_factory=default_fleet_catalog)
    share_below_10pct: float = 0.85
    heavy_tail_share: float = 0.05
    weekly_variance_bound: float = 0.15
    duration: timedelta = timedelta(days=90)
    sampling: timedelta = timedelta(minutes=5)
    seasonal_share: float = 0.25
    step_change_share: float = 0.0   # fraction of VMs with a demand step in the final week
    step_change_magnitude: float = 0.5

    def validate(self) -> None:
        if self.n_vms <= 0:
            raise InfeasibleSpec("n_vms must be positive")
        for name in ("share_below_10pct", "weekly_variance_bound"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise InfeasibleSpec(f"{name} must be in (0,1), got {v}")
        if not 0.0 <= self.heavy_tail_share < 1.0:
            raise InfeasibleSpec("heavy_tail_share must be in [0,1)")
        if self.share_below_10pct + self.heavy_tail_share > 1.0:
            raise InfeasibleSpec("below-10% share plus heavy tail exceeds the fleet")
        if self.duration < timedelta(days=14):
            raise InfeasibleSpec("duration must cover at least a window plus an evaluation week")


@dataclass
class SimFleet:
    """Generated fleet: identities, per-VM truths, and telemetry matrices
    (used cores / used GiB, one row per VM)."""

    spec: FleetSpec
    flavor_names: list[str]
    groups: list[str]
    mean_util_cpu: np.ndarray
    cpu_used: np.ndarray
    mem_used: np.ndarray
    step_flags: np.ndarray
    start: datetime = FLEET_START

    @property
    def n_vms(self) -> int:
        return len(self.flavor_names)

    @property
    def n_samples(self) -> int:
        return self.cpu_used.shape[1]

    @property
    def steps_per_day(self) -> int:
        return int(round(timedelta(days=1) / self.spec.sampling))

    @property
    def catalog(self) -> FlavorCatalog:
        return self.spec.catalog

    def resource_id(self, i: int) -> str:
        return f"vm-{i:04d}"

    def index_of(self, resource_id: str) -> int:
        return int(resource_id.split("-")[1])

    def handle_doc(self, i: int) -> dict:
        return {
            "platform": "vm",
            "id": self.resource_id(i),
            "project": f"project-{self.groups[i]}",
            "owner": "fleet-sim",
            "flavor_name": self.flavor_names[i],
            "labels": {},
        }

    def alloc_dims(self) -> tuple[np.ndarray, np.ndarray]:
        cpu = np.array([self.catalog.get(f).cpu for f in self.flavor_names])
        mem = np.array([self.catalog.get(f).mem for f in self.flavor_names])
        return cpu, mem

    def timestamp(self, i: int) -> datetime:
        return self.start + self.spec.sampling * i


def generate_fleet(spec: FleetSpec | None = None) -> SimFleet:
    """Deterministically generate a fleet satisfying the spec's distribution
    constraints (verified; InfeasibleSpec on violation)."""
    spec = spec or FleetSpec()
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.n_vms
    steps = int(round(spec.duration / spec.sampling))
    spd = int(round(timedelta(days=1) / spec.sampling))

    # group assignment (contiguous blocks; row order carries no meaning)
    idle_share = min(IDLE_BIG_SHARE, spec.share_below_10pct)
    n_heavy = int(round(spec.heavy_tail_share * n))
    idle_counts = [(f, int(round(frac * idle_share * n))) for f, frac in IDLE_BIG_SPLIT]
    n_idle = sum(c for _, c in idle_counts)
    n_small = int(round((spec.share_below_10pct - idle_share) * n))
    n_middle = n - n_small - n_idle - n_heavy
    if n_middle < 0:
        raise InfeasibleSpec("group shares exceed the fleet size")

    flavor_names: list[str] = []
    groups: list[str] = []
    for _ in range(n_small):
        flavor_names.append(SMALL_FLAVOR)
        groups.append("small")
    for fname, count in idle_counts:
        for _ in range(count):
            flavor_names.append(fname)
            groups.append("idle")
    for _ in range(n_middle):
        flavor_names.append(MIDDLE_FLAVOR)
        groups.append("middle")
    for _ in range(n_heavy):
        flavor_names.append(HEAVY_FLAVOR)
        groups.append("heavy")

    mu_cpu = np.empty(n)
    rel_sd = np.empty(n)
    for gname in ("small", "idle", "middle", "heavy"):
        mask = np.array([g == gname for g in groups])
        lo, hi = MEAN_UTIL_RANGES[gname]
        mu_cpu[mask] = rng.uniform(lo, hi, int(mask.sum()))
        rel_sd[mask] = REL_SD[gname]
    mem_ratio = rng.uniform(0.6, 1.0, n)
    mu_mem = mu_cpu * mem_ratio

    seasonal = rng.random(n) < spec.seasonal_share
    amplitude = np.where(seasonal, SEASONAL_AMPLITUDE * mu_cpu, 0.0)
    phase = rng.uniform(0.0, 2.0 * math.pi, n)
    step_flags = rng.random(n) < spec.step_change_share
    step_at = steps - 7 * spd  # demand steps hit the evaluation week only

    sig_cpu = rel_sd * mu_cpu * math.sqrt(2 * OU_THETA - OU_THETA**2)
    sig_mem = rel_sd * mu_mem * math.sqrt(2 * OU_THETA - OU_THETA**2)

    alloc_cpu = np.array([spec.catalog.get(f).cpu for f in flavor_names])
    alloc_mem = np.array([spec.catalog.get(f).mem for f in flavor_names])

    cpu_used = np.empty((n, steps))
    mem_used = np.empty((n, steps))
    x_c = mu_cpu.copy()
    x_m = mu_mem.copy()
    two_pi_over_day = 2.0 * math.pi / spd
    step_bump = np.where(step_flags, spec.step_change_magnitude * mu_cpu, 0.0)
    for t in range(steps):
        x_c += OU_THETA * (mu_cpu - x_c) + sig_cpu * rng.standard_normal(n)
        x_m += OU_THETA * (mu_mem - x_m) + sig_mem * rng.standard_normal(n)
        np.clip(x_c, UTIL_FLOOR, UTIL_CEIL, out=x_c)
        np.clip(x_m, UTIL_FLOOR, UTIL_CEIL, out=x_m)
        u_c = x_c + amplitude * np.sin(two_pi_over_day * t + phase)
        if t >= step_at:
            u_c = u_c + step_bump
        np.clip(u_c, UTIL_FLOOR, 0.99, out=u_c)
        cpu_used[:, t] = u_c * alloc_cpu
        mem_used[:, t] = x_m * alloc_mem

    fleet = SimFleet(
        spec=spec,
        flavor_names=flavor_names,
        groups=groups,
        mean_util_cpu=mu_cpu,
        cpu_used=cpu_used,
        mem_used=mem_used,
        step_flags=step_flags,
    )
    _check_constraints(fleet)
    return fleet


def _check_constraints(fleet: SimFleet) -> None:
    spec = fleet.spec
    alloc_cpu, _ = fleet.alloc_dims()
    util = fleet.cpu_used / alloc_cpu[:, None]
    mean_util = util.mean(axis=1)

    share_low = float(np.mean(mean_util < 0.10))
    if share_low < spec.share_below_10pct - 0.03:
        raise InfeasibleSpec(
            f"only {share_low:.1%} of VMs below 10% mean CPU "
            f"(spec wants {spec.share_below_10pct:.0%})"
        )

    cpu_hours = fleet.cpu_used.sum(axis=1)
    total = float(cpu_hours.sum())
    if spec.heavy_tail_share > 0:
        k = max(1, int(math.ceil(spec.heavy_tail_share * fleet.n_vms)))
        top = float(np.sort(cpu_hours)[-k:].sum())
        if top <= 0.5 * total:
            raise InfeasibleSpec(
                f"top {k} VMs carry {top / total:.1%} of CPU-hours, need > 50%"
            )
    else:
        if float(cpu_hours.max()) > 0.5 * total:
            raise InfeasibleSpec("a single VM exceeds half of all CPU-hours")

    spd = fleet.steps_per_day
    week = 7 * spd
    n_weeks = fleet.n_samples // week
    if n_weeks >= 2:
        steady = ~fleet.step_flags
        weekly = np.stack(
            [util[:, w * week:(w + 1) * week].mean(axis=1) for w in range(n_weeks)],
            axis=1,
        )
        overall = weekly.mean(axis=1)
        rel_dev = np.max(np.abs(weekly - overall[:, None]), axis=1) / np.maximum(overall, 1e-9)
        compliant = float(np.mean(rel_dev[steady] < spec.weekly_variance_bound))
        if compliant < 0.95:
            raise InfeasibleSpec(
                f"only {compliant:.1%} of steady VMs within the "
                f"{spec.weekly_variance_bound:.0%} weekly variance bound"
            )


# -- catalog snapping ----------------------------------------------------------

def _catalog_ladder(catalog: FlavorCatalog) -> tuple[np.ndarray, np.ndarray, list[str]]:
    flavors = sorted(catalog, key=lambda f: (f.cpu, f.mem, f.name))
    return (
        np.array([f.cpu for f in flavors]),
        np.array([f.mem for f in flavors]),
        [f.name for f in flavors],
    )


def snap_to_catalog(
    catalog: FlavorCatalog, cpu_need: np.ndarray, mem_need: np.ndarray
) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Smallest feasible flavor per requirement pair on a flavor ladder;
    needs beyond the ladder cap at the largest flavor."""
    cpus, mems, names = _catalog_ladder(catalog)
    idx = np.maximum(
        np.searchsorted(cpus, cpu_need, side="left"),
        np.searchsorted(mems, mem_need, side="left"),
    )
    idx = np.minimum(idx, len(names) - 1)
    return cpus[idx], mems[idx], [names[i] for i in idx]


def _row_p95(window: np.ndarray) -> np.ndarray:
    """Vectorized nearest-rank P95 along axis 1."""
    n = window.shape[1]
    k = max(math.ceil(0.95 * n) - 1, 0)
    return np.partition(window, k, axis=1)[:, k]


def oracle_allocations(
    fleet: SimFleet, hist: slice, buffer: float = 0.10
) -> tuple[np.ndarray, np.ndarray]:
    """Theoretical right-sizing: every VM snapped to the smallest feasible
    flavor for its exact history-window P95 plus buffer."""
    cpu_need = _row_p95(fleet.cpu_used[:, hist]) * (1.0 + buffer)
    mem_need = _row_p95(fleet.mem_used[:, hist]) * (1.0 + buffer)
    cpu, mem, _ = snap_to_catalog(fleet.catalog, cpu_need, mem_need)
    return cpu, mem


def reactive_allocations(
    fleet: SimFleet,
    t_start: int,
    t_end: int,
    margin: float = 1.15,
    band: float = 0.10,
) -> tuple[np.ndarray, np.ndarray]:
    """Autoscaler stand-in: daily retarget to P95(trailing day) x margin,
    snapped to the catalog, applied when the current allocation is off the
    continuous target by more than the band on either dimension."""
    alloc_cpu, alloc_mem = fleet.alloc_dims()
    alloc_cpu = alloc_cpu.astype(float).copy()
    alloc_mem = alloc_mem.astype(float).copy()
    spd = fleet.steps_per_day
    for boundary in range(t_start, t_end + 1, spd):
        if boundary < spd:
            continue
        target_cpu = margin * _row_p95(fleet.cpu_used[:, boundary - spd : boundary])
        target_mem = margin * _row_p95(fleet.mem_used[:, boundary - spd : boundary])
        snap_cpu, snap_mem, _ = snap_to_catalog(fleet.catalog, target_cpu, target_mem)
        off = (
            np.abs(alloc_cpu - target_cpu) / np.maximum(target_cpu, 1e-9) > band
        ) | (
            np.abs(alloc_mem - target_mem) / np.maximum(target_mem, 1e-9) > band
        )
        alloc_cpu = np.where(off, snap_cpu, alloc_cpu)
        alloc_mem = np.where(off, snap_mem, alloc_mem)
    return alloc_cpu, alloc_mem


# -- the recommender pipeline over a fleet ---------------------------------------

@dataclass
class PipelineResult:
    board: Blackboard
    outcome: RecommendOutcome
    ranked: list[RankedRecommendation]
    t_rec: int
    eval_steps: int
    _tempdir: str | None = None

    def close(self) -> None:
        self.board.close()
        if self._tempdir:
            shutil.rmtree(self._tempdir, ignore_errors=True)
            self._tempdir = None


def run_recommender(
    fleet: SimFleet,
    cfg: RightsizingConfig = RightsizingConfig(),
    objective_cfg: ObjectiveConfig | None = None,
    board_dir: str | Path | None = None,
) -> PipelineResult:
    """Post window observations, run the rightsizing agent, and rank all
    pending recommendations (uncapped: the surfacing cap limits operator
    workload, not episode evaluation)."""
    spd = fleet.steps_per_day
    eval_steps = 7 * spd
    t_rec = fleet.n_samples - eval_steps
    window_steps = min(int(round(timedelta(days=7) / fleet.spec.sampling)), t_rec)
    w0 = t_rec - window_steps
    now = fleet.timestamp(t_rec - 1)

    tempdir = None
    if board_dir is None:
        tempdir = tempfile.mkdtemp(prefix="fleetopt-episode-")
        board_dir = tempdir
    clock_ms = int(now.timestamp() * 1000)
    board = Blackboard(board_dir, clock=lambda: clock_ms)

    at_iso = [_iso(fleet.timestamp(i)) for i in range(w0, t_rec)]
    window_start_iso = _iso(fleet.timestamp(w0))
    period_s = fleet.spec.sampling.total_seconds()
    n_in_window = t_rec - w0
    zeros = [0.0] * n_in_window
    for i in range(fleet.n_vms):
        handle = fleet.handle_doc(i)
        flavor = fleet.catalog.get(fleet.flavor_names[i])
        doc = {
            "handle": handle,
            "window_start": window_start_iso,
            "window_end": at_iso[-1],
            "sampling_period_s": period_s,
            "samples": {
                "at": at_iso,
                "cpu_used": fleet.cpu_used[i, w0:t_rec].tolist(),
                "mem_used": fleet.mem_used[i, w0:t_rec].tolist(),
                "cpu_request": [flavor.cpu] * n_in_window,
                "mem_request": [flavor.mem] * n_in_window,
                "cpu_limit": zeros,
                "mem_limit": zeros,
            },
        }
        key = f"/observations/utilization/{handle['platform']}/{handle['id']}"
        cas_put(board, key, doc)

    outcome = recommend(board, fleet.catalog, cfg, now=now)
    result = strategize(
        board,
        objective_cfg or ObjectiveConfig(),
        cap=len(outcome.recommendations),
        now=now,
        reporting_window=cfg.reporting_window,
    )
    return PipelineResult(
        board=board,
        outcome=outcome,
        ranked=result.surfaced,
        t_rec=t_rec,
        eval_steps=eval_steps,
        _tempdir=tempdir,
    )


def apply_ranked(
    result: PipelineResult,
    fleet: SimFleet,
    count: int,
    actor: str = "fleet-sim",
    auto: bool = True,
) -> dict[tuple[str, str], str]:
    """Apply the top ``count`` ranked recommendations to the fleet state with
    the full audit chain (feedback marker, status transitions, audit log)."""
    fleet_state = {
        ("vm", fleet.resource_id(i)): fleet.flavor_names[i] for i in range(fleet.n_vms)
    }
    audit = Path(result.board.root) / "audit.log"
    at = fleet.timestamp(result.t_rec)
    for item in result.ranked[:count]:
        rec = item.rec
        if auto:
            fleet_state = apply_patch(
                rec, fleet_state, audit_log=audit, board=result.board, mode="auto", at=at
            )
        else:
            marker = FeedbackRecord(rec_id=rec.id, action="approved", actor=actor, at=at)
            cas_put(result.board, f"/feedback/{rec.id}", marker.to_doc())
            approved = rec.with_status(STATUS_APPROVED)
            cas_put(result.board, approved.blackboard_key(), approved.to_doc())
            fleet_state = apply_patch(
                approved, fleet_state, audit_log=audit, board=result.board,
                mode="operator", at=at,
            )
    return fleet_state


# -- episodes --------------------------------------------------------------------

@dataclass
class EpisodeMetrics:
    policy: str
    util_cpu_p25_before: float
    util_cpu_p25_after: float
    util_mem_p25_before: float
    util_mem_p25_after: float
    theoretical_cpu_p25: float
    theoretical_mem_p25: float
    wasted_vcores: float
    recommendations_total: int
    recommendations_applied: int
    error_rate: float
    downscale_candidates: float = 0.0
    correctly_sized: float = 0.0
    suspected_idle: float = 0.0

    def to_doc(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def run_episode(
    fleet: SimFleet,
    policy: str,
    horizon: timedelta = timedelta(days=7),
    accept_fraction: float = 1.0,
    cfg: RightsizingConfig = RightsizingConfig(),
    objective_cfg: ObjectiveConfig | None = None,
) -> EpisodeMetrics:
    """Run one allocation policy over the fleet and measure the post-change
    week. Negative per-VM waste (under-allocation) counts as zero."""
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; expected one of {POLICIES}")
    eval_steps = int(round(horizon / fleet.spec.sampling))
    t_rec = fleet.n_samples - eval_steps
    window_steps = min(int(round(timedelta(days=7) / fleet.spec.sampling)), t_rec)
    hist = slice(t_rec - window_steps, t_rec)
    eval_slice = slice(t_rec, fleet.n_samples)

    orig_cpu, orig_mem = fleet.alloc_dims()
    recs: list[Recommendation] = []
    outcome = None
    applied = 0

    if policy == POLICY_NONE:
        final_cpu, final_mem = orig_cpu.astype(float), orig_mem.astype(float)
    elif policy == POLICY_REACTIVE:
        final_cpu, final_mem = reactive_allocations(fleet, t_rec, fleet.n_samples)
    else:
        result = run_recommender(fleet, cfg, objective_cfg)
        try:
            outcome = result.outcome
            recs = [item.rec for item in result.ranked]
            count = len(recs) if policy == POLICY_AUTO else int(
                math.floor(accept_fraction * len(recs) + 1e-9)
            )
            fleet_state = apply_ranked(
                result, fleet, count, auto=(policy == POLICY_AUTO)
            )
            applied = count
            final_cpu = np.array(
                [fleet.catalog.get(fleet_state[("vm", fleet.resource_id(i))]).cpu
                 for i in range(fleet.n_vms)]
            )
            final_mem = np.array(
                [fleet.catalog.get(fleet_state[("vm", fleet.resource_id(i))]).mem
                 for i in range(fleet.n_vms)]
            )
        finally:
            result.close()

    oracle_cpu, oracle_mem = oracle_allocations(fleet, hist, cfg.buffer)

    mean_cpu = fleet.cpu_used[:, eval_slice].mean(axis=1)
    mean_mem = fleet.mem_used[:, eval_slice].mean(axis=1)
    p95_cpu_eval = _row_p95(fleet.cpu_used[:, eval_slice])

    metrics = EpisodeMetrics(
        policy=policy,
        util_cpu_p25_before=percentile_nearest_rank(mean_cpu / orig_cpu, 0.25),
        util_cpu_p25_after=percentile_nearest_rank(mean_cpu / final_cpu, 0.25),
        util_mem_p25_before=percentile_nearest_rank(mean_mem / orig_mem, 0.25),
        util_mem_p25_after=percentile_nearest_rank(mean_mem / final_mem, 0.25),
        theoretical_cpu_p25=percentile_nearest_rank(mean_cpu / oracle_cpu, 0.25),
        theoretical_mem_p25=percentile_nearest_rank(mean_mem / oracle_mem, 0.25),
        wasted_vcores=float(np.maximum(final_cpu - p95_cpu_eval, 0.0).sum()),
        recommendations_total=len(recs),
        recommendations_applied=applied,
        error_rate=evaluate_error_rate(recs, fleet, horizon),
    )
    if outcome is not None:
        n = max(len(outcome.findings), 1)
        counts = outcome.finding_counts
        metrics.downscale_candidates = (
            counts.get(KIND_UNDER, 0) + counts.get(KIND_IDLE, 0)
        ) / n
        metrics.correctly_sized = counts.get(KIND_NONE, 0) / n
        metrics.suspected_idle = counts.get(KIND_IDLE, 0) / n
    return metrics


def evaluate_error_rate(
    recs: list[Recommendation], fleet: SimFleet, horizon: timedelta = timedelta(days=7)
) -> float:
    """Fraction of recommendations whose next-week actual peak leaves the
    ±15% band around the recommended requirement on the binding dimension.
    An empty recommendation set has error rate 0."""
    if not recs:
        return 0.0
    eval_steps = int(round(horizon / fleet.spec.sampling))
    eval_slice = slice(fleet.n_samples - eval_steps, fleet.n_samples)
    errors = 0
    for rec in recs:
        idx = fleet.index_of(rec.handle_doc["id"])
        needed = rec.extras["needed"]
        proposed = fleet.catalog.get(rec.proposed_flavor)
        cpu_pressure = needed["cpu"] / proposed.cpu
        mem_pressure = needed["mem"] / proposed.mem
        if cpu_pressure >= mem_pressure:
            recommended = needed["cpu"]
            peak = float(fleet.cpu_used[idx, eval_slice].max())
        else:
            recommended = needed["mem"]
            peak = float(fleet.mem_used[idx, eval_slice].max())
        if peak > 1.15 * recommended or peak < 0.85 * recommended:
            errors += 1
    return errors / len(recs)


def ablation_curve(
    fleet: SimFleet, ranked: list[RankedRecommendation]
) -> list[tuple[float, float]]:
    """Benefit captured by applying rank prefixes in 1%-of-recs steps.

    Benefit = wasted-capacity reduction (the allocation drop each applied
    recommendation produces) relative to applying everything, averaged over
    the cpu and mem dimensions. For downsizing-only recommendation sets the
    curve is non-decreasing from (0,0) to (1,1).
    """
    if not ranked:
        return [(0.0, 0.0), (1.0, 1.0)]
    savings_cpu = []
    savings_mem = []
    for item in ranked:
        cur = fleet.catalog.get(item.rec.current_flavor)
        new = fleet.catalog.get(item.rec.proposed_flavor)
        savings_cpu.append(cur.cpu - new.cpu)
        savings_mem.append(cur.mem - new.mem)
    savings_cpu = np.array(savings_cpu)
    savings_mem = np.array(savings_mem)
    total_cpu = float(savings_cpu.sum()) or 1.0
    total_mem = float(savings_mem.sum()) or 1.0
    per_rec = (savings_cpu / total_cpu + savings_mem / total_mem) / 2.0
    cum = np.concatenate([[0.0], np.cumsum(per_rec)])
    n = len(ranked)
    points = []
    for pct in range(101):
        f = pct / 100.0
        k = int(math.ceil(f * n - 1e-9))
        points.append((f, float(cum[k])))
    return points


def write_ablation_csv(curve: list[tuple[float, float]], path: str | Path) -> None:
    lines = ["fraction_applied,fraction_of_benefit"]
    lines += [f"{f:.2f},{b:.6f}" for f, b in curve]
    Path(path).write_text("\n".join(lines) + "\n")
