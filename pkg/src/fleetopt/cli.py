"""Command-line entry point wiring the whole pipeline.

All configuration lives in one JSON document (``--config`` flag or the
FLEETOPT_CONFIG environment variable) plus a handful of flag overrides; see
the README for the schema. Every subcommand writes a structured run report
under the configured ``runs/`` directory and exits 0 on success, 2 on
configuration errors, 3 on data errors, 4 on anything else.

Subcommands: ingest, recommend, strategize, emit, feedback, apply,
simulate, report, and pipeline (ingest -> recommend -> strategize -> emit,
plus apply in auto mode).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

from . import __version__
from .blackboard import Blackboard
from .catalog import FlavorCatalog
from .errors import ConfigError, DataError, FleetoptError
from .observer import (
    _iso,
    _parse_ts,
    build_observation,
    ingest_inventory,
    ingest_telemetry,
    post_cluster_metrics,
    post_observations,
)
from .prioritizer import ObjectiveConfig, strategize
from .recommendation import (
    RECOMMENDATION_PREFIX,
    Recommendation,
    STATUS_APPROVED,
    STATUS_MODIFIED,
    STATUS_SURFACED,
)
from .rightsizing import RightsizingConfig, recommend
from .security import (
    HttpTextClient,
    StubTextClient,
    parse_scan_report,
    post_security_observations,
    recommend_security,
)
from .simulator import (
    FleetSpec,
    POLICY_AUTO,
    POLICY_NONE,
    POLICY_REACTIVE,
    ablation_curve,
    generate_fleet,
    run_episode,
    run_recommender,
    write_ablation_csv,
)
from .workflow import apply_patch, emit_proposal, ingest_feedback, window_id

ENV_CONFIG = "FLEETOPT_CONFIG"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4


@dataclass
class RunConfig:
    paths: dict[str, str] = field(default_factory=dict)
    thresholds: RightsizingConfig = field(default_factory=RightsizingConfig)
    objectives: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    cap: int = 10
    mode: str = "operator"
    seed: int = 7
    now: datetime | None = None
    simulation: dict = field(default_factory=dict)
    client_endpoint: str | None = None

    @classmethod
    def load(cls, path: str | None, overrides: argparse.Namespace) -> "RunConfig":
        doc: dict = {}
        config_path = path or os.environ.get(ENV_CONFIG)
        if config_path:
            p = Path(config_path)
            if not p.exists():
                raise ConfigError(f"config file {p} does not exist")
            try:
                doc = json.loads(p.read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {p} is not valid JSON: {exc}") from None
        cfg = cls(
            paths={k: str(v) for k, v in doc.get("paths", {}).items()},
            thresholds=RightsizingConfig.from_doc(doc.get("thresholds", {})),
            objectives=ObjectiveConfig.from_doc(doc.get("objectives", {})),
            cap=int(doc.get("cap", 10)),
            mode=doc.get("mode", "operator"),
            seed=int(doc.get("seed", 7)),
            now=_parse_ts(doc["now"]) if doc.get("now") else None,
            simulation=doc.get("simulation", {}),
            client_endpoint=doc.get("client_endpoint"),
        )
        if getattr(overrides, "mode", None):
            cfg.mode = overrides.mode
        if getattr(overrides, "cap", None) is not None:
            cfg.cap = overrides.cap
        if getattr(overrides, "seed", None) is not None:
            cfg.seed = overrides.seed
        if getattr(overrides, "now", None):
            cfg.now = _parse_ts(overrides.now)
        if cfg.mode not in ("operator", "auto"):
            raise ConfigError(f"mode must be operator or auto, got {cfg.mode!r}")
        if cfg.cap < 0:
            raise ConfigError(f"cap must be non-negative, got {cfg.cap}")
        return cfg

    def path(self, name: str, default: str | None = None, must_exist: bool = False) -> Path:
        raw = self.paths.get(name, default)
        if raw is None:
            raise ConfigError(f"config paths.{name} is required for this command")
        p = Path(raw)
        if must_exist and not p.exists():
            raise ConfigError(f"configured paths.{name} = {p} does not exist")
        return p

    def open_board(self, now: datetime) -> Blackboard:
        clock_ms = int(now.timestamp() * 1000)
        return Blackboard(self.path("blackboard", "board"), clock=lambda: clock_ms)

    def resolve_now(self, board: Blackboard | None = None) -> datetime:
        if self.now is not None:
            return self.now
        telemetry = self.paths.get("telemetry")
        if telemetry and Path(telemetry).exists():
            latest = None
            import csv as _csv

            with open(telemetry, newline="") as fh:
                for row in _csv.DictReader(fh):
                    ts = _parse_ts(row["timestamp"])
                    latest = ts if latest is None or ts > latest else latest
            if latest is not None:
                return latest
        if board is not None:
            obs = board.list_prefix("/observations/utilization/")
            if obs:
                return max(_parse_ts(r.value["window_end"]) for r in obs)
        return datetime.now(timezone.utc)


def _write_run_report(cfg: RunConfig, command: str, report: dict) -> Path:
    runs = cfg.path("runs", "runs")
    runs.mkdir(parents=True, exist_ok=True)
    seq = len(list(runs.glob("run-*.json"))) + 1
    path = runs / f"run-{seq:04d}-{command}.json"
    path.write_text(json.dumps({"command": command, **report}, indent=2, default=str) + "\n")
    return path


# -- subcommands -----------------------------------------------------------------

def cmd_ingest(cfg: RunConfig) -> dict:
    inventory = ingest_inventory(cfg.path("inventory", must_exist=True))
    telemetry = ingest_telemetry(cfg.path("telemetry", must_exist=True), inventory)
    now = cfg.resolve_now()
    window = cfg.thresholds.reporting_window
    board = cfg.open_board(now)
    try:
        observations = []
        skipped = []
        for handle, samples in telemetry.items():
            try:
                observations.append(build_observation(handle, samples, window, now))
            except DataError as exc:
                skipped.append(f"{handle.platform}/{handle.id}: {exc}")
        posted = post_observations(board, observations)
        util_cpu = [
            s.cpu_used / max(s.cpu_request, 1e-9)
            for o in observations
            for s in o.samples
            if s.cpu_request > 0
        ]
        proxies = {"cpu_util_mean": sum(util_cpu) / len(util_cpu)} if util_cpu else {}
        if proxies:
            post_cluster_metrics(board, proxies)
        return {
            "now": _iso(now),
            "resources": len(inventory),
            "observations_posted": posted,
            "skipped": skipped,
        }
    finally:
        board.close()


def cmd_recommend(cfg: RunConfig) -> dict:
    catalog = FlavorCatalog.load(cfg.path("catalog", must_exist=True))
    board = cfg.open_board(cfg.resolve_now())
    try:
        now = cfg.resolve_now(board)
        outcome = recommend(board, catalog, cfg.thresholds, now=now)
        report = {
            "now": _iso(now),
            "rightsizing_recommendations": len(outcome.recommendations),
            "finding_counts": outcome.finding_counts,
            "diagnostics": outcome.diagnostics,
        }
        scan_path = cfg.paths.get("scan_report")
        if scan_path and Path(scan_path).exists():
            scan_obs = parse_scan_report(scan_path)
            post_security_observations(board, scan_obs)
            client = (
                HttpTextClient(cfg.client_endpoint)
                if cfg.client_endpoint
                else StubTextClient()
            )
            doc_store = cfg.paths.get("doc_store")
            sec_recs = recommend_security(
                board, doc_store, client, reporting_window=cfg.thresholds.reporting_window
            )
            report["security_observations"] = len(scan_obs)
            report["security_recommendations"] = len(sec_recs)
        return report
    finally:
        board.close()


def cmd_strategize(cfg: RunConfig) -> dict:
    board = cfg.open_board(cfg.resolve_now())
    try:
        now = cfg.resolve_now(board)
        result = strategize(
            board,
            cfg.objectives,
            cap=cfg.cap,
            now=now,
            reporting_window=cfg.thresholds.reporting_window,
        )
        return {
            "now": _iso(now),
            "surfaced": [r.rec.id for r in result.surfaced],
            "retained": [r.rec.id for r in result.retained],
            "weights": result.weights,
        }
    finally:
        board.close()


def cmd_emit(cfg: RunConfig) -> dict:
    board = cfg.open_board(cfg.resolve_now())
    try:
        now = cfg.resolve_now(board)
        window = window_id(now)
        repo_root = cfg.path("repo_root", "repo")
        repo_root.mkdir(parents=True, exist_ok=True)
        emitted = []
        for record in board.list_prefix(RECOMMENDATION_PREFIX + "/"):
            rec = Recommendation.from_doc(record.value)
            if rec.status != STATUS_SURFACED:
                continue
            artifact = emit_proposal(rec, repo_root, window)
            emitted.append(str(artifact.directory))
        return {"now": _iso(now), "window": window, "proposals": emitted}
    finally:
        board.close()


def cmd_feedback(cfg: RunConfig) -> dict:
    if cfg.mode == "auto":
        raise ConfigError("the feedback command is not available in auto mode")
    board = cfg.open_board(cfg.resolve_now())
    try:
        records, diagnostics = ingest_feedback(
            cfg.path("feedback", must_exist=True), board
        )
        return {
            "accepted": [r.to_doc() for r in records],
            "diagnostics": diagnostics,
        }
    finally:
        board.close()


def cmd_apply(cfg: RunConfig) -> dict:
    board = cfg.open_board(cfg.resolve_now())
    try:
        now = cfg.resolve_now(board)
        repo_root = cfg.path("repo_root", "repo")
        repo_root.mkdir(parents=True, exist_ok=True)
        state_path = cfg.path("fleet_state", str(repo_root / "fleet_state.json"))
        if state_path.exists():
            raw = json.loads(state_path.read_text())
            fleet_state = {tuple(k.split("/", 1)): v for k, v in raw.items()}
        else:
            inventory = ingest_inventory(cfg.path("inventory", must_exist=True))
            fleet_state = {h.fleet_key: h.flavor_name for h in inventory}
        audit = repo_root / "audit.log"
        statuses = (
            (STATUS_SURFACED, STATUS_APPROVED, STATUS_MODIFIED)
            if cfg.mode == "auto"
            else (STATUS_APPROVED, STATUS_MODIFIED)
        )
        applied, diagnostics = [], []
        for record in board.list_prefix(RECOMMENDATION_PREFIX + "/"):
            rec = Recommendation.from_doc(record.value)
            if rec.status not in statuses:
                continue
            try:
                fleet_state = apply_patch(
                    rec, fleet_state, audit_log=audit, board=board,
                    mode=cfg.mode, at=now,
                )
                applied.append(rec.id)
            except FleetoptError as exc:
                diagnostics.append(f"{rec.id}: {exc}")
        state_path.write_text(
            json.dumps(
                {f"{k[0]}/{k[1]}": v for k, v in sorted(fleet_state.items())},
                indent=2,
            )
            + "\n"
        )
        return {"now": _iso(now), "applied": applied, "diagnostics": diagnostics}
    finally:
        board.close()


def cmd_simulate(cfg: RunConfig) -> dict:
    sim = cfg.simulation
    spec = FleetSpec(
        n_vms=int(sim.get("n_vms", 528)),
        seed=int(sim.get("seed", cfg.seed)),
        share_below_10pct=float(sim.get("share_below_10pct", 0.85)),
        heavy_tail_share=float(sim.get("heavy_tail_share", 0.05)),
        weekly_variance_bound=float(sim.get("weekly_variance_bound", 0.15)),
        duration=timedelta(days=float(sim.get("duration_days", 90))),
        seasonal_share=float(sim.get("seasonal_share", 0.25)),
        step_change_share=float(sim.get("step_change_share", 0.0)),
    )
    fleet = generate_fleet(spec)
    policies = sim.get("policies", [POLICY_NONE, POLICY_REACTIVE, POLICY_AUTO])
    accept_fraction = float(sim.get("accept_fraction", 1.0))
    metrics = {}
    for policy in policies:
        episode = run_episode(
            fleet, policy, accept_fraction=accept_fraction, cfg=cfg.thresholds,
            objective_cfg=cfg.objectives,
        )
        metrics[policy] = episode.to_doc()
    runs = cfg.path("runs", "runs")
    runs.mkdir(parents=True, exist_ok=True)
    result = run_recommender(fleet, cfg.thresholds, cfg.objectives)
    try:
        curve = ablation_curve(fleet, result.ranked)
    finally:
        result.close()
    curve_path = runs / f"ablation-seed{spec.seed}.csv"
    write_ablation_csv(curve, curve_path)
    return {
        "fleet": {"n_vms": spec.n_vms, "seed": spec.seed,
                  "duration_days": spec.duration / timedelta(days=1)},
        "metrics": metrics,
        "ablation_csv": str(curve_path),
        "ablation_top_15pct": next(b for f, b in curve if f >= 0.15),
    }


def cmd_report(cfg: RunConfig) -> dict:
    board = cfg.open_board(cfg.resolve_now())
    try:
        by_status: dict[str, int] = {}
        by_agent: dict[str, int] = {}
        for record in board.list_prefix(RECOMMENDATION_PREFIX + "/"):
            doc = record.value
            by_status[doc["status"]] = by_status.get(doc["status"], 0) + 1
            by_agent[doc["agent"]] = by_agent.get(doc["agent"], 0) + 1
        feedback_count = len(board.list_prefix("/feedback/"))
        observations = len(board.list_prefix("/observations/"))
        windows: dict[str, int] = {}
        repo_root = Path(cfg.paths.get("repo_root", "repo"))
        proposals_dir = repo_root / "proposals"
        if proposals_dir.exists():
            for wdir in sorted(proposals_dir.iterdir()):
                if wdir.is_dir():
                    windows[wdir.name] = len([d for d in wdir.iterdir() if d.is_dir()])
        latest_metrics = None
        runs = Path(cfg.paths.get("runs", "runs"))
        if runs.exists():
            sim_runs = sorted(runs.glob("run-*-simulate.json"))
            if sim_runs:
                latest_metrics = json.loads(sim_runs[-1].read_text()).get("metrics")
        report = {
            "observations": observations,
            "recommendations_by_status": by_status,
            "recommendations_by_agent": by_agent,
            "feedback_records": feedback_count,
            "proposals_per_window": windows,
            "latest_simulation_metrics": latest_metrics,
        }
        print(json.dumps(report, indent=2))
        return report
    finally:
        board.close()


def cmd_pipeline(cfg: RunConfig) -> dict:
    report = {
        "ingest": cmd_ingest(cfg),
        "recommend": cmd_recommend(cfg),
        "strategize": cmd_strategize(cfg),
        "emit": cmd_emit(cfg),
    }
    if cfg.mode == "auto":
        report["apply"] = cmd_apply(cfg)
    return report


COMMANDS = {
    "ingest": cmd_ingest,
    "recommend": cmd_recommend,
    "strategize": cmd_strategize,
    "emit": cmd_emit,
    "feedback": cmd_feedback,
    "apply": cmd_apply,
    "simulate": cmd_simulate,
    "report": cmd_report,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fleetopt",
        description="Explainable rightsizing and security recommendations "
        "for edge-cloud fleets.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help=f"config JSON (or ${ENV_CONFIG})")
    parser.add_argument("--mode", choices=["operator", "auto"], help="override run mode")
    parser.add_argument("--cap", type=int, help="override the surfacing cap")
    parser.add_argument("--seed", type=int, help="override the seed")
    parser.add_argument("--now", help="override the logical timestamp (ISO-8601)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=fn.__doc__ or name)
        sp.set_defaults(func=fn)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config, args)
        report = args.func(cfg)
        report_path = _write_run_report(cfg, args.command, {"status": "ok", **report})
        print(f"[{args.command}] ok; report: {report_path}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"[{args.command}] config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"[{args.command}] data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # internal
        print(f"[{args.command}] internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
