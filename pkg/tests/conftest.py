import json
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np
import pytest

from fleetopt.blackboard import Blackboard
from fleetopt.catalog import FlavorCatalog

FIXTURES = Path(__file__).parent / "fixtures"

FIXTURE_NOW = datetime(2025, 3, 31, 23, 55, tzinfo=timezone.utc)


@pytest.fixture
def board(tmp_path):
    bb = Blackboard(tmp_path / "board")
    yield bb
    bb.close()


@pytest.fixture
def m1_catalog():
    return FlavorCatalog.load(FIXTURES / "catalog.json")


@pytest.fixture
def fixture_paths():
    return {
        "catalog": FIXTURES / "catalog.json",
        "inventory": FIXTURES / "inventory.json",
        "telemetry": FIXTURES / "telemetry.csv",
        "scan_report": FIXTURES / "scan_report.json",
        "doc_store": FIXTURES / "docs",
    }


def write_json(path: Path, doc) -> Path:
    path.write_text(json.dumps(doc, indent=2))
    return path


def ou_series(n, mean, rel_sd=0.15, theta=0.05, seed=0):
    """Mean-reverting noise series used across forecasting tests."""
    rng = np.random.default_rng(seed)
    sigma = rel_sd * mean * np.sqrt(2 * theta - theta**2)
    x = np.empty(n)
    level = mean
    for t in range(n):
        level += theta * (mean - level) + sigma * rng.standard_normal()
        x[t] = level
    return x
