"""Flavor catalog: the admissible resource configurations.

A catalog file is a JSON document: ``{"flavors": [{"name", "cpu", "mem",
"extra": {..}, "cost_rank"}, ...]}``. ``cpu`` is in cores, ``mem`` in GiB,
``extra`` holds optional numeric dimensions (e.g. storage GiB), and
``cost_rank`` orders flavors by relative cost for tie-breaking.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParseError


@dataclass(frozen=True)
class Flavor:
    name: str
    cpu: float
    mem: float
    extra: dict[str, float] = field(default_factory=dict, compare=False)
    cost_rank: float = 0.0

    def __post_init__(self):
        if self.cpu <= 0 or self.mem <= 0:
            raise ParseError(f"flavor {self.name!r} must have positive cpu and mem")

    def dimension(self, name: str) -> float | None:
        if name == "cpu":
            return self.cpu
        if name == "mem":
            return self.mem
        return self.extra.get(name)

    def to_doc(self) -> dict:
        return {
            "name": self.name,
            "cpu": self.cpu,
            "mem": self.mem,
            "extra": dict(self.extra),
            "cost_rank": self.cost_rank,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Flavor":
        return cls(
            name=doc["name"],
            cpu=float(doc["cpu"]),
            mem=float(doc["mem"]),
            extra={k: float(v) for k, v in doc.get("extra", {}).items()},
            cost_rank=float(doc.get("cost_rank", 0.0)),
        )


class FlavorCatalog:
    """Named set of flavors with unique names."""

    def __init__(self, flavors):
        self.flavors: list[Flavor] = list(flavors)
        names = [f.name for f in self.flavors]
        if len(set(names)) != len(names):
            raise ParseError("catalog flavor names must be unique")
        self._by_name = {f.name: f for f in self.flavors}

    def __iter__(self):
        return iter(self.flavors)

    def __len__(self) -> int:
        return len(self.flavors)

    def get(self, name: str) -> Flavor | None:
        return self._by_name.get(name)

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def to_doc(self) -> dict:
        return {"flavors": [f.to_doc() for f in self.flavors]}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_doc(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "FlavorCatalog":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
            return cls(Flavor.from_doc(f) for f in doc["flavors"])
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ParseError(f"cannot parse catalog {path}: {exc}") from None
