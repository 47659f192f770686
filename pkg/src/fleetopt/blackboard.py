"""Versioned key-value store with CAS writes, prefix listing and a change feed.

This is the coordination substrate the agents communicate through. It is an
append-only log on disk plus an in-memory index:

* every successful ``put`` appends one length-prefixed JSON record to the log
  and bumps a global ``store_revision``;
* per-key ``version`` counters increase by exactly 1 per write, starting at 1;
* history is kept in full until :meth:`Blackboard.compact` is called.

On-disk layout (auditable by external tools): the log is a sequence of
frames, each a 4-byte big-endian unsigned length followed by that many bytes
of UTF-8 JSON with fields ``{"key", "value", "version", "store_revision",
"written_at"}``. ``written_at`` is milliseconds since the Unix epoch, UTC.

Concurrency: all writes are serialized through one lock; records are frozen
and safe to hand between threads. Readers take the same lock only to snapshot
the index, never while deserializing.
"""

from __future__ import annotations

import json
import os
import struct
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterator

from .errors import FutureRevision, InvalidKey, VersionConflict

_LEN = struct.Struct(">I")

LOG_FILENAME = "blackboard.log"


def _now_ms() -> int:
    return int(time.time() * 1000)


@dataclass(frozen=True)
class VersionedRecord:
    """One write: a key, its document, and where it sits in history."""

    key: str
    value: Any
    version: int
    store_revision: int
    written_at: int  # epoch milliseconds, UTC

    def to_doc(self) -> dict:
        return {
            "key": self.key,
            "value": self.value,
            "version": self.version,
            "store_revision": self.store_revision,
            "written_at": self.written_at,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "VersionedRecord":
        return cls(
            key=doc["key"],
            value=doc["value"],
            version=doc["version"],
            store_revision=doc["store_revision"],
            written_at=doc["written_at"],
        )


def _validate_key(key: Any) -> None:
    if not isinstance(key, str) or not key:
        raise InvalidKey(f"key must be a non-empty string, got {key!r}")
    if not key.startswith("/") or key.endswith("/") or "//" in key:
        raise InvalidKey(f"key must be a /-rooted path with non-empty segments: {key!r}")
    if any(c.isspace() for c in key):
        raise InvalidKey(f"key must not contain whitespace: {key!r}")


class Blackboard:
    """Append-only, versioned store rooted at a directory.

    Parameters
    ----------
    root:
        Directory holding the log file; created if missing.
    clock:
        Callable returning epoch milliseconds for ``written_at``. Injectable
        so pipeline runs can stamp records with their logical time and stay
        byte-reproducible.
    """

    def __init__(self, root: str | Path, clock: Callable[[], int] = _now_ms):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._path = self.root / LOG_FILENAME
        self._clock = clock
        self._lock = threading.RLock()
        self._latest: dict[str, VersionedRecord] = {}
        self._log: list[VersionedRecord] = []
        self._revision = 0
        self._fh = None
        self._replay()
        self._fh = open(self._path, "ab")

    # -- lifecycle -------------------------------------------------------

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.flush()
                self._fh.close()
                self._fh = None

    def __enter__(self) -> "Blackboard":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _replay(self) -> None:
        if not self._path.exists():
            return
        for rec in _read_frames(self._path):
            self._log.append(rec)
            self._latest[rec.key] = rec
            self._revision = max(self._revision, rec.store_revision)

    # -- core operations -------------------------------------------------

    @property
    def store_revision(self) -> int:
        with self._lock:
            return self._revision

    def put(self, key: str, value: Any, expected_version: int | None = None) -> tuple[int, int]:
        """Write ``value`` under ``key``; returns (version, store_revision).

        ``expected_version`` makes the write a compare-and-swap: it must
        equal the key's current version (0 meaning "must not exist") or
        :class:`VersionConflict` is raised and nothing is written.
        """
        _validate_key(key)
        with self._lock:
            current = self._latest.get(key)
            current_version = current.version if current else 0
            if expected_version is not None and expected_version != current_version:
                raise VersionConflict(key, expected_version, current_version)
            rec = VersionedRecord(
                key=key,
                value=value,
                version=current_version + 1,
                store_revision=self._revision + 1,
                written_at=self._clock(),
            )
            payload = json.dumps(rec.to_doc(), separators=(",", ":")).encode("utf-8")
            self._fh.write(_LEN.pack(len(payload)))
            self._fh.write(payload)
            self._fh.flush()
            self._revision = rec.store_revision
            self._latest[key] = rec
            self._log.append(rec)
            return rec.version, rec.store_revision

    def get(self, key: str) -> VersionedRecord | None:
        """Latest record for ``key``, or None."""
        with self._lock:
            return self._latest.get(key)

    def get_version(self, key: str, version: int) -> VersionedRecord | None:
        """Record for ``key`` at an exact historical ``version``, if retained."""
        with self._lock:
            rec = self._latest.get(key)
            if rec is not None and rec.version == version:
                return rec
            for rec in self._log:
                if rec.key == key and rec.version == version:
                    return rec
        return None

    def list_prefix(self, prefix: str) -> list[VersionedRecord]:
        """All latest records whose key starts with ``prefix``, sorted by key."""
        with self._lock:
            found = [r for k, r in self._latest.items() if k.startswith(prefix)]
        return sorted(found, key=lambda r: r.key)

    def changes_since(self, revision: int) -> list[VersionedRecord]:
        """All writes with store_revision > ``revision``, in write order."""
        with self._lock:
            if revision > self._revision:
                raise FutureRevision(
                    f"revision {revision} is beyond the store head {self._revision}"
                )
            return [r for r in self._log if r.store_revision > revision]

    # -- maintenance -----------------------------------------------------

    def compact(self) -> int:
        """Drop history, keeping only the latest version per key and the
        global revision counter. Returns the number of frames dropped.

        Audit history before compaction if you need it; reads at old
        revisions are only stable up to this point.
        """
        with self._lock:
            survivors = sorted(self._latest.values(), key=lambda r: r.store_revision)
            dropped = len(self._log) - len(survivors)
            tmp = self._path.with_suffix(".compact")
            with open(tmp, "wb") as fh:
                for rec in survivors:
                    payload = json.dumps(rec.to_doc(), separators=(",", ":")).encode("utf-8")
                    fh.write(_LEN.pack(len(payload)))
                    fh.write(payload)
                fh.flush()
                os.fsync(fh.fileno())
            self._fh.close()
            os.replace(tmp, self._path)
            self._fh = open(self._path, "ab")
            self._log = survivors
            return dropped


def _read_frames(path: Path) -> Iterator[VersionedRecord]:
    """Decode length-prefixed JSON frames; a truncated trailing frame is
    ignored (torn final write)."""
    with open(path, "rb") as fh:
        while True:
            header = fh.read(_LEN.size)
            if len(header) < _LEN.size:
                return
            (length,) = _LEN.unpack(header)
            payload = fh.read(length)
            if len(payload) < length:
                return
            yield VersionedRecord.from_doc(json.loads(payload.decode("utf-8")))
