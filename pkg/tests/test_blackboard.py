import threading

import pytest

from fleetopt.blackboard import Blackboard
from fleetopt.errors import FutureRevision, InvalidKey, VersionConflict


def test_first_write_gets_version_1(board):
    version, revision = board.put("/obs/vm-1", {"v": 1}, expected_version=0)
    assert version == 1
    assert revision == 1


def test_versions_increment_monotonically(board):
    board.put("/obs/vm-1", {"v": 1}, expected_version=0)
    version, revision = board.put("/obs/vm-1", {"v": 2}, expected_version=1)
    assert version == 2
    assert revision == 2


def test_stale_cas_conflicts(board):
    board.put("/obs/vm-1", {"v": 1}, expected_version=0)
    board.put("/obs/vm-1", {"v": 2}, expected_version=1)
    with pytest.raises(VersionConflict):
        board.put("/obs/vm-1", {"v": 3}, expected_version=1)


def test_put_without_expected_version_always_writes(board):
    board.put("/k", 1)
    board.put("/k", 2)
    assert board.get("/k").value == 2
    assert board.get("/k").version == 2


def test_invalid_keys_rejected(board):
    for bad in ("", "no-slash", "/trailing/", "/a//b", "/with space", None, 42):
        with pytest.raises(InvalidKey):
            board.put(bad, {})


def test_get_unknown_key_absent(board):
    assert board.get("/nope") is None


def test_get_returns_latest_after_three_puts(board):
    for i in range(3):
        board.put("/k", {"i": i})
    rec = board.get("/k")
    assert rec.version == 3
    assert rec.value == {"i": 2}


def test_round_trip_exact_value(board):
    doc = {"nested": {"a": [1, 2.5, "x"], "b": None}, "flag": True}
    board.put("/k", doc)
    assert board.get("/k").value == doc


def test_list_prefix_filters_and_sorts(board):
    board.put("/obs/b", 1)
    board.put("/rec/x", 2)
    board.put("/obs/a", 3)
    obs = board.list_prefix("/obs/")
    assert [r.key for r in obs] == ["/obs/a", "/obs/b"]
    assert len(board.list_prefix("")) == 3
    assert board.list_prefix("/none/") == []


def test_changes_since_current_is_empty(board):
    board.put("/k", 1)
    assert board.changes_since(board.store_revision) == []


def test_changes_since_zero_returns_every_write_in_order(board):
    for i in range(5):
        board.put(f"/k{i % 2}", i)
    changes = board.changes_since(0)
    assert [c.store_revision for c in changes] == [1, 2, 3, 4, 5]
    assert [c.value for c in changes] == [0, 1, 2, 3, 4]


def test_changes_since_midpoint(board):
    for i in range(7):
        board.put("/k", i)
    changes = board.changes_since(5)
    assert [c.store_revision for c in changes] == [6, 7]


def test_future_revision_rejected(board):
    board.put("/k", 1)
    with pytest.raises(FutureRevision):
        board.changes_since(board.store_revision + 1)


def test_replay_equals_state(board):
    # independent oracle: folding the change feed must rebuild the state
    for i in range(20):
        board.put(f"/k{i % 5}", {"i": i})
    replayed = {}
    for rec in board.changes_since(0):
        replayed[rec.key] = rec.value
    state = {r.key: r.value for r in board.list_prefix("")}
    assert replayed == state


def test_persistence_round_trip(tmp_path):
    bb = Blackboard(tmp_path)
    for i in range(10):
        bb.put(f"/k{i % 3}", {"i": i})
    before = [(r.key, r.value, r.version, r.store_revision) for r in bb.list_prefix("")]
    revision = bb.store_revision
    bb.close()

    reopened = Blackboard(tmp_path)
    after = [(r.key, r.value, r.version, r.store_revision) for r in reopened.list_prefix("")]
    assert after == before
    assert reopened.store_revision == revision
    # the change history also survives
    assert len(reopened.changes_since(0)) == 10
    reopened.close()


def test_truncated_final_frame_is_ignored(tmp_path):
    bb = Blackboard(tmp_path)
    bb.put("/k", {"v": 1})
    bb.put("/k", {"v": 2})
    bb.close()
    log = tmp_path / "blackboard.log"
    data = log.read_bytes()
    log.write_bytes(data[:-3])  # torn final write
    reopened = Blackboard(tmp_path)
    assert reopened.get("/k").value == {"v": 1}
    assert reopened.store_revision == 1
    reopened.close()


def test_compaction_keeps_latest_and_revision(tmp_path):
    bb = Blackboard(tmp_path)
    for i in range(9):
        bb.put(f"/k{i % 3}", {"i": i})
    state = {r.key: r.value for r in bb.list_prefix("")}
    revision = bb.store_revision
    dropped = bb.compact()
    assert dropped == 6
    assert {r.key: r.value for r in bb.list_prefix("")} == state
    assert bb.store_revision == revision
    bb.put("/k0", {"i": 100})
    assert bb.store_revision == revision + 1
    bb.close()
    reopened = Blackboard(tmp_path)
    assert reopened.get("/k0").value == {"i": 100}
    assert reopened.store_revision == revision + 1
    reopened.close()


def test_cas_single_winner_among_concurrent_writers(board):
    """Exactly one of N concurrent CAS writers with the same expected
    version succeeds."""
    key = "/contended"
    board.put(key, {"round": 0}, expected_version=0)
    n_threads = 8
    for round_no in range(25):
        current = board.get(key).version
        barrier = threading.Barrier(n_threads)
        outcomes = []
        lock = threading.Lock()

        def writer(i):
            barrier.wait()
            try:
                board.put(key, {"winner": i}, expected_version=current)
                with lock:
                    outcomes.append(True)
            except VersionConflict:
                with lock:
                    outcomes.append(False)

        threads = [threading.Thread(target=writer, args=(i,)) for i in range(n_threads)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert sum(outcomes) == 1
        assert board.get(key).version == current + 1


def test_injected_clock_stamps_records(tmp_path):
    bb = Blackboard(tmp_path, clock=lambda: 1234567890123)
    bb.put("/k", 1)
    assert bb.get("/k").written_at == 1234567890123
    bb.close()
