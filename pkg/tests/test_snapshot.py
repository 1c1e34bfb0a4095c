"""Target lifecycle and snapshot-reset tests."""

import time

import pytest

from quicgrey import sync
from quicgrey.errors import HandleDead, SpawnFailure
from quicgrey.snapshot import ServerAdapter, SnapshotManager, arm_and_snapshot
from quicgrey.target import TargetManifest


def _drive(adapter, records):
    return sync.drive_sequence(records, adapter, adapter.manifest.paradigm)


def test_readiness_fires_after_init_delay(secrets):
    adapter = ServerAdapter(TargetManifest(init_delay_ms=50), secrets)
    start = time.perf_counter()
    arm_and_snapshot(adapter)
    elapsed = time.perf_counter() - start
    adapter.kill()
    assert elapsed >= 0.050


def test_zero_delay_immediate_handle(secrets):
    adapter = ServerAdapter(TargetManifest(), secrets)
    start = time.perf_counter()
    arm_and_snapshot(adapter)
    elapsed = time.perf_counter() - start
    adapter.kill()
    assert elapsed < 1.0


def test_spawn_failure_when_target_dies_in_init(secrets):
    adapter = ServerAdapter(TargetManifest(init_delay_ms=5), secrets, fail_spawn=True)
    with pytest.raises(SpawnFailure):
        arm_and_snapshot(adapter)


def test_reset_restores_snapshot_state(canonical_capture, secrets):
    records, _ = canonical_capture
    client_records = [b for d, b in records if d == 0]
    adapter = ServerAdapter(TargetManifest(), secrets)
    arm_and_snapshot(adapter)
    try:
        first = _drive(adapter, client_records)
        cov_first = adapter.coverage_snapshot()
        for _ in range(5):
            adapter.reset_to_snapshot()
            again = _drive(adapter, client_records)
            assert again.comparable() == first.comparable()
            assert adapter.coverage_snapshot() == cov_first
    finally:
        adapter.kill()


def test_reset_zeroes_coverage(canonical_capture, secrets):
    records, _ = canonical_capture
    client_records = [b for d, b in records if d == 0]
    adapter = ServerAdapter(TargetManifest(), secrets)
    arm_and_snapshot(adapter)
    try:
        _drive(adapter, client_records)
        assert any(adapter.coverage_snapshot())
        adapter.reset_to_snapshot()
        assert not any(adapter.coverage_snapshot())
    finally:
        adapter.kill()


def test_hundred_resets_cost_far_less_than_respawns(secrets):
    manifest = TargetManifest(init_delay_ms=50)
    adapter = ServerAdapter(manifest, secrets)
    arm_and_snapshot(adapter)
    try:
        start = time.perf_counter()
        for _ in range(100):
            adapter.reset_to_snapshot()
        elapsed = time.perf_counter() - start
    finally:
        adapter.kill()
    assert elapsed < 0.2 * (100 * 0.050)  # way below 100 x init_delay


def test_reset_on_dead_handle_raises(secrets):
    adapter = ServerAdapter(TargetManifest(), secrets)
    arm_and_snapshot(adapter)
    adapter.kill()
    with pytest.raises((HandleDead, Exception)):
        adapter.reset_to_snapshot()


def test_manager_fallback_respawn(secrets):
    manager = SnapshotManager(factory=lambda: ServerAdapter(TargetManifest(), secrets))
    manager.arm()
    manager.adapter._thread = None  # simulate a dead handle
    adapter = manager.reset()
    assert adapter.alive()
    assert manager.stats.fallback_respawns == 1
    assert manager.stats.spawns == 2
    manager.kill()


def test_manager_disabled_respawns_each_time(secrets):
    manifest = TargetManifest(init_delay_ms=20)
    manager = SnapshotManager(factory=lambda: ServerAdapter(manifest, secrets),
                              enabled=False)
    manager.arm()
    start = time.perf_counter()
    for _ in range(3):
        manager.reset()
    elapsed = time.perf_counter() - start
    manager.kill()
    assert manager.stats.spawns == 4  # arm + one respawn per reset
    assert elapsed >= 3 * 0.020


def test_stats_line_format(secrets):
    manager = SnapshotManager(factory=lambda: ServerAdapter(TargetManifest(), secrets))
    manager.arm()
    manager.reset()
    manager.kill()
    line = manager.stats.line()
    assert "spawns=1" in line
    assert "resets=1" in line
    assert "fallback_respawns=0" in line
    assert "mean_reset_us=" in line


def test_readiness_precedes_any_input_consumption(secrets):
    adapter = ServerAdapter(TargetManifest(init_delay_ms=10), secrets)
    assert not adapter.readiness.is_set()  # not before spawn completes init
    arm_and_snapshot(adapter)
    try:
        assert adapter.readiness.is_set()
        # the target is parked at its first receive: exactly one announcement
        # is pending and no input has been consumed
        event = adapter.next_event(timeout=1.0)
        assert event == (sync.EV_WANTS_INPUT,)
    finally:
        adapter.kill()
