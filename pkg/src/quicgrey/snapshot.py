"""Target lifecycle: spawn, readiness detection, snapshot-point resets.

The reference snapshot implementation is a template-process model: the
target thread finishes initialisation, parks at its first blocking receive
(the snapshot point), and per-iteration resets rebuild protocol state and
zero the coverage region from that parked position instead of paying the
spawn-plus-initialisation cost again. Disabling snapshots degrades every
reset to a full respawn, which is the ablation control.
"""

from __future__ import annotations

import queue
import threading
import time
from dataclasses import dataclass, field

from . import sync, target as target_mod
from .coverage import Coverage
from .crypto import SecretSet
from .errors import AdapterClosed, HandleDead, InitTimeout, RendezvousTimeout, SpawnFailure

INIT_TIMEOUT_S = 10.0


class ServerAdapter:
    """In-process stand-in for a rewritten server binary.

    The reference target calls these hooks where a real server would call
    ``recvmsg``/``sendmsg``; the harness talks to the other ends. One adapter
    owns one target thread, its coverage region, and its channels.
    """

    def __init__(self, manifest: target_mod.TargetManifest, secrets: SecretSet, *,
                 sync_mode: bool = True, response_delay_s: float = 0.0,
                 fail_spawn: bool = False):
        self.manifest = manifest
        self.sync_mode = sync_mode
        self.response_delay_s = response_delay_s
        self.fail_spawn = fail_spawn
        self.coverage = Coverage()
        self.server = target_mod.ReferenceServer(manifest, secrets, self.coverage)
        self.readiness = threading.Event()
        self.closed = False
        self._events = sync.QueueChannel()
        self._deliveries = sync.QueueChannel()
        self._mailbox: "queue.Queue" = queue.Queue()
        self._responses: "queue.Queue" = queue.Queue()
        self._reset_done = threading.Event()
        self._crash: str | None = None
        self._thread: threading.Thread | None = None

    # -- lifecycle

    def spawn(self) -> None:
        if self.alive():
            raise SpawnFailure("target already running")
        self.closed = False
        self.readiness.clear()
        self._thread = threading.Thread(target=self._run, name="quicgrey-target", daemon=True)
        self._thread.start()

    def _run(self) -> None:
        if self.manifest.init_delay_ms > 0:
            time.sleep(self.manifest.init_delay_ms / 1000.0)
        if self.fail_spawn:
            return  # exits before ever reaching a receive
        target_mod.run_server_loop(self.server, self, self.manifest.paradigm)

    def alive(self) -> bool:
        return self._thread is not None and self._thread.is_alive()

    def kill(self) -> None:
        if self._thread is None:
            self.closed = True
            return
        self._deliveries.put(sync.KILL)
        self._mailbox.put(sync.KILL)
        self._thread.join(timeout=2.0)
        self._thread = None
        self.closed = True

    # -- target-side hooks (called from the target thread)

    def target_recv(self):
        if not self.readiness.is_set():
            self.readiness.set()
        if self.sync_mode:
            self._events.put((sync.EV_WANTS_INPUT,))
            return self._deliveries.get(timeout=None)
        while True:
            try:
                return self._mailbox.get(timeout=0.0005)
            except queue.Empty:
                if self.closed:
                    return sync.KILL

    def target_send(self, data: bytes) -> None:
        if self.sync_mode:
            self._events.put((sync.EV_SENT, data))
        else:
            if self.response_delay_s > 0:
                time.sleep(self.response_delay_s)
            self._responses.put(data)

    def target_idle(self) -> None:
        if self.sync_mode:
            self._events.put((sync.EV_IDLE,))

    def target_reset_done(self) -> None:
        if self.sync_mode:
            self._events.put((sync.EV_RESET_DONE,))
        else:
            self._reset_done.set()

    def target_crashed(self, failure_id: str) -> None:
        self._crash = failure_id
        if self.sync_mode:
            self._events.put((sync.EV_CRASHED, failure_id))

    # -- fuzzer-side surface

    def next_event(self, timeout: float = sync.WEDGE_TIMEOUT_S):
        if self.closed:
            raise AdapterClosed("adapter killed")
        return self._events.get(timeout)

    def deliver(self, item) -> None:
        if self.closed:
            raise AdapterClosed("adapter killed")
        self._deliveries.put(item)

    def send_unsync(self, data: bytes) -> None:
        self._mailbox.put(data)

    def poll_response(self, timeout: float):
        try:
            return self._responses.get(timeout=timeout)
        except queue.Empty:
            return None

    def take_crash(self) -> str | None:
        crash, self._crash = self._crash, None
        return crash

    def coverage_snapshot(self) -> bytes:
        return self.coverage.snapshot()

    def reset_to_snapshot(self) -> None:
        """Return the parked target to its post-initialisation state."""
        if not self.alive():
            raise HandleDead("target thread is gone")
        self._crash = None
        if self.sync_mode:
            self.deliver(sync.RESET)
            deadline = time.monotonic() + sync.WEDGE_TIMEOUT_S
            while True:
                event = self.next_event(max(0.01, deadline - time.monotonic()))
                if event[0] == sync.EV_RESET_DONE:
                    break
        else:
            self._reset_done.clear()
            self._mailbox.put(sync.RESET)
            if not self._reset_done.wait(sync.WEDGE_TIMEOUT_S):
                raise HandleDead("reset did not complete")
            while self.poll_response(0) is not None:
                pass
        self._crash = None
        self.coverage.zero()


@dataclass
class ResetStats:
    spawns: int = 0
    resets: int = 0
    fallback_respawns: int = 0
    reset_ns_total: int = 0

    def mean_reset_us(self) -> float:
        return (self.reset_ns_total / self.resets) / 1000.0 if self.resets else 0.0

    def line(self) -> str:
        return (f"spawns={self.spawns} resets={self.resets} "
                f"fallback_respawns={self.fallback_respawns} "
                f"mean_reset_us={self.mean_reset_us():.1f}")


def arm_and_snapshot(adapter: ServerAdapter, timeout_s: float = INIT_TIMEOUT_S) -> ServerAdapter:
    """Spawn and block until the target's first input-wait fires.

    The readiness event is the first blocking receive attempt after all
    initialisation work, so the handle returned here is the snapshot point.
    """
    adapter.spawn()
    deadline = time.monotonic() + timeout_s
    while not adapter.readiness.wait(0.002):
        if not adapter.alive():
            raise SpawnFailure("target exited during initialisation")
        if time.monotonic() > deadline:
            adapter.kill()
            raise InitTimeout(f"no readiness within {timeout_s}s")
    return adapter


@dataclass
class SnapshotManager:
    """Serves per-iteration resets, from the snapshot when enabled."""

    factory: "callable"
    enabled: bool = True
    stats: ResetStats = field(default_factory=ResetStats)
    adapter: ServerAdapter | None = None

    def arm(self) -> ServerAdapter:
        self.adapter = arm_and_snapshot(self.factory())
        self.stats.spawns += 1
        return self.adapter

    def reset(self) -> ServerAdapter:
        start = time.perf_counter_ns()
        if self.adapter is None:
            adapter = self.arm()
            self.stats.resets += 1
            self.stats.reset_ns_total += time.perf_counter_ns() - start
            return adapter
        if self.enabled:
            try:
                self.adapter.reset_to_snapshot()
                self.stats.resets += 1
                self.stats.reset_ns_total += time.perf_counter_ns() - start
                return self.adapter
            except (HandleDead, RendezvousTimeout, AdapterClosed):
                self.stats.fallback_respawns += 1
        self.adapter.kill()
        adapter = self.arm()
        self.stats.resets += 1
        self.stats.reset_ns_total += time.perf_counter_ns() - start
        return adapter

    def kill(self) -> None:
        if self.adapter is not None:
            self.adapter.kill()
            self.adapter = None
