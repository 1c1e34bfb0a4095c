"""Rendezvous-serialized fuzzer/target conversations.

In sync mode the two parties alternate over a pair of queues: the target
blocks in its receive hook after announcing it wants input, and the fuzzer
answers every announcement with exactly one delivery (a datagram, a
would-block signal, or end-of-inputs). Event order is therefore a pure
function of the inputs, which is what makes replays bit-identical. The only
clock in the protocol is a one-second wedge detector.

Non-sync mode reproduces the classic timeout-driven loop for ablation: the
fuzzer paces deliveries with a receive window and the target runs free,
so response attribution races the window edge by design.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

from .errors import AdapterClosed, RendezvousTimeout

WEDGE_TIMEOUT_S = 1.0


class _Sentinel:
    __slots__ = ("name",)

    def __init__(self, name: str):
        self.name = name

    def __repr__(self) -> str:
        return f"<{self.name}>"


KILL = _Sentinel("kill")
RESET = _Sentinel("reset")
DONE = _Sentinel("done")
WOULD_BLOCK = _Sentinel("would_block")

# Trace event tags. The conversation alphabet is wants_input/sent/drained/
# idle/fuzzer_done; reset_done and crashed are lifecycle signals that never
# appear inside a drive trace.
EV_WANTS_INPUT = "wants_input"
EV_SENT = "sent"
EV_DRAINED = "drained"
EV_IDLE = "idle"
EV_FUZZER_DONE = "fuzzer_done"
EV_RESET_DONE = "reset_done"
EV_CRASHED = "crashed"
EV_DELIVERED = "delivered"

MODE_RECEIVE_SEND = "rs"
MODE_RECEIVE_BREAK_SEND = "rbs"


@dataclass
class DriveResult:
    responses: list[list[bytes]]  # grouped by the delivery they followed
    trace: list[tuple]
    crash_id: str | None = None

    def flat_responses(self) -> list[bytes]:
        return [r for group in self.responses for r in group]

    def comparable(self) -> tuple:
        return (tuple(tuple(g) for g in self.responses),
                tuple(self.trace), self.crash_id)


def as_flights(inputs: list[bytes] | list[list[bytes]]) -> list[list[bytes]]:
    """Normalize inputs: one record per flight unless flights are explicit."""
    if not inputs:
        return []
    if isinstance(inputs[0], (bytes, bytearray)):
        return [[bytes(r)] for r in inputs]  # type: ignore[list-item]
    return [list(f) for f in inputs]  # type: ignore[union-attr]


def drive_sequence(inputs, adapter, mode: str = MODE_RECEIVE_SEND,
                   timeout: float = WEDGE_TIMEOUT_S) -> DriveResult:
    """Feed one input sequence through the rendezvous and collect responses.

    Receive-send targets get one record per input announcement. A
    receive-break-send target keeps announcing until its kernel buffer would
    block, so the driver hands over the whole flight record by record and
    then signals would-block to let the target reach its send loop. Once
    inputs are exhausted, further announcements are answered with
    end-of-inputs and the conversation closes on the target's idle signal.
    """
    flights = as_flights(inputs)
    trace: list[tuple] = []
    responses: list[list[bytes]] = [[]]
    crash_id: str | None = None
    flight_idx = 0
    record_idx = 0
    blocked_current = False
    done_sent = False

    while True:
        event = adapter.next_event(timeout)
        tag = event[0]
        if tag == EV_WANTS_INPUT:
            trace.append((EV_WANTS_INPUT,))
            if mode == MODE_RECEIVE_SEND:
                if flight_idx < len(flights) and record_idx < len(flights[flight_idx]):
                    adapter.deliver(flights[flight_idx][record_idx])
                    record_idx += 1
                    responses.append([])
                    if record_idx >= len(flights[flight_idx]):
                        flight_idx += 1
                        record_idx = 0
                elif not done_sent:
                    adapter.deliver(DONE)
                    trace.append((EV_FUZZER_DONE,))
                    done_sent = True
                else:
                    adapter.deliver(DONE)
            else:
                if flight_idx < len(flights) and record_idx < len(flights[flight_idx]):
                    adapter.deliver(flights[flight_idx][record_idx])
                    record_idx += 1
                    responses.append([])
                    blocked_current = False
                elif flight_idx < len(flights) and not blocked_current:
                    adapter.deliver(WOULD_BLOCK)
                    trace.append((EV_DRAINED,))
                    blocked_current = True
                elif flight_idx < len(flights) and blocked_current:
                    flight_idx += 1
                    record_idx = 0
                    blocked_current = False
                    if flight_idx < len(flights):
                        adapter.deliver(flights[flight_idx][record_idx])
                        record_idx += 1
                        responses.append([])
                    else:
                        adapter.deliver(DONE)
                        trace.append((EV_FUZZER_DONE,))
                        done_sent = True
                elif not done_sent:
                    adapter.deliver(DONE)
                    trace.append((EV_FUZZER_DONE,))
                    done_sent = True
                else:
                    adapter.deliver(DONE)
        elif tag == EV_SENT:
            data = event[1]
            trace.append((EV_SENT, len(data)))
            responses[-1].append(data)
        elif tag == EV_IDLE:
            trace.append((EV_IDLE,))
            break
        elif tag == EV_CRASHED:
            crash_id = event[1]
            break
        else:  # stale lifecycle noise; never expected inside a drive
            continue
    return DriveResult(responses, trace, crash_id)


def drive_sequence_unsync(inputs, adapter, recv_window_s: float = 0.005) -> DriveResult:
    """Timeout-paced delivery without the rendezvous (the ablation baseline).

    After each record the driver watches the response mailbox for one
    receive window; late responses slide into the next step's window or get
    lost at the end, which is precisely the non-determinism the sync
    protocol removes.
    """
    flights = as_flights(inputs)
    trace: list[tuple] = []
    responses: list[list[bytes]] = [[]]
    for flight in flights:
        for record in flight:
            adapter.send_unsync(record)
            trace.append((EV_DELIVERED,))
            responses.append([])
            deadline = time.monotonic() + recv_window_s
            while True:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    break
                data = adapter.poll_response(remaining)
                if data is None:
                    break
                trace.append((EV_SENT, len(data)))
                responses[-1].append(data)
    crash_id = adapter.take_crash()
    return DriveResult(responses, trace, crash_id)


def replay_trace_check(inputs, reset_fn, drive_fn) -> tuple[bool, DriveResult, DriveResult]:
    """Run the same inputs from two fresh resets and compare observations.

    ``reset_fn`` must return the adapter at a reset point; ``drive_fn``
    executes one conversation. Returns (equal, first, second).
    """
    reset_fn()
    first = drive_fn(inputs)
    reset_fn()
    second = drive_fn(inputs)
    return first.comparable() == second.comparable(), first, second


class QueueChannel:
    """One-direction blocking channel with the wedge detector baked in."""

    def __init__(self) -> None:
        import queue

        self._q: "queue.Queue" = queue.Queue()
        self.closed = False

    def put(self, item) -> None:
        if self.closed:
            raise AdapterClosed("channel closed")
        self._q.put(item)

    def get(self, timeout: float | None = WEDGE_TIMEOUT_S):
        import queue

        if self.closed and self._q.empty():
            raise AdapterClosed("channel closed")
        try:
            return self._q.get(timeout=timeout)
        except queue.Empty:
            raise RendezvousTimeout(f"no event within {timeout}s") from None

    def get_nowait(self):
        import queue

        try:
            return self._q.get_nowait()
        except queue.Empty:
            return None

    def drain(self) -> None:
        while self.get_nowait() is not None:
            pass
