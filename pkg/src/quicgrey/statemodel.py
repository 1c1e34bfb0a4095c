"""Response-derived state codes and the inferred protocol state machine.

Decrypting responses lets state feedback see through the packet type into
frame content and TLS handshake message types; undecryptable responses fall
back to header-only packet classes, which is all a ciphertext-level fuzzer
ever observes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from . import codec
from .crypto import EncryptionLevel, PlainPacket

START = 0x0000

CLASS_INITIAL = 1
CLASS_HANDSHAKE = 2
CLASS_ONE_RTT = 3
CLASS_VERSION_NEGO = 4
CLASS_OPAQUE = 15

SIG_NONE = 0
SIG_PING = 1
SIG_ACK = 2
SIG_CRYPTO = 3
SIG_STREAM = 4
SIG_NEW_CID = 5
SIG_CLOSE = 6
SIG_HANDSHAKE_DONE = 7
SIG_RAW = 8

# TLS handshake message types carried in CRYPTO frames.
TLS_CLIENT_HELLO = 1
TLS_SERVER_HELLO = 2
TLS_ENCRYPTED_EXTENSIONS = 8
TLS_CERTIFICATE = 11
TLS_CERTIFICATE_VERIFY = 15
TLS_FINISHED = 20
_KNOWN_TLS = {1, 2, 8, 11, 15, 20}

CLOSE_TRANSPORT = 1
CLOSE_CRYPTO = 2
CLOSE_APPLICATION = 3

_CLASS_FOR_LEVEL = {
    EncryptionLevel.INITIAL: CLASS_INITIAL,
    EncryptionLevel.HANDSHAKE: CLASS_HANDSHAKE,
    EncryptionLevel.ONE_RTT: CLASS_ONE_RTT,
}
_CLASS_FOR_KIND = {
    "initial": CLASS_INITIAL,
    "handshake": CLASS_HANDSHAKE,
    "1rtt": CLASS_ONE_RTT,
    "vn": CLASS_VERSION_NEGO,
}

# Most state-informative frame first; the packet's code carries one signal.
_SIGNAL_PRIORITY = (SIG_CRYPTO, SIG_HANDSHAKE_DONE, SIG_CLOSE, SIG_NEW_CID,
                    SIG_STREAM, SIG_ACK, SIG_PING, SIG_RAW)


def pack_code(packet_class: int, signal: int, detail: int) -> int:
    return (packet_class << 12) | (signal << 4) | detail


def format_code(code: int) -> str:
    return f"0x{code:04x}"


def last_tls_message_type(data: bytes) -> int:
    """Type of the last complete TLS handshake message header in a CRYPTO
    payload; the closing message of a flight is what gates the peer's next
    move. Unknown or absent types map to 0."""
    cursor = 0
    last = 0
    while cursor + 4 <= len(data):
        msg_type = data[cursor]
        length = int.from_bytes(data[cursor + 1:cursor + 4], "big")
        if cursor + 4 + length > len(data):
            break
        last = msg_type if msg_type in _KNOWN_TLS else 0
        cursor += 4 + length
    return last


def close_bucket(frame: codec.ConnectionClose) -> int:
    if frame.frame_type is None:
        return CLOSE_APPLICATION
    if 0x0100 <= frame.error_code <= 0x01FF:
        return CLOSE_CRYPTO
    return CLOSE_TRANSPORT


def _frame_signal(frame: codec.Frame) -> tuple[int, int]:
    if isinstance(frame, codec.Crypto):
        return SIG_CRYPTO, last_tls_message_type(frame.data)
    if isinstance(frame, codec.HandshakeDone):
        return SIG_HANDSHAKE_DONE, 0
    if isinstance(frame, codec.ConnectionClose):
        return SIG_CLOSE, close_bucket(frame)
    if isinstance(frame, codec.NewConnectionId):
        return SIG_NEW_CID, 0
    if isinstance(frame, codec.StreamFrame):
        return SIG_STREAM, 0
    if isinstance(frame, codec.Ack):
        return SIG_ACK, 0
    if isinstance(frame, codec.Ping):
        return SIG_PING, 0
    if isinstance(frame, codec.Raw):
        return SIG_RAW, 0
    return SIG_NONE, 0


def classify(item: PlainPacket | codec.PacketHeader | None) -> int:
    """State code for one response packet."""
    if item is None:
        return pack_code(CLASS_OPAQUE, SIG_NONE, 0)
    if isinstance(item, codec.PacketHeader):
        cls = _CLASS_FOR_KIND.get(item.kind, CLASS_OPAQUE)
        return pack_code(cls, SIG_NONE, 0)
    best = (SIG_NONE, 0)
    best_rank = len(_SIGNAL_PRIORITY)
    for frame in item.frames:
        sig, detail = _frame_signal(frame)
        if sig == SIG_NONE:
            continue
        rank = _SIGNAL_PRIORITY.index(sig)
        if rank < best_rank:
            best_rank = rank
            best = (sig, detail)
    return pack_code(_CLASS_FOR_LEVEL[item.level], best[0], best[1])


def extract_codes(items: list[PlainPacket | codec.PacketHeader | None]) -> list[int]:
    """One state code per response packet, in order."""
    return [classify(item) for item in items]


def is_significant(code: int) -> bool:
    """Whether a code names a protocol state worth a machine node.

    Crypto progress, closure, and handshake completion are stateful; pure
    ack/stream/padding traffic is transient. Bare packet-class codes (the
    only feedback without decryption) always count.
    """
    signal = (code >> 4) & 0xFF
    return signal in (SIG_CRYPTO, SIG_CLOSE, SIG_HANDSHAKE_DONE) or signal == SIG_NONE


def significant_path(codes: list[int]) -> list[int]:
    return [c for c in codes if is_significant(c)]


@dataclass
class NodeStats:
    fuzz_count: int = 0
    selections: int = 0
    discovered_at: int = 0


@dataclass
class StateMachine:
    nodes: dict[int, NodeStats] = field(default_factory=lambda: {START: NodeStats()})
    edges: dict[tuple[int, int], int] = field(default_factory=dict)
    _discoveries: int = 0

    def update(self, codes: list[int], prior: int = START) -> int:
        """Record one run's response codes.

        Returns how many nodes plus edges were new (truthy iff novel).
        """
        added = 0
        current = prior
        for code in significant_path(codes):
            if code not in self.nodes:
                self._discoveries += 1
                self.nodes[code] = NodeStats(discovered_at=self._discoveries)
                added += 1
            edge = (current, code)
            if edge not in self.edges:
                self.edges[edge] = 0
                added += 1
            self.edges[edge] += 1
            current = code
        return added

    def select_target_state(self, rng, w1: float = 1.0, w2: float = 0.5) -> int:
        """Favor rarely fuzzed and recently discovered states.

        ``rng`` is unused by the scoring itself (ties break on the lowest
        code) but kept in the signature so schedulers can swap in stochastic
        policies without changing call sites.
        """
        del rng
        best_code = START
        best_score = -math.inf
        for code in sorted(self.nodes):
            stats = self.nodes[code]
            score = w1 / (1.0 + stats.fuzz_count) + w2 * (0.5 ** stats.selections)
            if score > best_score:
                best_score = score
                best_code = code
        return best_code

    def note_selection(self, code: int, energy: int) -> None:
        stats = self.nodes.get(code)
        if stats is not None:
            stats.selections += 1
            stats.fuzz_count += energy

    def export_edges(self) -> str:
        lines = [f"{format_code(a)} -> {format_code(b)} [{count}]"
                 for (a, b), count in sorted(self.edges.items())]
        return "\n".join(lines) + ("\n" if lines else "")
