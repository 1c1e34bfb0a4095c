"""Deterministic reference QUIC v1 server with seeded bugs.

The server speaks the Basic handshake against recorded traffic: TLS payload
bytes are pattern-matched by handshake message type rather than verified, and
every ephemeral value (connection IDs, packet numbers, secrets) is static, so
``(input bytes, bug config)`` fully determines responses, state trajectory,
and the coverage region. Three independently switchable bugs model real
fault classes: a crash while emitting Version Negotiation (reachable without
any valid crypto), a crash when an ACK is processed in the draining state
(requires two inputs in sequence), and a crash on a stream ID outside the
configured stream table (requires authenticated 1-RTT traffic).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from . import codec, corpus, statemodel, sync
from .coverage import Coverage
from .crypto import (CLIENT, SERVER, EncryptionLevel, PlainPacket, SecretSet,
                     format_secrets_text, install_secrets, level_for_header,
                     protect, unprotect)
from .errors import Malformed

# Static values a fuzzing build would patch into the target: secrets,
# connection IDs, packet numbers all start from fixed constants.
STATIC_SECRETS = {
    "hs_client": bytes.fromhex("11" * 32),
    "hs_server": bytes.fromhex("22" * 32),
    "rtt_client": bytes.fromhex("33" * 32),
    "rtt_server": bytes.fromhex("44" * 32),
}
STATIC_DCID0 = bytes.fromhex("a0a1a2a3a4a5a6a7")
STATIC_CLIENT_CID = bytes.fromhex("c0c1c2c3c4c5c6c7")
STATIC_SERVER_CID = bytes.fromhex("5e5d5c5b5a595857")
CID_LEN = 8

MIN_INITIAL_DATAGRAM = 1200

BUG_VN = "vn"
BUG_DRAIN = "drain"
BUG_STREAM = "stream"
KNOWN_BUGS = {BUG_VN, BUG_DRAIN, BUG_STREAM}

CRASH_VN = "vn-log"
CRASH_DRAIN = "ack-drain"
CRASH_STREAM = "stream-null"

# Recorded client flights pad Initial datagrams well above the 1200-byte
# floor so small size-shrinking mutations keep the handshake reachable.
CLIENT_PAD_TO = 1400

AWAIT_INITIAL = "await_initial"
HANDSHAKE_SENT = "handshake_sent"
ESTABLISHED = "established"
DRAINING = "draining"
CLOSED = "closed"


class TargetCrash(Exception):
    """Seeded-bug crash channel; carries the failure identity for dedup."""

    def __init__(self, failure_id: str):
        super().__init__(failure_id)
        self.failure_id = failure_id


@dataclass
class TargetManifest:
    paradigm: str = sync.MODE_RECEIVE_SEND
    init_delay_ms: float = 0.0
    bugs: set[str] = field(default_factory=set)


def parse_manifest(source: str | Path) -> TargetManifest:
    if isinstance(source, Path) or (isinstance(source, str) and "=" not in source):
        text = Path(source).read_text()
    else:
        text = str(source)
    manifest = TargetManifest()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise Malformed(f"manifest line {lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "paradigm":
            if value not in (sync.MODE_RECEIVE_SEND, sync.MODE_RECEIVE_BREAK_SEND):
                raise Malformed(f"manifest paradigm must be rs or rbs, got {value!r}")
            manifest.paradigm = value
        elif key == "init_delay_ms":
            manifest.init_delay_ms = float(value)
        elif key == "bugs":
            bugs = {b.strip() for b in value.split(",") if b.strip()}
            unknown = bugs - KNOWN_BUGS
            if unknown:
                raise Malformed(f"manifest names unknown bugs: {sorted(unknown)}")
            manifest.bugs = bugs
        else:
            raise Malformed(f"manifest line {lineno}: unknown key {key!r}")
    return manifest


def format_manifest(manifest: TargetManifest) -> str:
    return (f"paradigm={manifest.paradigm}\n"
            f"init_delay_ms={manifest.init_delay_ms:g}\n"
            f"bugs={','.join(sorted(manifest.bugs))}\n")


# --- canned TLS handshake messages -------------------------------------------


def _pattern(n: int, salt: int = 13) -> bytes:
    return bytes((i * 7 + salt) & 0xFF for i in range(n))


def tls_message(msg_type: int, body: bytes) -> bytes:
    return bytes([msg_type]) + len(body).to_bytes(3, "big") + body


TLS_CH = tls_message(1, b"\x03\x03" + _pattern(188, 3))
TLS_SH = tls_message(2, b"\x03\x03" + _pattern(86, 5))
TLS_EE = tls_message(8, _pattern(32, 7))
TLS_CERT = tls_message(11, _pattern(320, 9))
TLS_CV = tls_message(15, _pattern(72, 11))
TLS_FIN = tls_message(20, _pattern(36, 15))
SERVER_HS_FLIGHT = TLS_EE + TLS_CERT + TLS_CV + TLS_FIN


def first_tls_type(data: bytes) -> int:
    """Lenient transcript matching: the message type byte is enough, the way
    a target patched to skip verification would accept replayed CRYPTO."""
    return data[0] if len(data) >= 4 else 0


_LEN_BUCKETS = ((0, "0"), (8, "s"), (64, "m"), (512, "l"))


def _bucket(n: int) -> str:
    for bound, name in _LEN_BUCKETS:
        if n <= bound:
            return name
    return "xl"


class ReferenceServer:
    """Single-connection QUIC server driven by adapter callbacks."""

    def __init__(self, manifest: TargetManifest, secrets: SecretSet,
                 cov: Coverage | None = None):
        self.manifest = manifest
        self.base_secrets = secrets
        self.cov = cov if cov is not None else Coverage()
        self.reset()

    def reset(self) -> None:
        self.state = AWAIT_INITIAL
        self.odcid: bytes | None = None
        self.client_cid: bytes = STATIC_CLIENT_CID
        self.secrets: SecretSet | None = None
        self.send_pn = {lvl: 0 for lvl in EncryptionLevel}
        self.largest = {lvl: -1 for lvl in EncryptionLevel}
        self.streams = {0}

    # -- coverage hook

    def _edge(self, label: str) -> None:
        self.cov.edge(label)

    # -- response construction

    def _take_pn(self, level: EncryptionLevel) -> int:
        pn = self.send_pn[level]
        self.send_pn[level] = pn + 1
        return pn

    def _seal(self, level: EncryptionLevel, frames: list[codec.Frame]) -> bytes:
        pn = self._take_pn(level)
        if level == EncryptionLevel.INITIAL:
            header = codec.make_long_header(codec.T_INITIAL, self.client_cid,
                                            STATIC_SERVER_CID, pn)
        elif level == EncryptionLevel.HANDSHAKE:
            header = codec.make_long_header(codec.T_HANDSHAKE, self.client_cid,
                                            STATIC_SERVER_CID, pn)
        else:
            header = codec.make_short_header(self.client_cid, pn)
        payload = codec.serialize_frames(frames)
        plain = PlainPacket(header, level, pn, frames, payload)
        outcome = protect(plain, self.secrets, SERVER)
        if not outcome.protected:
            raise AssertionError(f"server failed to seal its own packet: {outcome.reason}")
        return outcome.data

    def _ack(self, level: EncryptionLevel) -> codec.Ack:
        return codec.Ack(largest_acked=max(self.largest[level], 0), delay=0)

    def _flight_hello(self) -> bytes:
        self._edge("tx:flightA")
        initial = self._seal(EncryptionLevel.INITIAL,
                             [self._ack(EncryptionLevel.INITIAL), codec.Crypto(0, TLS_SH)])
        handshake = self._seal(EncryptionLevel.HANDSHAKE,
                               [codec.Crypto(0, SERVER_HS_FLIGHT)])
        onertt = self._seal(EncryptionLevel.ONE_RTT,
                            [codec.NewConnectionId(1, 0, bytes.fromhex("5d" * 8), _pattern(16, 21)),
                             codec.StreamFrame(3, 0, False, b"svc: greetings", False, True)])
        return initial + handshake + onertt

    def _flight_confirm(self) -> bytes:
        self._edge("tx:flightB")
        handshake = self._seal(EncryptionLevel.HANDSHAKE, [self._ack(EncryptionLevel.HANDSHAKE)])
        onertt = self._seal(EncryptionLevel.ONE_RTT,
                            [self._ack(EncryptionLevel.ONE_RTT), codec.HandshakeDone(),
                             codec.StreamFrame(3, 14, False, b" session up", False, True)])
        return handshake + onertt

    def _ack_datagram(self, level: EncryptionLevel) -> bytes:
        self._edge("tx:ack1rtt")
        return self._seal(level, [self._ack(level)])

    def _version_negotiation(self, header: codec.PacketHeader) -> bytes:
        self._edge("vn:emit")
        if BUG_VN in self.manifest.bugs:
            # Mirrors logging a VN event through a null connection context.
            raise TargetCrash(CRASH_VN)
        vn_header = codec.PacketHeader(first_byte=0xC0, version=0,
                                       dcid=header.scid, scid=STATIC_SERVER_CID)
        return codec.assemble_packet(vn_header, (1).to_bytes(4, "big"))

    # -- input processing

    def handle_datagram(self, data: bytes) -> list[bytes]:
        """Process one datagram; returns response datagrams.

        Packets failing AEAD are discarded without further processing.
        Raises TargetCrash when a seeded bug fires; queued responses die
        with the crash, like the process they model.
        """
        self.cov.reset_flow()
        self._edge("dg:recv")
        if not data:
            self._edge("dg:empty")
            return []
        try:
            dgram = codec.split_datagram(data, CID_LEN)
        except Exception:
            self._edge("dg:split-fail")
            return []
        if dgram.trailing_padding:
            self._edge("dg:tail")
        if not dgram.packets:
            self._edge("dg:no-packets")
            return []
        has_initial = any(p.header.kind == "initial" for p in dgram.packets)
        if has_initial and len(data) < MIN_INITIAL_DATAGRAM:
            self._edge("init:small")
            return []

        out: list[tuple[bool, bytes]] = []  # (standalone, chunk)
        for pkt in dgram.packets:
            self._packet(pkt, out, len(data))
        if not out:
            return []
        # One coalesced datagram per flight keeps the wire shape of a real
        # handshake; version negotiation always travels alone.
        merged: list[bytes] = []
        flight = b"".join(chunk for standalone, chunk in out if not standalone)
        if flight:
            merged.append(flight)
        merged.extend(chunk for standalone, chunk in out if standalone)
        return merged

    def _packet(self, pkt: codec.SplitPacket, out: list[tuple[bool, bytes]],
                datagram_len: int) -> None:
        header = pkt.header
        kind = header.kind
        if kind == "vn":
            self._edge("pkt:vn-in")
            return
        if kind == "alien":
            self._edge("pkt:alien")
            if datagram_len < MIN_INITIAL_DATAGRAM:
                self._edge("vn:too-small")
                return
            out.append((True, self._version_negotiation(header)))
            return
        if not header.first_byte & 0x40:
            self._edge("pkt:fixed-clear")
            return
        if kind in ("retry", "0rtt"):
            self._edge(f"pkt:{kind}")
            return
        self._edge(f"pkt:{kind}")

        level = level_for_header(header)
        if self.secrets is None:
            if kind != "initial":
                self._edge("keys:none")
                return
            try:
                merged = self.base_secrets.with_initial(header.dcid)
            except Exception:
                self._edge("dcid:unusable")
                return
            self.odcid = header.dcid
            if header.scid:
                self.client_cid = header.scid
            self.secrets = merged
            self._edge("dcid:new")
        elif kind == "initial":
            self._edge("dcid:match" if header.dcid == self.odcid else "dcid:mismatch")

        try:
            plain = unprotect(pkt.data, self.secrets, CLIENT, CID_LEN)
        except Exception as exc:
            self._edge(f"aead:{level.name.lower()}:{type(exc).__name__.lower()}")
            return
        self._edge(f"aead:{level.name.lower()}:ok")
        self._edge(f"pn:{level.name.lower()}:{plain.header.pn_length}")
        if plain.packet_number > self.largest[level]:
            self.largest[level] = plain.packet_number

        if self.state == CLOSED:
            self._edge("closed:drop")
            return
        if self.state == DRAINING:
            self._drain_frames(plain)
            return

        eliciting = False
        state_changed = False
        padding_run = 0
        for frame in plain.frames:
            if isinstance(frame, codec.Padding):
                padding_run += 1
                continue
            if padding_run:
                self._edge(f"fr:pad:{_bucket(padding_run)}")
                padding_run = 0
            eliciting |= not isinstance(frame, (codec.Ack, codec.ConnectionClose))
            state_changed |= self._frame(frame, level, out)
            if self.state == DRAINING:
                break
        if padding_run:
            self._edge(f"fr:pad:{_bucket(padding_run)}")

        if (level == EncryptionLevel.ONE_RTT and self.state == HANDSHAKE_SENT
                and eliciting and not state_changed):
            out.append((False, self._ack_datagram(EncryptionLevel.ONE_RTT)))

    def _drain_frames(self, plain: PlainPacket) -> None:
        self._edge("drain:recv")
        for frame in plain.frames:
            if isinstance(frame, codec.Ack):
                self._edge("drain:ack")
                if BUG_DRAIN in self.manifest.bugs:
                    # The draining-stage callback asserts on acknowledgements.
                    raise TargetCrash(CRASH_DRAIN)
            elif not isinstance(frame, codec.Padding):
                self._edge("drain:other")

    def _frame(self, frame: codec.Frame, level: EncryptionLevel,
               out: list[tuple[bool, bytes]]) -> bool:
        """Process one frame; returns True when the connection state moved."""
        state = self.state
        if isinstance(frame, codec.Ping):
            self._edge(f"fr:ping:{state}")
        elif isinstance(frame, codec.Ack):
            self._edge(f"fr:ack:{level.name.lower()}:{state}")
            self._edge(f"fr:ack:ranges:{_bucket(len(frame.ranges))}")
        elif isinstance(frame, codec.Crypto):
            msg_type = first_tls_type(frame.data)
            known = msg_type if msg_type in (1, 2, 8, 11, 15, 20) else "other"
            self._edge(f"fr:crypto:{known}:{state}")
            if frame.offset:
                self._edge("fr:crypto:off")
            if level == EncryptionLevel.INITIAL and msg_type == 1 and state == AWAIT_INITIAL:
                self.state = HANDSHAKE_SENT
                self._edge("st:await->hssent")
                out.append((False, self._flight_hello()))
                return True
            if level == EncryptionLevel.INITIAL and msg_type == 1 and state == HANDSHAKE_SENT:
                self._edge("st:ch-again")
                out.append((False, self._flight_hello()))
                return True
            if level == EncryptionLevel.HANDSHAKE and msg_type == 20 and state == HANDSHAKE_SENT:
                self.state = ESTABLISHED
                self._edge("st:hssent->estab")
                out.append((False, self._flight_confirm()))
                return True
            if msg_type == 20 and state == ESTABLISHED:
                self._edge("st:fin-dup")
        elif isinstance(frame, codec.StreamFrame):
            if level != EncryptionLevel.ONE_RTT:
                self._edge("fr:stream:badlvl")
                return False
            self._edge(f"fr:stream:{state}")
            self._edge(f"fr:stream:len:{_bucket(len(frame.data))}")
            if frame.fin:
                self._edge("fr:stream:fin")
            if frame.offset:
                self._edge("fr:stream:off")
            if state == ESTABLISHED:
                if frame.stream_id in self.streams:
                    self._edge("fr:stream:known")
                else:
                    self._edge("fr:stream:unknown")
                    if BUG_STREAM in self.manifest.bugs:
                        # Stream context lookup misses and dereferences null.
                        raise TargetCrash(CRASH_STREAM)
        elif isinstance(frame, codec.NewConnectionId):
            self._edge(f"fr:ncid:{state}")
        elif isinstance(frame, codec.ConnectionClose):
            self._edge(f"fr:close:{statemodel.close_bucket(frame)}:{state}")
            self.state = DRAINING
            self._edge(f"st:{state}->drain")
            return True
        elif isinstance(frame, codec.HandshakeDone):
            self._edge(f"fr:hsdone:{state}")
        elif isinstance(frame, codec.Raw):
            self._edge(f"fr:raw:{frame.type_id & 0x0F}")
        return False


def run_server_loop(server: ReferenceServer, io, paradigm: str) -> None:
    """Target main loop in either implementation paradigm.

    Receive-send services each datagram then transmits; receive-break-send
    drains its input until would-block before entering the send loop.
    """
    if paradigm == sync.MODE_RECEIVE_SEND:
        while True:
            msg = io.target_recv()
            if msg is sync.KILL:
                return
            if msg is sync.RESET:
                server.reset()
                io.target_reset_done()
                continue
            if msg is sync.DONE:
                io.target_idle()
                continue
            if msg is sync.WOULD_BLOCK:
                continue
            try:
                responses = server.handle_datagram(msg)
            except TargetCrash as crash:
                io.target_crashed(crash.failure_id)
                continue
            for response in responses:
                io.target_send(response)
    else:
        pending: list[bytes] = []
        while True:
            msg = io.target_recv()
            if msg is sync.KILL:
                return
            if msg is sync.RESET:
                pending.clear()
                server.reset()
                io.target_reset_done()
                continue
            if msg is sync.DONE:
                pending.clear()
                io.target_idle()
                continue
            if msg is sync.WOULD_BLOCK:
                for response in pending:
                    io.target_send(response)
                pending.clear()
                continue
            try:
                pending.extend(server.handle_datagram(msg))
            except TargetCrash as crash:
                pending.clear()
                io.target_crashed(crash.failure_id)
                continue


# --- scripted client & session recording -------------------------------------


class ScriptClient:
    """Deterministic client that reproduces the Basic-handshake flights."""

    def __init__(self, secrets: SecretSet, odcid: bytes = STATIC_DCID0,
                 cid: bytes = STATIC_CLIENT_CID, server_cid: bytes = STATIC_SERVER_CID):
        self.secrets = secrets.with_initial(odcid)
        self.odcid = odcid
        self.cid = cid
        self.server_cid = server_cid
        self.pn = {lvl: 0 for lvl in EncryptionLevel}

    def _take_pn(self, level: EncryptionLevel) -> int:
        pn = self.pn[level]
        self.pn[level] = pn + 1
        return pn

    def _seal(self, level: EncryptionLevel, frames: list[codec.Frame],
              dcid: bytes | None = None) -> bytes:
        pn = self._take_pn(level)
        if level == EncryptionLevel.INITIAL:
            header = codec.make_long_header(codec.T_INITIAL, dcid or self.odcid, self.cid, pn)
        elif level == EncryptionLevel.HANDSHAKE:
            header = codec.make_long_header(codec.T_HANDSHAKE, dcid or self.server_cid, self.cid, pn)
        else:
            header = codec.make_short_header(dcid or self.server_cid, pn)
        payload = codec.serialize_frames(frames)
        plain = PlainPacket(header, level, pn, frames, payload)
        outcome = protect(plain, self.secrets, CLIENT)
        if not outcome.protected:
            raise AssertionError(f"client failed to seal: {outcome.reason}")
        return outcome.data

    @staticmethod
    def _pad_frames(frames: list[codec.Frame], datagram_len: int, target: int) -> list[codec.Frame]:
        missing = target - datagram_len
        if missing > 0:
            frames = frames + [codec.Padding()] * missing
        return frames

    def hello_flight(self) -> bytes:
        frames = [codec.Crypto(0, TLS_CH)]
        bare = self._probe_len(EncryptionLevel.INITIAL, frames)
        frames = self._pad_frames(frames, bare, CLIENT_PAD_TO)
        return self._seal(EncryptionLevel.INITIAL, frames)

    def _probe_len(self, level: EncryptionLevel, frames: list[codec.Frame]) -> int:
        # Header/tag overhead is fixed, so one dry serialization sizes padding.
        saved = dict(self.pn)
        data = self._seal(level, frames)
        self.pn = saved
        return len(data)

    def finish_flight(self, include_finished: bool = True,
                      stream_data: bytes = b"client-data") -> bytes:
        initial = self._seal(EncryptionLevel.INITIAL, [codec.Ack(0, 0)])
        hs_frames: list[codec.Frame] = [codec.Ack(0, 0)]
        if include_finished:
            hs_frames.append(codec.Crypto(0, TLS_FIN))
        handshake = self._seal(EncryptionLevel.HANDSHAKE, hs_frames)
        rtt_frames: list[codec.Frame] = [
            codec.Ack(0, 0),
            codec.NewConnectionId(1, 0, bytes.fromhex("c9" * 8), _pattern(16, 33)),
            codec.StreamFrame(0, 0, False, stream_data, False, True),
        ]
        bare = self._probe_len(EncryptionLevel.ONE_RTT, rtt_frames)
        rtt_frames = self._pad_frames(rtt_frames, len(initial) + len(handshake) + bare,
                                      CLIENT_PAD_TO)
        onertt = self._seal(EncryptionLevel.ONE_RTT, rtt_frames)
        return initial + handshake + onertt

    def app_flight(self, data: bytes = b"GET /index", stream_id: int = 0,
                   offset: int = 0, fin: bool = False) -> bytes:
        frame = codec.StreamFrame(stream_id, offset, fin, data, offset > 0, True)
        return self._seal(EncryptionLevel.ONE_RTT, [frame])

    def close_flight(self) -> bytes:
        frames: list[codec.Frame] = [codec.Crypto(0, TLS_CH),
                                     codec.ConnectionClose(0x0A, 0, b"bye")]
        bare = self._probe_len(EncryptionLevel.INITIAL, frames)
        frames = self._pad_frames(frames, bare, CLIENT_PAD_TO)
        return self._seal(EncryptionLevel.INITIAL, frames)

    def ack_initial_flight(self) -> bytes:
        frames: list[codec.Frame] = [codec.Ack(0, 0)]
        bare = self._probe_len(EncryptionLevel.INITIAL, frames)
        frames = self._pad_frames(frames, bare, CLIENT_PAD_TO)
        return self._seal(EncryptionLevel.INITIAL, frames)

    def build(self, step: str) -> bytes:
        if step == "hello":
            return self.hello_flight()
        if step == "finish":
            return self.finish_flight(True)
        if step == "nofin":
            return self.finish_flight(False)
        if step.startswith("app"):
            _, _, text = step.partition(":")
            return self.app_flight(text.encode() if text else b"GET /index")
        if step == "close":
            return self.close_flight()
        if step == "ackinit":
            return self.ack_initial_flight()
        raise Malformed(f"unknown script step {step!r}")


DEFAULT_SCRIPT = ["hello", "finish", "app:GET /index"]


def record_session(script: list[str] | None = None,
                   secrets_values: dict[str, bytes] | None = None
                   ) -> tuple[list[tuple[int, bytes]], str]:
    """Drive a scripted session against a bug-free server and capture it.

    Returns QFSEED1-ready (direction, datagram) records and the secrets
    config text needed to decrypt them later.
    """
    values = dict(secrets_values or STATIC_SECRETS)
    secrets = install_secrets(values)
    server = ReferenceServer(TargetManifest(), secrets)
    client = ScriptClient(secrets)
    records: list[tuple[int, bytes]] = []
    for step in script or DEFAULT_SCRIPT:
        wire = client.build(step)
        records.append((corpus.CLIENT_TO_SERVER, wire))
        for response in server.handle_datagram(wire):
            records.append((corpus.SERVER_TO_CLIENT, response))
    return records, format_secrets_text(values)
