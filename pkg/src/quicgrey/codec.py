"""Bit-exact QUIC v1 wire codec: varints, packet headers, frames, datagrams.

Everything here is a pure function over byte buffers. Parsing is total: any
input either yields a structure (unknown frame types fall back to ``Raw``) or
raises ``Truncated``/``Malformed``; nothing loops or asserts on wire data.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .errors import LengthTooSmall, Malformed, Overflow, Truncated, Unrepresentable

VARINT_MAX = (1 << 62) - 1

# Long-header packet type bits (first byte >> 4 & 0x03) for version 1.
T_INITIAL = 0
T_ZERO_RTT = 1
T_HANDSHAKE = 2
T_RETRY = 3

LONG_TYPE_NAMES = {T_INITIAL: "initial", T_ZERO_RTT: "0rtt", T_HANDSHAKE: "handshake", T_RETRY: "retry"}

FT_PADDING = 0x00
FT_PING = 0x01
FT_ACK = 0x02
FT_CRYPTO = 0x06
FT_NEW_CONNECTION_ID = 0x18
FT_CONNECTION_CLOSE = 0x1C
FT_CONNECTION_CLOSE_APP = 0x1D
FT_HANDSHAKE_DONE = 0x1E


def decode_varint(data: bytes, cursor: int = 0) -> tuple[int, int]:
    """Decode a QUIC variable-length integer at ``cursor``.

    Returns ``(value, consumed)`` with ``consumed`` in {1, 2, 4, 8}.
    """
    if cursor >= len(data):
        raise Truncated("varint at end of buffer")
    first = data[cursor]
    length = 1 << (first >> 6)
    if cursor + length > len(data):
        raise Truncated(f"varint needs {length} bytes, {len(data) - cursor} left")
    value = first & 0x3F
    for i in range(1, length):
        value = (value << 8) | data[cursor + i]
    return value, length


def encode_varint(value: int, forced_len: int | None = None) -> bytes:
    """Encode ``value`` as a varint, minimally unless ``forced_len`` is given.

    ``forced_len`` exists so re-serialized packets can reproduce non-minimal
    encodings found in recorded traffic byte-for-byte.
    """
    if value < 0 or value > VARINT_MAX:
        raise Overflow(f"varint value out of range: {value}")
    if value < 1 << 6:
        minimal = 1
    elif value < 1 << 14:
        minimal = 2
    elif value < 1 << 30:
        minimal = 4
    else:
        minimal = 8
    length = minimal if forced_len is None else forced_len
    if length not in (1, 2, 4, 8):
        raise LengthTooSmall(f"invalid varint width {length}")
    if length < minimal:
        raise LengthTooSmall(f"{value} does not fit in {length} bytes")
    prefix = {1: 0x00, 2: 0x40, 4: 0x80, 8: 0xC0}[length]
    out = bytearray(value.to_bytes(length, "big"))
    out[0] |= prefix
    return bytes(out)


@dataclass
class PacketHeader:
    """Parsed QUIC packet header, keeping raw bits for exact re-serialization.

    ``first_byte`` is authoritative for the form/type/reserved/pn-length bits;
    ``packet_number`` holds the wire value at ``pn_length`` bytes and is only
    meaningful once header protection has been removed (or for plaintext
    packet images, which are never masked).
    """

    first_byte: int
    version: int = 0
    dcid: bytes = b""
    scid: bytes = b""
    token: bytes = b""
    length_value: int = 0
    length_enc_len: int = 0
    packet_number: int | None = None
    pn_length: int = 0

    @property
    def is_long(self) -> bool:
        return bool(self.first_byte & 0x80)

    @property
    def long_type(self) -> int | None:
        return (self.first_byte >> 4) & 0x03 if self.is_long else None

    @property
    def is_version_negotiation(self) -> bool:
        return self.is_long and self.version == 0

    @property
    def kind(self) -> str:
        """Classification label: initial/handshake/0rtt/retry/1rtt/vn/alien."""
        if not self.is_long:
            return "1rtt"
        if self.is_version_negotiation:
            return "vn"
        if self.version != 1:
            return "alien"
        return LONG_TYPE_NAMES[self.long_type]


def make_long_header(long_type: int, dcid: bytes, scid: bytes, packet_number: int,
                     pn_length: int = 1, token: bytes = b"", version: int = 1,
                     length_enc_len: int = 2) -> PacketHeader:
    first = 0x80 | 0x40 | (long_type << 4) | (pn_length - 1)
    return PacketHeader(first_byte=first, version=version, dcid=dcid, scid=scid,
                        token=token, packet_number=packet_number, pn_length=pn_length,
                        length_enc_len=length_enc_len)


def make_short_header(dcid: bytes, packet_number: int, pn_length: int = 1) -> PacketHeader:
    return PacketHeader(first_byte=0x40 | (pn_length - 1), dcid=dcid,
                        packet_number=packet_number, pn_length=pn_length)


def parse_header(data: bytes, short_dcid_len: int = 8) -> tuple[PacketHeader, int, int]:
    """Parse a packet header, returning ``(header, payload_offset, pn_offset)``.

    ``pn_offset`` marks where the packet number starts, which is also where
    header-protection sampling is anchored. Short-form headers need the
    connection's DCID length, which QUIC does not encode on the wire.
    """
    if not data:
        raise Truncated("empty packet")
    first = data[0]
    if not first & 0x80:
        end = 1 + short_dcid_len
        if len(data) < end + ((first & 0x03) + 1):
            raise Truncated("short header ends before packet number")
        pn_length = (first & 0x03) + 1
        pn = int.from_bytes(data[end:end + pn_length], "big")
        hdr = PacketHeader(first_byte=first, dcid=data[1:end],
                           packet_number=pn, pn_length=pn_length)
        return hdr, end + pn_length, end

    if len(data) < 7:
        raise Truncated("long header shorter than fixed fields")
    version = struct.unpack_from(">I", data, 1)[0]
    cursor = 5
    dcid_len = data[cursor]
    cursor += 1
    if dcid_len > 20:
        raise Malformed(f"dcid length {dcid_len} exceeds 20")
    if cursor + dcid_len > len(data):
        raise Truncated("dcid")
    dcid = data[cursor:cursor + dcid_len]
    cursor += dcid_len
    if cursor >= len(data):
        raise Truncated("scid length")
    scid_len = data[cursor]
    cursor += 1
    if scid_len > 20:
        raise Malformed(f"scid length {scid_len} exceeds 20")
    if cursor + scid_len > len(data):
        raise Truncated("scid")
    scid = data[cursor:cursor + scid_len]
    cursor += scid_len

    hdr = PacketHeader(first_byte=first, version=version, dcid=dcid, scid=scid)
    if version != 1:
        # Version negotiation (version 0) or an unknown version: structure
        # beyond the CIDs is undefined, so the remainder stays opaque.
        return hdr, cursor, cursor

    long_type = (first >> 4) & 0x03
    if long_type == T_INITIAL:
        token_len, consumed = decode_varint(data, cursor)
        cursor += consumed
        if cursor + token_len > len(data):
            raise Truncated("token")
        hdr.token = data[cursor:cursor + token_len]
        cursor += token_len
    elif long_type == T_RETRY:
        # Retry carries a token and integrity tag, no length or packet number.
        return hdr, cursor, cursor

    length_value, consumed = decode_varint(data, cursor)
    hdr.length_value = length_value
    hdr.length_enc_len = consumed
    cursor += consumed
    pn_offset = cursor
    pn_length = (first & 0x03) + 1
    if pn_offset + pn_length > len(data):
        raise Truncated("packet number")
    hdr.pn_length = pn_length
    hdr.packet_number = int.from_bytes(data[pn_offset:pn_offset + pn_length], "big")
    return hdr, pn_offset + pn_length, pn_offset


def serialize_header(header: PacketHeader, payload_len: int, length_extra: int = 0) -> bytes:
    """Serialize a header for a payload of ``payload_len`` bytes.

    ``length_extra`` is added to the long-header length field (the AEAD tag
    size when building wire packets; zero for plaintext packet images).
    """
    first = header.first_byte
    if not header.is_long:
        pn = (header.packet_number or 0).to_bytes(header.pn_length, "big")
        return bytes([first]) + header.dcid + pn
    out = bytearray([first])
    out += struct.pack(">I", header.version)
    if len(header.dcid) > 20 or len(header.scid) > 20:
        raise Unrepresentable("connection id longer than 20 bytes")
    out.append(len(header.dcid))
    out += header.dcid
    out.append(len(header.scid))
    out += header.scid
    if header.is_version_negotiation or header.version != 1:
        return bytes(out)
    if header.long_type == T_INITIAL:
        out += encode_varint(len(header.token))
        out += header.token
    elif header.token:
        raise Unrepresentable("token is only valid on Initial packets")
    if header.long_type == T_RETRY:
        return bytes(out)
    length_value = header.pn_length + payload_len + length_extra
    forced = header.length_enc_len or None
    try:
        out += encode_varint(length_value, forced)
    except LengthTooSmall:
        out += encode_varint(length_value)
    out += (header.packet_number or 0).to_bytes(header.pn_length, "big")
    return bytes(out)


# --- frames -------------------------------------------------------------


@dataclass
class Padding:
    pass


@dataclass
class Ping:
    pass


@dataclass
class Ack:
    largest_acked: int = 0
    delay: int = 0
    first_range: int = 0
    ranges: list[tuple[int, int]] = field(default_factory=list)


@dataclass
class Crypto:
    offset: int = 0
    data: bytes = b""


@dataclass
class StreamFrame:
    stream_id: int = 0
    offset: int = 0
    fin: bool = False
    data: bytes = b""
    has_offset: bool = False
    has_length: bool = True


@dataclass
class NewConnectionId:
    seq: int = 0
    retire_prior: int = 0
    cid: bytes = b""
    reset_token: bytes = b"\x00" * 16


@dataclass
class ConnectionClose:
    error_code: int = 0
    frame_type: int | None = 0  # None marks the application-close variant
    reason: bytes = b""


@dataclass
class HandshakeDone:
    pass


@dataclass
class Raw:
    """Opaque frame. ``body`` holds the full wire bytes, type varint included,
    so unknown frames survive re-serialization untouched."""

    type_id: int
    body: bytes


Frame = (Padding | Ping | Ack | Crypto | StreamFrame | NewConnectionId
         | ConnectionClose | HandshakeDone | Raw)

_PADDING = Padding()


def _need(payload: bytes, cursor: int, n: int, what: str) -> None:
    if cursor + n > len(payload):
        raise Malformed(f"{what} exceeds payload")


def parse_frames(payload: bytes) -> list[Frame]:
    """Parse decrypted payload bytes into frames.

    Frame types outside the Basic-handshake set land in ``Raw``, which
    swallows the remainder of the payload (unknown types carry no general
    length rule, and preserving bytes beats guessing structure).
    """
    return [f for f, _, _ in parse_frames_spans(payload)]


def parse_frames_spans(payload: bytes) -> list[tuple[Frame, int, int]]:
    """Like :func:`parse_frames` but yields ``(frame, start, end)`` spans."""
    frames: list[tuple[Frame, int, int]] = []
    cursor = 0
    n = len(payload)
    while cursor < n:
        start = cursor
        ftype = payload[cursor]
        if ftype == FT_PADDING:
            # batch the run; padding is fieldless so one instance serves all
            end = cursor + 1
            while end < n and payload[end] == 0:
                end += 1
            frames.extend((_PADDING, i, i + 1) for i in range(cursor, end))
            cursor = end
        elif ftype == FT_PING:
            cursor += 1
            frames.append((Ping(), start, cursor))
        elif ftype == FT_ACK:
            cursor += 1
            largest, c = decode_varint(payload, cursor)
            cursor += c
            delay, c = decode_varint(payload, cursor)
            cursor += c
            count, c = decode_varint(payload, cursor)
            cursor += c
            first_range, c = decode_varint(payload, cursor)
            cursor += c
            if count > n - cursor:
                raise Malformed("ack range count exceeds payload")
            ranges = []
            for _ in range(count):
                gap, c = decode_varint(payload, cursor)
                cursor += c
                rlen, c = decode_varint(payload, cursor)
                cursor += c
                ranges.append((gap, rlen))
            frames.append((Ack(largest, delay, first_range, ranges), start, cursor))
        elif ftype == FT_CRYPTO:
            cursor += 1
            offset, c = decode_varint(payload, cursor)
            cursor += c
            length, c = decode_varint(payload, cursor)
            cursor += c
            _need(payload, cursor, length, "crypto data")
            data = payload[cursor:cursor + length]
            cursor += length
            frames.append((Crypto(offset, data), start, cursor))
        elif 0x08 <= ftype <= 0x0F:
            has_off = bool(ftype & 0x04)
            has_len = bool(ftype & 0x02)
            fin = bool(ftype & 0x01)
            cursor += 1
            stream_id, c = decode_varint(payload, cursor)
            cursor += c
            offset = 0
            if has_off:
                offset, c = decode_varint(payload, cursor)
                cursor += c
            if has_len:
                length, c = decode_varint(payload, cursor)
                cursor += c
                _need(payload, cursor, length, "stream data")
                data = payload[cursor:cursor + length]
                cursor += length
            else:
                data = payload[cursor:]
                cursor = n
            frames.append((StreamFrame(stream_id, offset, fin, data, has_off, has_len), start, cursor))
        elif ftype == FT_NEW_CONNECTION_ID:
            cursor += 1
            seq, c = decode_varint(payload, cursor)
            cursor += c
            retire, c = decode_varint(payload, cursor)
            cursor += c
            _need(payload, cursor, 1, "cid length")
            cid_len = payload[cursor]
            cursor += 1
            if cid_len == 0 or cid_len > 20:
                raise Malformed(f"new_connection_id cid length {cid_len}")
            _need(payload, cursor, cid_len + 16, "cid and reset token")
            cid = payload[cursor:cursor + cid_len]
            cursor += cid_len
            token = payload[cursor:cursor + 16]
            cursor += 16
            frames.append((NewConnectionId(seq, retire, cid, token), start, cursor))
        elif ftype in (FT_CONNECTION_CLOSE, FT_CONNECTION_CLOSE_APP):
            is_app = ftype == FT_CONNECTION_CLOSE_APP
            cursor += 1
            err, c = decode_varint(payload, cursor)
            cursor += c
            inner: int | None = None
            if not is_app:
                inner, c = decode_varint(payload, cursor)
                cursor += c
            rlen, c = decode_varint(payload, cursor)
            cursor += c
            _need(payload, cursor, rlen, "close reason")
            reason = payload[cursor:cursor + rlen]
            cursor += rlen
            frames.append((ConnectionClose(err, inner, reason), start, cursor))
        elif ftype == FT_HANDSHAKE_DONE:
            cursor += 1
            frames.append((HandshakeDone(), start, cursor))
        else:
            type_id, _ = decode_varint(payload, cursor)
            frames.append((Raw(type_id, payload[cursor:]), start, n))
            cursor = n
    return frames


def serialize_frames(frames: list[Frame]) -> bytes:
    out = bytearray()
    for f in frames:
        if isinstance(f, Padding):
            out.append(FT_PADDING)
        elif isinstance(f, Ping):
            out.append(FT_PING)
        elif isinstance(f, Ack):
            out.append(FT_ACK)
            out += encode_varint(f.largest_acked)
            out += encode_varint(f.delay)
            out += encode_varint(len(f.ranges))
            out += encode_varint(f.first_range)
            for gap, rlen in f.ranges:
                out += encode_varint(gap)
                out += encode_varint(rlen)
        elif isinstance(f, Crypto):
            out.append(FT_CRYPTO)
            out += encode_varint(f.offset)
            out += encode_varint(len(f.data))
            out += f.data
        elif isinstance(f, StreamFrame):
            ftype = 0x08 | (0x04 if f.has_offset else 0) | (0x02 if f.has_length else 0) | (0x01 if f.fin else 0)
            out.append(ftype)
            out += encode_varint(f.stream_id)
            if f.has_offset:
                out += encode_varint(f.offset)
            if f.has_length:
                out += encode_varint(len(f.data))
            out += f.data
        elif isinstance(f, NewConnectionId):
            if not 0 < len(f.cid) <= 20 or len(f.reset_token) != 16:
                raise Unrepresentable("bad new_connection_id field sizes")
            out.append(FT_NEW_CONNECTION_ID)
            out += encode_varint(f.seq)
            out += encode_varint(f.retire_prior)
            out.append(len(f.cid))
            out += f.cid
            out += f.reset_token
        elif isinstance(f, ConnectionClose):
            if f.frame_type is None:
                out.append(FT_CONNECTION_CLOSE_APP)
                out += encode_varint(f.error_code)
            else:
                out.append(FT_CONNECTION_CLOSE)
                out += encode_varint(f.error_code)
                out += encode_varint(f.frame_type)
            out += encode_varint(len(f.reason))
            out += f.reason
        elif isinstance(f, HandshakeDone):
            out.append(FT_HANDSHAKE_DONE)
        elif isinstance(f, Raw):
            out += f.body
        else:
            raise Unrepresentable(f"unknown frame object {f!r}")
    return bytes(out)


def assemble_packet(header: PacketHeader, payload: bytes, length_extra: int = 0) -> bytes:
    return serialize_header(header, len(payload), length_extra) + payload


def serialize_packet(header: PacketHeader, frames: list[Frame]) -> bytes:
    """Serialize a plaintext packet image (header + unencrypted frames)."""
    return assemble_packet(header, serialize_frames(frames))


# --- datagrams ----------------------------------------------------------


@dataclass
class SplitPacket:
    header: PacketHeader
    start: int
    end: int
    pn_offset: int       # absolute offset within the datagram
    payload_offset: int  # absolute offset within the datagram
    data: bytes

    @property
    def payload(self) -> bytes:
        return self.data[self.payload_offset - self.start:]


@dataclass
class Datagram:
    packets: list[SplitPacket]
    trailing_padding: int = 0


def split_datagram(data: bytes, short_dcid_len: int = 8) -> Datagram:
    """Split a datagram into coalesced packets.

    Long-form v1 packets are delimited by their length field; a short-form,
    Retry, version-negotiation or unknown-version packet consumes the rest.
    Bytes that cannot start a packet (fixed bit clear on a short form) are
    classified as trailing padding rather than rejected.
    """
    packets: list[SplitPacket] = []
    cursor = 0
    n = len(data)
    while cursor < n:
        first = data[cursor]
        if not first & 0x80 and not first & 0x40:
            return Datagram(packets, n - cursor)
        header, payload_off, pn_off = parse_header(data[cursor:], short_dcid_len)
        if header.is_long and header.version == 1 and header.long_type != T_RETRY:
            end = cursor + pn_off + header.length_value
            if end > n:
                raise Truncated("length field exceeds datagram")
            if header.length_value < header.pn_length:
                raise Malformed("length field shorter than packet number")
        else:
            end = n
        packets.append(SplitPacket(header, cursor, end, cursor + pn_off,
                                   cursor + payload_off, data[cursor:end]))
        cursor = end
    return Datagram(packets, 0)
