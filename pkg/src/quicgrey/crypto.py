"""QUIC v1 packet protection for the fuzzing loop.

Initial-level secrets derive from the seed's Destination Connection ID with
the fixed version-1 salt; Handshake and 1-RTT traffic secrets are external
configuration, matching targets patched to static secrets. The only suite is
AES-128-GCM with SHA-256.

Removing protection recovers a plaintext packet image (header with the
length field rewritten to cover the plaintext, packet number in the clear,
decrypted frames). Re-protecting an unmodified image reproduces the original
wire bytes bit-for-bit, which is what lets mutated plaintext pass the
target's AEAD checks.
"""

from __future__ import annotations

import hashlib
import hmac as hmac_mod
from dataclasses import dataclass
from functools import lru_cache
from enum import IntEnum
from pathlib import Path

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from . import codec, corpus
from .errors import (AuthFailure, BadHex, Malformed, MissingSlot, NoInitialPacket,
                     NoKeys, UnsupportedVersion, WrongLength)

INITIAL_SALT_V1 = bytes.fromhex("38762cf7f55934b34d179ae6a4c80cadccbb7f0a")
AEAD_TAG_LEN = 16
SAMPLE_LEN = 16

CLIENT = "client"
SERVER = "server"

SECRET_SLOTS = ("hs_client", "hs_server", "rtt_client", "rtt_server")


class EncryptionLevel(IntEnum):
    INITIAL = 0
    HANDSHAKE = 1
    ONE_RTT = 2


LEVEL_FOR_KIND = {
    "initial": EncryptionLevel.INITIAL,
    "handshake": EncryptionLevel.HANDSHAKE,
    "1rtt": EncryptionLevel.ONE_RTT,
}


def hkdf_extract(salt: bytes, ikm: bytes) -> bytes:
    return hmac_mod.new(salt, ikm, hashlib.sha256).digest()


def hkdf_expand_label(secret: bytes, label: bytes, length: int) -> bytes:
    """TLS 1.3 HKDF-Expand-Label with an empty context."""
    full = b"tls13 " + label
    info = length.to_bytes(2, "big") + bytes([len(full)]) + full + b"\x00"
    okm = b""
    block = b""
    counter = 1
    while len(okm) < length:
        block = hmac_mod.new(secret, block + info + bytes([counter]), hashlib.sha256).digest()
        okm += block
        counter += 1
    return okm[:length]


@dataclass(frozen=True)
class DirectionKeys:
    secret: bytes
    key: bytes
    iv: bytes
    hp: bytes


def _expand(secret: bytes) -> DirectionKeys:
    return DirectionKeys(
        secret=secret,
        key=hkdf_expand_label(secret, b"quic key", 16),
        iv=hkdf_expand_label(secret, b"quic iv", 12),
        hp=hkdf_expand_label(secret, b"quic hp", 16),
    )


class SecretSet:
    """Key material per (encryption level, direction). Immutable once built."""

    def __init__(self, slots: dict[tuple[EncryptionLevel, str], DirectionKeys]):
        self._slots = dict(slots)

    def keys_for(self, level: EncryptionLevel, direction: str) -> DirectionKeys:
        try:
            return self._slots[(level, direction)]
        except KeyError:
            raise NoKeys(f"no keys for {level.name}/{direction}") from None

    def has(self, level: EncryptionLevel, direction: str) -> bool:
        return (level, direction) in self._slots

    def with_initial(self, dcid: bytes, version: int = 1) -> "SecretSet":
        merged = dict(self._slots)
        merged.update(derive_initial_secrets(dcid, version)._slots)
        return SecretSet(merged)

    def ref(self) -> str:
        digest = hashlib.sha256()
        for key in sorted(self._slots, key=lambda k: (int(k[0]), k[1])):
            digest.update(bytes([key[0]]) + key[1].encode() + self._slots[key].secret)
        return digest.hexdigest()[:12]


@lru_cache(maxsize=1024)
def derive_initial_secrets(dcid: bytes, version: int = 1) -> SecretSet:
    """Derive both directions of Initial-level keys from the DCID.

    Pure in (salt, dcid), so results are cached; SecretSet is immutable and
    safe to share.
    """
    if version != 1:
        raise UnsupportedVersion(f"no initial salt for version {version}")
    if not 0 < len(dcid) <= 20:
        raise Malformed(f"dcid length {len(dcid)} outside 1..20")
    initial_secret = hkdf_extract(INITIAL_SALT_V1, dcid)
    return SecretSet({
        (EncryptionLevel.INITIAL, CLIENT): _expand(hkdf_expand_label(initial_secret, b"client in", 32)),
        (EncryptionLevel.INITIAL, SERVER): _expand(hkdf_expand_label(initial_secret, b"server in", 32)),
    })


def parse_secrets_text(text: str) -> dict[str, bytes]:
    values: dict[str, bytes] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise Malformed(f"secrets line {lineno}: expected key=hexvalue")
        key, hexval = (part.strip() for part in line.split("=", 1))
        if key not in SECRET_SLOTS:
            raise Malformed(f"secrets line {lineno}: unknown key {key!r}")
        try:
            raw = bytes.fromhex(hexval)
        except ValueError as exc:
            raise BadHex(f"secrets line {lineno}: {exc}") from exc
        if len(raw) != 32:
            raise WrongLength(f"secrets key {key}: expected 32 bytes, got {len(raw)}")
        values[key] = raw
    return values


def install_secrets(source: str | Path | dict[str, bytes]) -> SecretSet:
    """Build Handshake/1-RTT key material from a secrets config.

    ``source`` may be a path to the line-based config, its text, or an
    already-parsed slot mapping. Initial-level slots stay pending until a
    DCID is known (``SecretSet.with_initial``).
    """
    if isinstance(source, dict):
        values = dict(source)
    else:
        if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and "=" not in source):
            text = Path(source).read_text()
        else:
            text = str(source)
        values = parse_secrets_text(text)
    for slot in SECRET_SLOTS:
        if slot not in values:
            raise MissingSlot(f"secrets config missing {slot}")
    return SecretSet({
        (EncryptionLevel.HANDSHAKE, CLIENT): _expand(values["hs_client"]),
        (EncryptionLevel.HANDSHAKE, SERVER): _expand(values["hs_server"]),
        (EncryptionLevel.ONE_RTT, CLIENT): _expand(values["rtt_client"]),
        (EncryptionLevel.ONE_RTT, SERVER): _expand(values["rtt_server"]),
    })


def format_secrets_text(values: dict[str, bytes]) -> str:
    return "".join(f"{slot}={values[slot].hex()}\n" for slot in SECRET_SLOTS)


# --- packet protection -------------------------------------------------------


@dataclass
class PlainPacket:
    header: codec.PacketHeader
    level: EncryptionLevel
    packet_number: int
    frames: list[codec.Frame]
    plaintext: bytes
    original_ciphertext_len: int | None = None

    def image(self) -> bytes:
        """Plaintext packet image: header + clear packet number + frames."""
        return codec.assemble_packet(self.header, self.plaintext)


@dataclass
class ProtectionOutcome:
    protected: bool
    data: bytes
    reason: str | None = None


def header_protection_mask(hp_key: bytes, sample: bytes) -> bytes:
    """AES-ECB mask for header protection. Short samples are zero-padded so
    the operation stays total; both sides of this codebase apply the same
    rule, so masking remains an involution."""
    if len(sample) < SAMPLE_LEN:
        sample = sample + bytes(SAMPLE_LEN - len(sample))
    enc = Cipher(algorithms.AES(hp_key), modes.ECB()).encryptor()
    return (enc.update(sample) + enc.finalize())[:5]


def _nonce(iv: bytes, packet_number: int) -> bytes:
    pn = packet_number.to_bytes(12, "big")
    return bytes(a ^ b for a, b in zip(iv, pn))


def level_for_header(header: codec.PacketHeader) -> EncryptionLevel | None:
    return LEVEL_FOR_KIND.get(header.kind)


def unprotect(data: bytes, secrets: SecretSet, direction: str,
              short_dcid_len: int = 8) -> PlainPacket:
    """Remove header protection and AEAD from one wire packet.

    ``direction`` names the sender of the packet, selecting whose keys seal
    it. The returned packet number is the wire-truncated value; the fuzzing
    ecosystem runs with static packet numbers, so no window reconstruction
    is attempted.
    """
    header, _, pn_offset = codec.parse_header(data, short_dcid_len)
    level = level_for_header(header)
    if level is None:
        raise NoKeys(f"packet kind {header.kind} has no encryption level")
    keys = secrets.keys_for(level, direction)

    sample = data[pn_offset + 4:pn_offset + 4 + SAMPLE_LEN]
    mask = header_protection_mask(keys.hp, sample)
    first = data[0] ^ (mask[0] & (0x0F if header.is_long else 0x1F))
    pn_length = (first & 0x03) + 1
    if pn_offset + pn_length > len(data):
        raise Malformed("packet number extends past packet")
    pn_bytes = bytes(b ^ m for b, m in zip(data[pn_offset:pn_offset + pn_length], mask[1:]))
    packet_number = int.from_bytes(pn_bytes, "big")

    if header.is_long:
        end = pn_offset + header.length_value
        if end > len(data) or header.length_value < pn_length + AEAD_TAG_LEN:
            raise Malformed("length field does not cover number and tag")
    else:
        end = len(data)
    ciphertext = data[pn_offset + pn_length:end]
    if len(ciphertext) < AEAD_TAG_LEN:
        raise Malformed("ciphertext shorter than AEAD tag")
    aad = bytes([first]) + data[1:pn_offset] + pn_bytes
    try:
        plaintext = AESGCM(keys.key).decrypt(_nonce(keys.iv, packet_number), ciphertext, aad)
    except InvalidTag as exc:
        raise AuthFailure(f"{level.name} packet pn={packet_number}") from exc

    clear = codec.PacketHeader(
        first_byte=first, version=header.version, dcid=header.dcid, scid=header.scid,
        token=header.token, length_value=pn_length + len(plaintext),
        length_enc_len=header.length_enc_len, packet_number=packet_number,
        pn_length=pn_length)
    return PlainPacket(clear, level, packet_number, codec.parse_frames(plaintext),
                       plaintext, original_ciphertext_len=len(ciphertext))


def protect(plain: PlainPacket, secrets: SecretSet, direction: str) -> ProtectionOutcome:
    """Apply AEAD and header protection to a plaintext packet.

    Never raises: structural failures fall back to sending the serialized
    plaintext as-is, tagged with a reason. Unencrypted sends are a valid
    outcome; they simply tend not to earn coverage.
    """
    try:
        payload = plain.plaintext if plain.plaintext is not None else codec.serialize_frames(plain.frames)
        keys = secrets.keys_for(plain.level, direction)
        header_bytes = codec.serialize_header(plain.header, len(payload), length_extra=AEAD_TAG_LEN)
        pn_length = plain.header.pn_length
        pn_offset = len(header_bytes) - pn_length
        ciphertext = AESGCM(keys.key).encrypt(
            _nonce(keys.iv, plain.packet_number), payload, header_bytes)
        wire = bytearray(header_bytes + ciphertext)
        sample = bytes(wire[pn_offset + 4:pn_offset + 4 + SAMPLE_LEN])
        mask = header_protection_mask(keys.hp, sample)
        wire[0] ^= mask[0] & (0x0F if plain.header.is_long else 0x1F)
        for i in range(pn_length):
            wire[pn_offset + i] ^= mask[1 + i]
        return ProtectionOutcome(True, bytes(wire))
    except Exception as exc:  # fallback totality is part of the contract
        residue = plain.plaintext if plain.plaintext is not None else b""
        try:
            residue = plain.image()
        except Exception:
            pass
        return ProtectionOutcome(False, residue, reason=type(exc).__name__)


# --- record/sequence level ----------------------------------------------------


def first_initial_dcid(data: bytes, short_dcid_len: int = 8) -> bytes | None:
    try:
        dgram = codec.split_datagram(data, short_dcid_len)
    except Exception:
        return None
    for pkt in dgram.packets:
        if pkt.header.kind == "initial" and pkt.header.dcid:
            return pkt.header.dcid
    return None


def decrypt_record(data: bytes, secrets: SecretSet, direction: str,
                   short_dcid_len: int = 8) -> tuple[bytes, list[PlainPacket]] | None:
    """Decrypt one datagram into its plaintext image.

    Returns None when any packet fails to decrypt; such records stay opaque.
    Trailing padding bytes survive verbatim.
    """
    try:
        dgram = codec.split_datagram(data, short_dcid_len)
    except Exception:
        return None
    if not dgram.packets:
        return None
    image = bytearray()
    plains = []
    for pkt in dgram.packets:
        try:
            plain = unprotect(pkt.data, secrets, direction, short_dcid_len)
        except Exception:
            return None
        plains.append(plain)
        image += plain.image()
    if dgram.trailing_padding:
        image += data[len(data) - dgram.trailing_padding:]
    return bytes(image), plains


def protect_record(data: bytes, regions: list[corpus.Region], secrets: SecretSet,
                   direction: str, short_dcid_len: int = 8) -> ProtectionOutcome:
    """Re-protect a plaintext record image for the wire.

    Packet boundaries come from the region table (mutation keeps it aligned),
    not from embedded length fields, so size-changing mutations still produce
    sealable packets. Any structural failure falls back to sending the
    plaintext unencrypted.
    """
    if not data:
        return ProtectionOutcome(True, b"")  # empty datagram, nothing to seal
    spans = [r.span() for r in regions if r.kind == corpus.PACKET]
    if not spans:
        return ProtectionOutcome(False, data, reason="NoPacketRegions")
    out = bytearray()
    for start, end in spans:
        chunk = data[start:end]
        try:
            header, payload_offset, _ = codec.parse_header(chunk, short_dcid_len)
            level = level_for_header(header)
            if level is None:
                raise NoKeys(header.kind)
            plain = PlainPacket(header, level, header.packet_number or 0, [],
                                chunk[payload_offset:])
            outcome = protect(plain, secrets, direction)
            if not outcome.protected:
                return ProtectionOutcome(False, data, reason=outcome.reason)
            out += outcome.data
        except Exception as exc:
            return ProtectionOutcome(False, data, reason=type(exc).__name__)
    tail = data[spans[-1][1]:]
    out += tail
    return ProtectionOutcome(True, bytes(out))


def decrypt_sequence(raw_records: list[tuple[int, bytes]], secrets: SecretSet,
                     short_dcid_len: int = 8) -> corpus.SeedSequence:
    """Decrypt a recorded session into a mutable plaintext seed.

    The first client record must contain an Initial packet; its DCID drives
    Initial-secret derivation for the whole sequence. Records that fail to
    decrypt are kept opaque (wire bytes, one whole-buffer region).
    """
    dcid = None
    for direction, data in raw_records:
        if direction == corpus.CLIENT_TO_SERVER:
            dcid = first_initial_dcid(data, short_dcid_len)
            break
    if dcid is None:
        raise NoInitialPacket("no client Initial packet in sequence")
    full = secrets.with_initial(dcid)

    records = []
    for direction, data in raw_records:
        sender = CLIENT if direction == corpus.CLIENT_TO_SERVER else SERVER
        decrypted = decrypt_record(data, full, sender, short_dcid_len)
        if decrypted is None:
            rec = corpus.SeedRecord(direction, data, protected=True)
        else:
            rec = corpus.SeedRecord(direction, decrypted[0], protected=False)
        corpus.refresh_regions(rec, short_dcid_len)
        records.append(rec)
    return corpus.SeedSequence(records, secrets_ref=full.ref())


def record_dcid(rec: corpus.SeedRecord, short_dcid_len: int = 8) -> bytes | None:
    """DCID of the record's first Initial packet, reading packet boundaries
    from the region table so stale length fields in mutated plaintext do not
    matter. Falls back to length-field splitting for region-less records."""
    spans = [r.span() for r in rec.regions if r.kind == corpus.PACKET]
    if not spans:
        return first_initial_dcid(rec.data, short_dcid_len)
    for start, end in spans:
        try:
            header, _, _ = codec.parse_header(rec.data[start:end], short_dcid_len)
        except Exception:
            continue
        if header.kind == "initial" and header.dcid:
            return header.dcid
    return None


def sequence_dcid(seq: corpus.SeedSequence, short_dcid_len: int = 8) -> bytes | None:
    """Current DCID of the first client Initial packet, if recoverable."""
    for idx in seq.client_indices():
        rec = seq.records[idx]
        if not rec.protected:
            return record_dcid(rec, short_dcid_len)
        break
    return None


def sequence_secrets(seq: corpus.SeedSequence, secrets: SecretSet,
                     short_dcid_len: int = 8) -> SecretSet:
    """Secrets with Initial keys derived from the sequence's own DCID.

    This mirrors the target's derivation, so DCID mutations stay
    authenticable and the target's Initial-level responses stay readable.
    """
    dcid = sequence_dcid(seq, short_dcid_len)
    return secrets.with_initial(dcid) if dcid else secrets


def protect_sequence(seq: corpus.SeedSequence, secrets: SecretSet,
                     short_dcid_len: int = 8) -> list[ProtectionOutcome]:
    """Protect every client record of a seed for transmission."""
    full = sequence_secrets(seq, secrets, short_dcid_len)

    outcomes = []
    for idx in seq.client_indices():
        rec = seq.records[idx]
        if rec.protected:
            outcomes.append(ProtectionOutcome(True, rec.data, reason="passthrough"))
        else:
            outcomes.append(protect_record(rec.data, rec.regions, full, CLIENT, short_dcid_len))
    return outcomes


def decrypt_response(data: bytes, secrets: SecretSet | None,
                     short_dcid_len: int = 8) -> list[PlainPacket | codec.PacketHeader | None]:
    """Classify a response datagram for state feedback.

    Per packet: a PlainPacket when decryption succeeds, the parsed header
    when only the unprotected fields are readable (no keys, auth failure, or
    crypto disabled), and None when even the header is unreadable.
    """
    try:
        dgram = codec.split_datagram(data, short_dcid_len)
    except Exception:
        return [None] if data else []
    items: list[PlainPacket | codec.PacketHeader | None] = []
    for pkt in dgram.packets:
        plain = None
        if secrets is not None:
            try:
                plain = unprotect(pkt.data, secrets, SERVER, short_dcid_len)
            except Exception:
                plain = None
        items.append(plain if plain is not None else pkt.header)
    return items
