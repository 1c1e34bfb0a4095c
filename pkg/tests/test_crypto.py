"""Packet protection tests against published vectors and property checks.

The key-derivation expectations are the TLS/QUIC standard vectors for DCID
0x8394c8f03e515708, frozen here and cross-checked by an independent
from-scratch HKDF implementation (plain HMAC chaining, no shared code with
the package).
"""

import hashlib
import hmac
import random

import pytest
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from quicgrey import codec, corpus, crypto
from quicgrey.crypto import CLIENT, SERVER, EncryptionLevel
from quicgrey.errors import (AuthFailure, BadHex, Malformed, MissingSlot, NoInitialPacket,
                             NoKeys, UnsupportedVersion, WrongLength)

SAMPLE_DCID = bytes.fromhex("8394c8f03e515708")

VECTORS = {
    "initial_secret": "7db5df06e7a69e432496adedb00851923595221596ae2ae9fb8115c1e9ed0a44",
    "client_secret": "c00cf151ca5be075ed0ebfb5c80323c42d6b7db67881289af4008f1f6c357aea",
    "client_key": "1f369613dd76d5467730efcbe3b1a22d",
    "client_iv": "fa044b2f42a3fd3b46fb255c",
    "client_hp": "9f50449e04a0e810283a1e9933adedd2",
    "server_secret": "3c199828fd139efd216c155ad844cc81fb82fa8d7446fa7d78be803acdda951b",
    "server_key": "cf3a5331653c364c88f0f379b6067e37",
    "server_iv": "0ac1493ca1905853b0bba03e",
    "server_hp": "c206b8d9b9f0f37644430b490eeaa314",
}

# Published protected client-Initial sample fragments (first byte, masked
# packet number, header-protection sample).
PROTECTED_PREFIX = "c000000001088394c8f03e5157080000449e7b9aec34"
HP_SAMPLE = "d1b1c98dd7689fb8ec11d242b123dc9b"

PLAIN_HEADER = bytes.fromhex("c300000001088394c8f03e5157080000449e00000002")
PLAIN_PAYLOAD = bytes.fromhex(
    "060040f1010000ed0303ebf8fa56f12939b9584a3896472ec40bb863cfd3e868"
    "04fe3a47f06a2b69484c00000413011302010000c000000010000e00000b6578"
    "616d706c652e636f6dff01000100000a00080006001d00170018001000070005"
    "04616c706e000500050100000000003300260024001d00209370b2c9caa47fba"
    "baf4559fedba753de171fa71f50f1ce15d43e994ec74d748002b000302030400"
    "0d0010000e0403050306030203080408050806002d00020101001c0002400100"
    "3900320408ffffffffffffffff05048000ffff07048000ffff08011001048000"
    "75300901100f088394c8f03e51570806048000ffff") + bytes(917)


def oracle_hkdf_extract(salt: bytes, ikm: bytes) -> bytes:
    return hmac.new(salt, ikm, hashlib.sha256).digest()


def oracle_hkdf_expand(prk: bytes, info: bytes, length: int) -> bytes:
    out = b""
    block = b""
    i = 1
    while len(out) < length:
        block = hmac.new(prk, block + info + bytes([i]), hashlib.sha256).digest()
        out += block
        i += 1
    return out[:length]


def oracle_expand_label(secret: bytes, label: str, length: int) -> bytes:
    name = b"tls13 " + label.encode()
    info = length.to_bytes(2, "big") + bytes([len(name)]) + name + b"\x00"
    return oracle_hkdf_expand(secret, info, length)


def test_oracle_agrees_with_frozen_vectors():
    # Sanity-check the independent oracle itself before using it.
    initial = oracle_hkdf_extract(crypto.INITIAL_SALT_V1, SAMPLE_DCID)
    assert initial.hex() == VECTORS["initial_secret"]
    client = oracle_expand_label(initial, "client in", 32)
    assert client.hex() == VECTORS["client_secret"]
    assert oracle_expand_label(client, "quic key", 16).hex() == VECTORS["client_key"]


def test_derive_initial_secrets_matches_vectors():
    secrets = crypto.derive_initial_secrets(SAMPLE_DCID)
    ck = secrets.keys_for(EncryptionLevel.INITIAL, CLIENT)
    sk = secrets.keys_for(EncryptionLevel.INITIAL, SERVER)
    assert ck.secret.hex() == VECTORS["client_secret"]
    assert ck.key.hex() == VECTORS["client_key"]
    assert ck.iv.hex() == VECTORS["client_iv"]
    assert ck.hp.hex() == VECTORS["client_hp"]
    assert sk.secret.hex() == VECTORS["server_secret"]
    assert sk.key.hex() == VECTORS["server_key"]
    assert sk.iv.hex() == VECTORS["server_iv"]
    assert sk.hp.hex() == VECTORS["server_hp"]


def test_derivation_deterministic():
    a = crypto.derive_initial_secrets(SAMPLE_DCID)
    b = crypto.derive_initial_secrets(SAMPLE_DCID)
    assert a.keys_for(EncryptionLevel.INITIAL, CLIENT) == b.keys_for(EncryptionLevel.INITIAL, CLIENT)


def test_derivation_rejects_bad_inputs():
    with pytest.raises(UnsupportedVersion):
        crypto.derive_initial_secrets(SAMPLE_DCID, version=2)
    with pytest.raises(Malformed):
        crypto.derive_initial_secrets(b"")
    with pytest.raises(Malformed):
        crypto.derive_initial_secrets(bytes(21))
    # 21-byte DCIDs never reach derivation through the parse layer
    wire = bytes([0xC3]) + (1).to_bytes(4, "big") + bytes([21]) + bytes(40)
    with pytest.raises(Malformed):
        codec.parse_header(wire)


def build_protected_sample() -> bytes:
    """Independent sealing of the published plaintext, cross-checked against
    frozen wire fragments."""
    key = bytes.fromhex(VECTORS["client_key"])
    iv = bytes.fromhex(VECTORS["client_iv"])
    hp = bytes.fromhex(VECTORS["client_hp"])
    nonce = bytes(a ^ b for a, b in zip(iv, (2).to_bytes(12, "big")))
    ciphertext = AESGCM(key).encrypt(nonce, PLAIN_PAYLOAD, PLAIN_HEADER)
    sample = ciphertext[:16]
    assert sample.hex() == HP_SAMPLE
    mask = Cipher(algorithms.AES(hp), modes.ECB()).encryptor().update(sample)[:5]
    wire = bytearray(PLAIN_HEADER + ciphertext)
    wire[0] ^= mask[0] & 0x0F
    for i in range(4):
        wire[18 + i] ^= mask[1 + i]
    assert bytes(wire[:22]).hex() == PROTECTED_PREFIX
    assert len(wire) == 1200
    return bytes(wire)


def test_unprotect_published_client_initial():
    wire = build_protected_sample()
    secrets = crypto.derive_initial_secrets(SAMPLE_DCID)
    plain = crypto.unprotect(wire, secrets, CLIENT)
    assert plain.packet_number == 2
    assert plain.level == EncryptionLevel.INITIAL
    assert plain.plaintext == PLAIN_PAYLOAD
    assert isinstance(plain.frames[0], codec.Crypto)
    assert plain.frames[0].offset == 0
    assert len(plain.frames[0].data) == 241
    assert all(isinstance(f, codec.Padding) for f in plain.frames[1:])
    assert plain.original_ciphertext_len == 1178


def test_protect_reproduces_published_wire():
    wire = build_protected_sample()
    secrets = crypto.derive_initial_secrets(SAMPLE_DCID)
    plain = crypto.unprotect(wire, secrets, CLIENT)
    out = crypto.protect(plain, secrets, CLIENT)
    assert out.protected
    assert out.data == wire


def test_single_bit_corruption_always_rejected():
    wire = bytearray(build_protected_sample())
    secrets = crypto.derive_initial_secrets(SAMPLE_DCID)
    rng = random.Random(99)
    rejected = 0
    for _ in range(1000):
        pos = rng.randrange(22, len(wire))  # any AEAD-protected byte
        bit = 1 << rng.randrange(8)
        wire[pos] ^= bit
        try:
            crypto.unprotect(bytes(wire), secrets, CLIENT)
        except (AuthFailure, Malformed):
            rejected += 1
        finally:
            wire[pos] ^= bit
    assert rejected == 1000


def test_header_protection_mask_involution():
    rng = random.Random(3)
    for _ in range(200):
        hp_key = rng.randbytes(16)
        sample = rng.randbytes(rng.choice([3, 15, 16]))
        mask = crypto.header_protection_mask(hp_key, sample)
        first = rng.randrange(256) | 0x80
        pn = rng.randbytes(4)
        masked_first = first ^ (mask[0] & 0x0F)
        masked_pn = bytes(b ^ m for b, m in zip(pn, mask[1:]))
        assert masked_first ^ (mask[0] & 0x0F) == first
        assert bytes(b ^ m for b, m in zip(masked_pn, mask[1:])) == pn


# --- secrets configuration ----------------------------------------------------


VALID_CONFIG = (
    "# comment line\n"
    "hs_client=" + "11" * 32 + "\n"
    "hs_server=" + "22" * 32 + "  # trailing comment\n"
    "rtt_client=" + "33" * 32 + "\n"
    "rtt_server=" + "44" * 32 + "\n")


def test_install_secrets_valid():
    secrets = crypto.install_secrets(VALID_CONFIG)
    for level in (EncryptionLevel.HANDSHAKE, EncryptionLevel.ONE_RTT):
        for direction in (CLIENT, SERVER):
            keys = secrets.keys_for(level, direction)
            assert len(keys.key) == 16 and len(keys.iv) == 12 and len(keys.hp) == 16
    assert not secrets.has(EncryptionLevel.INITIAL, CLIENT)
    full = secrets.with_initial(SAMPLE_DCID)
    assert full.has(EncryptionLevel.INITIAL, CLIENT)


def test_install_secrets_missing_slot():
    with pytest.raises(MissingSlot):
        crypto.install_secrets("hs_client=" + "11" * 32 + "\n")


def test_install_secrets_bad_hex():
    with pytest.raises(BadHex):
        crypto.install_secrets(VALID_CONFIG.replace("11" * 32, "zz" * 32))


def test_install_secrets_wrong_length():
    with pytest.raises(WrongLength):
        crypto.install_secrets(VALID_CONFIG.replace("11" * 32, "11" * 31))


def test_install_secrets_unknown_key():
    with pytest.raises(Malformed):
        crypto.install_secrets(VALID_CONFIG + "suite=chacha\n")


def test_all_zero_secrets_label_separation():
    zero = {slot: bytes(32) for slot in crypto.SECRET_SLOTS}
    secrets = crypto.install_secrets(zero)
    keys = secrets.keys_for(EncryptionLevel.HANDSHAKE, CLIENT)
    # distinct per label even for an all-zero secret, and matches the oracle
    assert len({keys.key, keys.iv[:12], keys.hp}) == 3
    assert keys.key == oracle_expand_label(bytes(32), "quic key", 16)
    assert keys.iv == oracle_expand_label(bytes(32), "quic iv", 12)
    assert keys.hp == oracle_expand_label(bytes(32), "quic hp", 16)


# --- packet-level properties ---------------------------------------------------


def random_plain_packet(rng: random.Random) -> crypto.PlainPacket:
    level = rng.choice(list(EncryptionLevel))
    pn_length = rng.randrange(1, 5)
    pn = rng.randrange(1 << (8 * pn_length - 2))
    frames = [codec.Ping()] + [codec.Padding()] * rng.randrange(0, 30)
    payload = codec.serialize_frames(frames)
    if level == EncryptionLevel.INITIAL:
        header = codec.make_long_header(codec.T_INITIAL, rng.randbytes(8),
                                        rng.randbytes(8), pn, pn_length)
    elif level == EncryptionLevel.HANDSHAKE:
        header = codec.make_long_header(codec.T_HANDSHAKE, rng.randbytes(8),
                                        rng.randbytes(8), pn, pn_length)
    else:
        header = codec.make_short_header(rng.randbytes(8), pn, pn_length)
    return crypto.PlainPacket(header, level, pn, frames, payload)


def test_protect_unprotect_roundtrip_random_packets(secrets):
    rng = random.Random(11)
    full = secrets.with_initial(SAMPLE_DCID)
    for _ in range(300):
        direction = rng.choice([CLIENT, SERVER])
        plain = random_plain_packet(rng)
        out = crypto.protect(plain, full, direction)
        assert out.protected
        back = crypto.unprotect(out.data, full, direction)
        assert back.packet_number == plain.packet_number
        assert back.plaintext == plain.plaintext
        assert back.level == plain.level


def test_protect_empty_frame_list(secrets):
    full = secrets.with_initial(SAMPLE_DCID)
    header = codec.make_short_header(b"\x01" * 8, 0, 4)
    plain = crypto.PlainPacket(header, EncryptionLevel.ONE_RTT, 0, [], b"")
    out = crypto.protect(plain, full, CLIENT)
    assert out.protected
    back = crypto.unprotect(out.data, full, CLIENT)
    assert back.frames == []
    assert back.plaintext == b""


def test_protect_fallback_on_bad_structure(secrets):
    full = secrets.with_initial(SAMPLE_DCID)
    header = codec.make_long_header(codec.T_HANDSHAKE, b"\x01", b"\x02", 0, token=b"bad")
    plain = crypto.PlainPacket(header, EncryptionLevel.HANDSHAKE, 0, [codec.Ping()], b"\x01")
    out = crypto.protect(plain, full, CLIENT)
    assert not out.protected
    assert out.reason == "Unrepresentable"


def test_protect_never_raises_fuzzed(secrets):
    rng = random.Random(5)
    full = secrets.with_initial(SAMPLE_DCID)
    for _ in range(200):
        header = codec.PacketHeader(first_byte=rng.randrange(256),
                                    version=rng.choice([0, 1, 7]),
                                    dcid=rng.randbytes(rng.randrange(0, 25)),
                                    scid=rng.randbytes(rng.randrange(0, 25)),
                                    token=rng.randbytes(rng.randrange(0, 4)),
                                    packet_number=rng.randrange(1 << 8),
                                    pn_length=rng.randrange(1, 5))
        plain = crypto.PlainPacket(header, rng.choice(list(EncryptionLevel)),
                                   header.packet_number, [], rng.randbytes(rng.randrange(0, 30)))
        out = crypto.protect(plain, full, CLIENT)
        assert isinstance(out.data, bytes)


def test_unprotect_requires_keys(secrets):
    # handshake keys only; initial packet without derivation must fail cleanly
    wire = build_protected_sample()
    with pytest.raises(NoKeys):
        crypto.unprotect(wire, secrets, CLIENT)


# --- sequence level -------------------------------------------------------------


def test_decrypt_sequence_canonical(canonical_capture, secrets):
    records, _ = canonical_capture
    seq = crypto.decrypt_sequence(records, secrets)
    assert len(seq.records) == 5
    directions = [r.direction for r in seq.records]
    assert directions == [0, 1, 0, 1, 0]
    assert sum(1 for r in seq.records if r.direction == corpus.CLIENT_TO_SERVER) == 3
    assert all(not r.protected for r in seq.records)


def test_decrypt_sequence_missing_handshake_keys(canonical_capture):
    records, _ = canonical_capture
    # Handshake/1-RTT secrets that do not match the recording: only the
    # pure-Initial record decrypts, everything touching other levels is opaque.
    wrong = crypto.install_secrets({slot: bytes([0xAB]) * 32 for slot in crypto.SECRET_SLOTS})
    seq = crypto.decrypt_sequence(records, wrong)
    assert not seq.records[0].protected
    assert all(r.protected for r in seq.records[1:])
    assert [len(r.regions) for r in seq.records if r.protected] == [1, 1, 1, 1]


def test_decrypt_sequence_empty_errors(secrets):
    with pytest.raises(NoInitialPacket):
        crypto.decrypt_sequence([], secrets)
    with pytest.raises(NoInitialPacket):
        crypto.decrypt_sequence([(corpus.SERVER_TO_CLIENT, b"\x40" + bytes(20))], secrets)


def test_reprotect_sequence_byte_identical(canonical_capture, secrets):
    records, _ = canonical_capture
    seq = crypto.decrypt_sequence(records, secrets)
    outcomes = crypto.protect_sequence(seq, secrets)
    client_wires = [b for d, b in records if d == corpus.CLIENT_TO_SERVER]
    assert [o.protected for o in outcomes] == [True, True, True]
    assert [o.data for o in outcomes] == client_wires
