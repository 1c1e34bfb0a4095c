"""Variable-length integer codec tests."""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from quicgrey import codec
from quicgrey.errors import LengthTooSmall, Overflow, Truncated

# Worked examples from the transport RFC, re-decoded by hand.
RFC_EXAMPLES = [
    (bytes.fromhex("c2197c5eff14e88c"), 151288809941952652, 8),
    (bytes.fromhex("9d7f3e7d"), 494878333, 4),
    (bytes.fromhex("7bbd"), 15293, 2),
    (bytes.fromhex("25"), 37, 1),
    (bytes.fromhex("4025"), 37, 2),
]


def test_zero_single_byte():
    assert codec.decode_varint(b"\x00") == (0, 1)
    assert codec.encode_varint(0) == b"\x00"


@pytest.mark.parametrize(("encoded", "value", "consumed"), RFC_EXAMPLES)
def test_rfc_worked_examples(encoded, value, consumed):
    assert codec.decode_varint(encoded) == (value, consumed)


def test_nonminimal_two_byte_form():
    # 0x4025 and 0x25 decode to the same value; encode is minimal by default.
    assert codec.decode_varint(b"\x40\x25") == (37, 2)
    assert codec.encode_varint(37) == b"\x25"
    assert codec.encode_varint(37, forced_len=2) == b"\x40\x25"


def test_exhaustive_small_values_and_boundaries():
    values = list(range(1 << 14)) + [1 << 14, (1 << 30) - 1, 1 << 30, (1 << 62) - 1]
    for value in values:
        encoded = codec.encode_varint(value)
        assert len(encoded) in (1, 2, 4, 8)
        decoded, consumed = codec.decode_varint(encoded)
        assert decoded == value
        assert consumed == len(encoded)


def test_overflow():
    with pytest.raises(Overflow):
        codec.encode_varint(1 << 62)
    with pytest.raises(Overflow):
        codec.encode_varint(-1)


def test_forced_len_too_small():
    with pytest.raises(LengthTooSmall):
        codec.encode_varint(64, forced_len=1)
    with pytest.raises(LengthTooSmall):
        codec.encode_varint(5, forced_len=3)


def test_truncated():
    with pytest.raises(Truncated):
        codec.decode_varint(b"")
    with pytest.raises(Truncated):
        codec.decode_varint(b"\xc2\x19")
    with pytest.raises(Truncated):
        codec.decode_varint(b"\x00", cursor=1)


@given(st.integers(min_value=0, max_value=(1 << 62) - 1))
def test_roundtrip(value):
    encoded = codec.encode_varint(value)
    assert codec.decode_varint(encoded) == (value, len(encoded))


@given(st.integers(min_value=0, max_value=(1 << 62) - 1),
       st.sampled_from([1, 2, 4, 8]))
def test_forced_roundtrip(value, width):
    minimal = len(codec.encode_varint(value))
    if width < minimal:
        with pytest.raises(LengthTooSmall):
            codec.encode_varint(value, forced_len=width)
    else:
        encoded = codec.encode_varint(value, forced_len=width)
        assert len(encoded) == width
        assert codec.decode_varint(encoded) == (value, width)


def test_cursor_advances_exactly():
    buf = b"\xff" + codec.encode_varint(12345) + b"\xee"
    value, consumed = codec.decode_varint(buf, cursor=1)
    assert value == 12345
    assert buf[1 + consumed] == 0xEE
