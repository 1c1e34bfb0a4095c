"""AFL-style edge coverage: a 64 KiB hit map with bucketized novelty."""

from __future__ import annotations

import zlib

import numpy as np

MAP_SIZE = 65536

# Saturating hit counts collapse into classic count buckets before novelty
# comparison; each bucket owns one bit so the global map can union them.
_BUCKET_BITS = np.zeros(256, dtype=np.uint8)
for _count in range(1, 256):
    if _count == 1:
        _bit = 1
    elif _count == 2:
        _bit = 2
    elif _count == 3:
        _bit = 4
    elif _count <= 7:
        _bit = 8
    elif _count <= 15:
        _bit = 16
    elif _count <= 31:
        _bit = 32
    elif _count <= 127:
        _bit = 64
    else:
        _bit = 128
    _BUCKET_BITS[_count] = _bit


class Coverage:
    """Target-side edge collector.

    Blocks are labeled strings hashed into 16 bits; an edge is recorded as
    ``(prev >> 1) ^ cur`` like the AFL lineage. ``reset_flow`` pins the prev
    register at every datagram entry so hit patterns do not depend on what
    earlier datagrams executed.
    """

    def __init__(self) -> None:
        self.map = bytearray(MAP_SIZE)
        self._prev = 0
        self._ids: dict[str, int] = {}

    def _block_id(self, label: str) -> int:
        bid = self._ids.get(label)
        if bid is None:
            bid = zlib.crc32(label.encode()) & 0xFFFF
            self._ids[label] = bid
        return bid

    def edge(self, label: str) -> None:
        cur = self._block_id(label)
        idx = ((self._prev >> 1) ^ cur) & 0xFFFF
        hits = self.map[idx]
        if hits < 255:
            self.map[idx] = hits + 1
        self._prev = cur

    def reset_flow(self) -> None:
        self._prev = 0

    def zero(self) -> None:
        self.map = bytearray(MAP_SIZE)
        self._prev = 0

    def snapshot(self) -> bytes:
        return bytes(self.map)


class GlobalMap:
    """Campaign-wide union of bucketized runs; monotone by construction."""

    def __init__(self) -> None:
        self.virgin = np.zeros(MAP_SIZE, dtype=np.uint8)

    def merge(self, run_map: bytes) -> int:
        """Fold one run in; returns how many map entries gained a new bucket."""
        arr = np.frombuffer(run_map, dtype=np.uint8)
        classes = _BUCKET_BITS[arr]
        new = classes & ~self.virgin
        count = int(np.count_nonzero(new))
        if count:
            self.virgin |= classes
        return count

    def would_be_new(self, run_map: bytes) -> int:
        arr = np.frombuffer(run_map, dtype=np.uint8)
        return int(np.count_nonzero(_BUCKET_BITS[arr] & ~self.virgin))

    def edge_count(self) -> int:
        return int(np.count_nonzero(self.virgin))

    def copy_bytes(self) -> bytes:
        return self.virgin.tobytes()
