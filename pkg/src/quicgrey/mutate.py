"""Havoc-style input generation over decrypted sequences.

Byte-level operators draw positions inside frame regions; structural
operators splice whole regions with donors drawn from the corpus. Every
applied operator is logged, and replaying the log against the parent
reproduces the mutant byte for byte. Only client-to-server records mutate.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from . import corpus
from .corpus import FRAME, PACKET, Region, SeedRecord, SeedSequence

INTERESTING_8 = [-128, -1, 0, 1, 16, 32, 64, 100, 127]
INTERESTING_16 = INTERESTING_8 + [-32768, -129, 128, 255, 256, 512, 1000, 1024, 4096, 32767]
INTERESTING_32 = INTERESTING_16 + [-2147483648, -100663046, -32769, 32768, 65535, 65536,
                                   100663045, 2147483647]
_INTEREST_TABLE: list[tuple[int, int]] = ([(1, v) for v in INTERESTING_8]
                                          + [(2, v) for v in INTERESTING_16]
                                          + [(4, v) for v in INTERESTING_32])

_BYTE_OPS = ("bitflip", "byteset", "arith", "interest", "blockover", "blockins", "blockdel")
_REGION_OPS = ("regionrep", "regionins", "regiondup", "regiondel")


@dataclass
class MutationBudget:
    stacking_max_pow: int = 6           # 2**U(0..6) ops per mutant, i.e. 1..64
    region_op_probability: float = 0.2
    version_probability: float = 0.05   # long-header version overwrite per mutant
    header_byte_probability: float = 0.02


@dataclass
class MutationOp:
    kind: str
    record: int
    a: int = 0
    b: int = 0
    data: bytes = b""


def format_op(op: MutationOp) -> str:
    return f"{op.kind} {op.record} {op.a} {op.b} {op.data.hex() or '-'}"


def parse_op(line: str) -> MutationOp:
    kind, record, a, b, blob = line.split()
    return MutationOp(kind, int(record), int(a), int(b),
                      b"" if blob == "-" else bytes.fromhex(blob))


def operable_regions(record: SeedRecord) -> list[Region]:
    frames = [r for r in record.regions if r.kind == FRAME]
    if frames:
        return frames
    return [r for r in record.regions if r.kind == PACKET]


def _interest_bytes(idx: int) -> bytes:
    width, value = _INTEREST_TABLE[idx % len(_INTEREST_TABLE)]
    return (value & ((1 << (8 * width)) - 1)).to_bytes(width, "big")


def _insert_bytes(record: SeedRecord, pos: int, blob: bytes) -> None:
    n = len(blob)
    data = bytearray(record.data)
    data[pos:pos] = blob
    record.data = bytes(data)
    for r in record.regions:
        if r.start >= pos:
            r.start += n
            r.end += n
        elif r.start < pos < r.end:
            r.end += n


def _delete_bytes(record: SeedRecord, pos: int, n: int) -> None:
    n = max(0, min(n, len(record.data) - pos))
    if n <= 0:
        return
    data = bytearray(record.data)
    del data[pos:pos + n]
    record.data = bytes(data)

    def remap(x: int) -> int:
        return x if x <= pos else max(pos, x - n)

    survivors = []
    for r in record.regions:
        r.start, r.end = remap(r.start), remap(r.end)
        if r.start < r.end:
            survivors.append(r)
    record.regions = survivors


def _replace_region(record: SeedRecord, region: Region, blob: bytes) -> None:
    old_start, old_end = region.start, region.end
    delta = len(blob) - (old_end - old_start)
    data = bytearray(record.data)
    data[old_start:old_end] = blob
    record.data = bytes(data)
    for r in record.regions:
        if r is region:
            continue
        if r.start >= old_end:
            r.start += delta
            r.end += delta
        elif r.end >= old_end and r.start <= old_start:
            r.end += delta  # containing packet
    region.end = old_start + len(blob)
    if region.start >= region.end:
        record.regions = [r for r in record.regions if r is not region]


def _normalize_regions(record: SeedRecord) -> None:
    """Re-nest frame regions after size-changing arithmetic.

    Coordinate remapping can leave a frame abutting or straddling packet
    boundaries; orphans are dropped and overhangs clamp into their packet so
    the nesting invariant survives arbitrary op stacks.
    """
    packets = [r for r in record.regions if r.kind == PACKET and r.start < r.end]
    kept: list[Region] = list(packets)
    for region in record.regions:
        if region.kind == PACKET:
            continue
        owner = next((p for p in packets if p.start <= region.start < p.end), None)
        if owner is None:
            continue
        region.end = min(region.end, owner.end)
        if region.start < region.end:
            kept.append(region)
    kept.sort(key=lambda r: (r.start, r.kind != PACKET, -r.end))
    record.regions = kept


def apply_op(record: SeedRecord, op: MutationOp) -> None:
    """Apply one operator in place, keeping the region table consistent.

    Out-of-range positions clamp; degenerate operators are identity.
    """
    n = len(record.data)
    if op.kind in ("byteset", "bitflip", "arith", "interest", "blockover", "version"):
        if n == 0:
            return
        pos = min(op.a, n - 1)
        data = bytearray(record.data)
        if op.kind == "bitflip":
            data[pos] ^= 1 << (op.b & 7)
        elif op.kind == "byteset":
            data[pos] = op.b & 0xFF
        elif op.kind == "arith":
            data[pos] = (data[pos] + op.b) & 0xFF
        elif op.kind == "interest":
            blob = _interest_bytes(op.b)
            data[pos:pos + len(blob)] = blob[:n - pos]
        else:  # blockover / version
            data[pos:pos + len(op.data)] = op.data[:n - pos]
        record.data = bytes(data)
        return
    if op.kind == "blockins":
        _insert_bytes(record, min(op.a, n), op.data)
        _normalize_regions(record)
        return
    if op.kind == "blockdel":
        if n == 0:
            return
        _delete_bytes(record, min(op.a, n - 1), op.b)
        _normalize_regions(record)
        return
    regions = operable_regions(record)
    if not regions:
        return
    region = regions[op.a % len(regions)]
    if op.kind == "regionrep":
        _replace_region(record, region, op.data)
    elif op.kind in ("regionins", "regiondup"):
        blob = op.data if op.kind == "regionins" \
            else record.data[region.start:region.end]
        if not blob:
            return
        start = region.start
        kind = region.kind
        _insert_bytes(record, start, blob)
        record.regions.append(Region(start, start + len(blob), kind))
        record.regions.sort(key=lambda r: (r.start, r.kind != PACKET, -r.end))
    elif op.kind == "regiondel":
        _replace_region(record, region, b"")
    else:
        raise ValueError(f"unknown mutation op {op.kind!r}")
    _normalize_regions(record)


_SIZE_CHANGING = {"blockins", "blockdel", "regionrep", "regionins", "regiondup", "regiondel"}


def _draw_byte_op(rec: SeedRecord, ridx: int, rng: random.Random,
                  budget: MutationBudget) -> MutationOp | None:
    regions = operable_regions(rec)
    if not rec.data:
        return None
    if regions and rng.random() < budget.header_byte_probability:
        packets = [r for r in rec.regions if r.kind == PACKET]
        if packets:
            pkt = packets[rng.randrange(len(packets))]
            span = (pkt.start, min(pkt.start + 20, pkt.end))
        else:
            span = (0, min(20, len(rec.data)))
    elif regions:
        r = regions[rng.randrange(len(regions))]
        span = (r.start, r.end)
    else:
        span = (0, len(rec.data))
    if span[0] >= span[1]:
        return None
    pos = rng.randrange(span[0], span[1])
    kind = _BYTE_OPS[rng.randrange(len(_BYTE_OPS))]
    if kind == "bitflip":
        return MutationOp(kind, ridx, pos, rng.randrange(8))
    if kind == "byteset":
        return MutationOp(kind, ridx, pos, rng.randrange(256))
    if kind == "arith":
        delta = rng.randrange(1, 36)
        return MutationOp(kind, ridx, pos, delta if rng.random() < 0.5 else -delta)
    if kind == "interest":
        return MutationOp(kind, ridx, pos, rng.randrange(len(_INTEREST_TABLE)))
    if kind == "blockover":
        return MutationOp(kind, ridx, pos, 0, rng.randbytes(rng.randrange(1, 9)))
    if kind == "blockins":
        return MutationOp(kind, ridx, pos, 0, rng.randbytes(rng.randrange(1, 9)))
    # blockdel
    return MutationOp(kind, ridx, pos, rng.randrange(1, 9))


def _record_essential(seq: SeedSequence, ridx: int, region: Region) -> bool:
    """Deleting this region would empty the only nonempty client record."""
    rec = seq.records[ridx]
    if region.end - region.start < len(rec.data):
        return False
    others = [i for i in seq.client_indices() if i != ridx and seq.records[i].data]
    return not others


def _draw_region_op(seq: SeedSequence, ridx: int, rng: random.Random,
                    donor_pool: list[bytes]) -> MutationOp | None:
    rec = seq.records[ridx]
    regions = operable_regions(rec)
    if not regions:
        return None
    idx = rng.randrange(len(regions))
    kind = _REGION_OPS[rng.randrange(len(_REGION_OPS))]
    if kind == "regiondel" and _record_essential(seq, ridx, regions[idx]):
        return None  # rejected; the stack simply draws fewer effective ops
    if kind in ("regionrep", "regionins"):
        if donor_pool:
            donor = donor_pool[rng.randrange(len(donor_pool))]
        else:
            r = regions[rng.randrange(len(regions))]
            donor = rec.data[r.start:r.end]
        if kind == "regionrep" and not donor and _record_essential(seq, ridx, regions[idx]):
            return None
        return MutationOp(kind, ridx, idx, 0, donor)
    return MutationOp(kind, ridx, idx)


def _draw_version_op(seq: SeedSequence, rng: random.Random) -> MutationOp | None:
    client = seq.client_indices()
    if not client:
        return None
    ridx = client[0]
    data = seq.records[ridx].data
    if len(data) < 6 or not data[0] & 0x80:
        return None
    roll = rng.random()
    if roll < 0.6:
        value = rng.randrange(1 << 32)
    elif roll < 0.85:  # greased: every nibble pair ends in 0xa
        value = int.from_bytes(bytes((rng.randrange(16) << 4) | 0x0A
                                     for _ in range(4)), "big")
    elif roll < 0.95:
        value = 0
    else:
        value = 1
    return MutationOp("version", ridx, 1, 0, value.to_bytes(4, "big"))


def mutate(seq: SeedSequence, rng: random.Random, budget: MutationBudget,
           donor_pool: list[bytes] | None = None) -> tuple[SeedSequence, list[str]]:
    """Produce one mutant and its replayable op log.

    ``(parent, rng state, budget)`` fully determines the result. Degenerate
    draws (no applicable positions) contribute identity, which is valid.
    """
    donor_pool = donor_pool or []
    mutant = seq.clone()
    client = [i for i in mutant.client_indices() if mutant.records[i].data]
    ops: list[MutationOp] = []
    if client:
        count = 2 ** rng.randint(0, budget.stacking_max_pow)
        for _ in range(count):
            ridx = client[rng.randrange(len(client))]
            rec = mutant.records[ridx]
            if rng.random() < budget.region_op_probability:
                op = _draw_region_op(mutant, ridx, rng, donor_pool)
            else:
                op = _draw_byte_op(rec, ridx, rng, budget)
            if op is None:
                continue
            apply_op(rec, op)
            ops.append(op)
        if rng.random() < budget.version_probability:
            op = _draw_version_op(mutant, rng)
            if op is not None:
                apply_op(mutant.records[op.record], op)
                ops.append(op)
    touched = {op.record for op in ops if op.kind in _SIZE_CHANGING}
    for ridx in touched:
        corpus.refresh_frame_regions(mutant.records[ridx])
    mutant.op_log = [format_op(op) for op in ops]
    return mutant, mutant.op_log


def replay_op_log(parent: SeedSequence, op_lines: list[str]) -> SeedSequence:
    """Re-derive a mutant from its parent and logged operators."""
    mutant = parent.clone()
    ops = [parse_op(line) for line in op_lines]
    for op in ops:
        apply_op(mutant.records[op.record], op)
    for ridx in {op.record for op in ops if op.kind in _SIZE_CHANGING}:
        corpus.refresh_frame_regions(mutant.records[ridx])
    mutant.op_log = list(op_lines)
    return mutant


def build_donor_pool(seqs: list[SeedSequence], cap: int = 512) -> list[bytes]:
    """Frame-region byte spans from the whole corpus, for splice donors."""
    pool: list[bytes] = []
    for seq in seqs:
        for idx in seq.client_indices():
            rec = seq.records[idx]
            for region in rec.regions:
                if region.kind == FRAME:
                    pool.append(rec.data[region.start:region.end])
                    if len(pool) >= cap:
                        return pool
    return pool
