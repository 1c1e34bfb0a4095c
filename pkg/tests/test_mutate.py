"""Mutation operator and engine tests."""

import random

from hypothesis import given, settings
from hypothesis import strategies as st

from quicgrey import codec, corpus, mutate
from quicgrey.corpus import FRAME, PACKET, Region, SeedRecord, SeedSequence
from quicgrey.mutate import MutationBudget, MutationOp, apply_op, format_op, parse_op


def test_op_log_roundtrip():
    ops = [
        MutationOp("byteset", 0, 17, 255),
        MutationOp("arith", 2, 5, -12),
        MutationOp("blockins", 0, 3, 0, b"\x01\x02"),
        MutationOp("regiondel", 1, 4),
    ]
    for op in ops:
        assert parse_op(format_op(op)) == op


def test_byteset_on_single_byte_buffer():
    rec = SeedRecord(0, b"\x00", regions=[Region(0, 1, PACKET)])
    apply_op(rec, MutationOp("byteset", 0, 0, 0xFF))
    assert rec.data == b"\xff"
    assert rec.regions[0].span() == (0, 1)


def test_position_clamping():
    rec = SeedRecord(0, b"\x00\x01", regions=[Region(0, 2, PACKET)])
    apply_op(rec, MutationOp("byteset", 0, 99, 0x42))
    assert rec.data == b"\x00\x42"


def test_blockdel_covering_frame_region():
    rec = SeedRecord(0, bytes(range(20)), regions=[
        Region(0, 20, PACKET), Region(4, 8, FRAME), Region(8, 14, FRAME)])
    apply_op(rec, MutationOp("blockdel", 0, 4, 4))
    assert rec.data == bytes(range(4)) + bytes(range(8, 20))
    kinds = [(r.kind, r.span()) for r in rec.regions]
    assert (PACKET, (0, 16)) in kinds
    assert (FRAME, (4, 10)) in kinds       # later frame shifted left by 4
    assert len(rec.regions) == 2           # deleted frame region dropped


def test_blockins_grows_containers():
    rec = SeedRecord(0, bytes(10), regions=[
        Region(0, 10, PACKET), Region(2, 6, FRAME), Region(6, 9, FRAME)])
    apply_op(rec, MutationOp("blockins", 0, 4, 0, b"\xaa\xbb"))
    assert len(rec.data) == 12
    spans = {(r.kind, r.span()) for r in rec.regions}
    assert (PACKET, (0, 12)) in spans
    assert (FRAME, (2, 8)) in spans   # insertion inside grows the frame
    assert (FRAME, (8, 11)) in spans  # following frame shifts


def test_region_insert_before_region_zero():
    rec = SeedRecord(0, bytes(10), regions=[
        Region(0, 10, PACKET), Region(3, 6, FRAME)])
    apply_op(rec, MutationOp("regionins", 0, 0, 0, b"\xee\xff"))
    spans = {(r.kind, r.span()) for r in rec.regions}
    assert (FRAME, (3, 5)) in spans   # donor occupies the old start
    assert (FRAME, (5, 8)) in spans   # prior region 0 shifted right
    assert (PACKET, (0, 12)) in spans
    assert rec.data[3:5] == b"\xee\xff"


def test_region_replace_last_frame_keeps_packet():
    rec = SeedRecord(0, bytes(10), regions=[
        Region(0, 10, PACKET), Region(6, 10, FRAME)])
    apply_op(rec, MutationOp("regionrep", 0, 0, 0, b"\x01\x02\x03\x04\x05\x06"))
    spans = {(r.kind, r.span()) for r in rec.regions}
    assert (PACKET, (0, 12)) in spans
    assert (FRAME, (6, 12)) in spans


def test_region_duplicate_crypto_frame(canonical_seed):
    rec = canonical_seed.records[0]
    crypto_idx = 0  # crypto frame is region 0 in the hello record
    apply_op(rec, MutationOp("regiondup", 0, crypto_idx))
    corpus.refresh_frame_regions(rec)
    packet = [r for r in rec.regions if r.kind == PACKET][0]
    chunk = rec.data[packet.start:packet.end]
    _, payload_off, _ = codec.parse_header(chunk)
    parsed = codec.parse_frames(chunk[payload_off:])
    assert sum(isinstance(f, codec.Crypto) for f in parsed) == 2


def test_mutate_only_touches_client_records(canonical_seed):
    rng = random.Random(0)
    server_before = [canonical_seed.records[i].data
                     for i in (1, 3)]
    for _ in range(50):
        mutant, _ = mutate.mutate(canonical_seed, rng, MutationBudget())
        assert mutant.records[1].data == server_before[0]
        assert mutant.records[3].data == server_before[1]


def test_mutate_determinism(canonical_seed):
    a, ops_a = mutate.mutate(canonical_seed, random.Random(42), MutationBudget())
    b, ops_b = mutate.mutate(canonical_seed, random.Random(42), MutationBudget())
    assert ops_a == ops_b
    assert [r.data for r in a.records] == [r.data for r in b.records]


def test_mutate_replay_property(canonical_seed):
    rng = random.Random(7)
    pool = mutate.build_donor_pool([canonical_seed])
    for _ in range(100):
        mutant, ops = mutate.mutate(canonical_seed, rng, MutationBudget(), pool)
        replayed = mutate.replay_op_log(canonical_seed, ops)
        assert [r.data for r in replayed.records] == [r.data for r in mutant.records]
        assert replayed.parent == canonical_seed.seed_id()


def test_identity_mutant_for_empty_records():
    seq = SeedSequence([SeedRecord(0, b"", protected=True)])
    mutant, ops = mutate.mutate(seq, random.Random(1), MutationBudget())
    assert ops == []
    assert mutant.records[0].data == b""


def test_region_validity_under_random_op_stacks(canonical_seed):
    rng = random.Random(23)
    pool = mutate.build_donor_pool([canonical_seed])
    for _ in range(300):
        mutant, _ = mutate.mutate(canonical_seed, rng,
                                  MutationBudget(region_op_probability=0.5), pool)
        for rec in mutant.records:
            assert corpus.regions_well_formed(rec)


@settings(max_examples=200, deadline=None)
@given(st.randoms(use_true_random=False))
def test_region_validity_hypothesis(rnd):
    rec = SeedRecord(0, bytes(40), regions=[
        Region(0, 25, PACKET), Region(5, 12, FRAME), Region(12, 20, FRAME),
        Region(25, 40, PACKET), Region(30, 38, FRAME)])
    seq = SeedSequence([rec])
    for _ in range(12):
        kind = rnd.choice(["byteset", "bitflip", "blockins", "blockdel",
                           "regionrep", "regionins", "regiondup", "regiondel"])
        op = MutationOp(kind, 0, rnd.randrange(0, 48), rnd.randrange(1, 9),
                        bytes(rnd.randrange(0, 6)))
        apply_op(rec, op)
        assert corpus.regions_well_formed(rec)


def test_version_targeting_hits_version_field(canonical_seed):
    rng = random.Random(3)
    budget = MutationBudget(stacking_max_pow=0, region_op_probability=0,
                            version_probability=1.0)
    seen = set()
    for _ in range(40):
        mutant, ops = mutate.mutate(canonical_seed, rng, budget)
        version_ops = [o for o in ops if o.startswith("version")]
        assert version_ops
        op = parse_op(version_ops[0])
        assert op.record == 0 and op.a == 1 and len(op.data) == 4
        seen.add(op.data)
    # draws include at least one greased and one arbitrary value
    assert len(seen) > 5


def test_version_value_classes(canonical_seed):
    rng = random.Random(11)
    budget = MutationBudget(stacking_max_pow=0, region_op_probability=0,
                            version_probability=1.0)
    values = set()
    for _ in range(300):
        _, ops = mutate.mutate(canonical_seed, rng, budget)
        for line in ops:
            op = parse_op(line)
            if op.kind == "version":
                values.add(int.from_bytes(op.data, "big"))
    assert 0 in values            # version-negotiation classification case
    assert 1 in values            # semantic no-op case
    assert any(v & 0x0F0F0F0F == 0x0A0A0A0A for v in values)  # greased


def test_donor_pool_contents(canonical_seed):
    pool = mutate.build_donor_pool([canonical_seed])
    assert pool
    frame_spans = set()
    for idx in canonical_seed.client_indices():
        rec = canonical_seed.records[idx]
        for region in rec.regions:
            if region.kind == FRAME:
                frame_spans.add(rec.data[region.start:region.end])
    assert set(pool) <= frame_spans
