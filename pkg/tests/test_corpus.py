"""Seed container, region table, and artifact persistence tests."""

import pytest

from quicgrey import corpus
from quicgrey.errors import BadMagic, CorruptArtifact, TruncatedRecord


def test_capture_roundtrip(canonical_capture, tmp_path):
    records, _ = canonical_capture
    path = tmp_path / "session.seed"
    corpus.export_capture(records, path)
    loaded = corpus.import_capture(path)
    assert loaded == records


def test_capture_record_order_and_shape(canonical_capture):
    records, _ = canonical_capture
    assert len(records) == 5
    assert [direction for direction, _ in records] == [0, 1, 0, 1, 0]


def test_empty_file_bad_magic(tmp_path):
    path = tmp_path / "empty.seed"
    path.write_bytes(b"")
    with pytest.raises(BadMagic):
        corpus.import_capture(path)


def test_wrong_magic(tmp_path):
    path = tmp_path / "bad.seed"
    path.write_bytes(b"NOTSEED1" + bytes(10))
    with pytest.raises(BadMagic):
        corpus.import_capture(path)


def test_truncated_record(tmp_path):
    blob = corpus.serialize_capture([(0, b"abc")])
    path = tmp_path / "trunc.seed"
    path.write_bytes(blob[:-2])
    with pytest.raises(TruncatedRecord):
        corpus.import_capture(path)


def test_record_length_field_exceeding_file(tmp_path):
    path = tmp_path / "lie.seed"
    path.write_bytes(corpus.MAGIC + b"\x00" + (100).to_bytes(4, "big") + b"short")
    with pytest.raises(TruncatedRecord):
        corpus.import_capture(path)


# --- regions ------------------------------------------------------------------


def test_build_regions_collapses_padding(canonical_seed):
    rec0 = canonical_seed.records[0]
    packets = [r for r in rec0.regions if r.kind == corpus.PACKET]
    frames = [r for r in rec0.regions if r.kind == corpus.FRAME]
    assert len(packets) == 1
    assert len(frames) == 2  # crypto frame + one collapsed padding run
    assert packets[0].span() == (0, len(rec0.data))


def test_build_regions_coalesced_packets(canonical_seed):
    rec2 = canonical_seed.records[2]
    packets = [r.span() for r in rec2.regions if r.kind == corpus.PACKET]
    assert len(packets) == 3
    # contiguous, non-overlapping, covering the record
    assert packets[0][0] == 0
    for (a_start, a_end), (b_start, b_end) in zip(packets, packets[1:]):
        assert a_end == b_start
    assert packets[-1][1] == len(rec2.data)


def test_opaque_record_single_region():
    rec = corpus.SeedRecord(0, b"\x00\x01\x02", protected=True)
    corpus.refresh_regions(rec)
    assert [r.kind for r in rec.regions] == [corpus.PACKET]
    assert rec.regions[0].span() == (0, 3)


def test_unparseable_record_single_region():
    rec = corpus.SeedRecord(0, b"\xff\xfe\xfd", protected=False)
    corpus.refresh_regions(rec)
    assert len([r for r in rec.regions if r.kind == corpus.PACKET]) == 1


def test_regions_well_nested(canonical_seed):
    for rec in canonical_seed.records:
        assert corpus.regions_well_formed(rec)


def test_refresh_frame_regions_respects_packet_table(canonical_seed):
    rec = canonical_seed.records[0]
    before = [r.span() for r in rec.regions if r.kind == corpus.PACKET]
    corpus.refresh_frame_regions(rec)
    after = [r.span() for r in rec.regions if r.kind == corpus.PACKET]
    assert before == after
    assert corpus.regions_well_formed(rec)


# --- artifacts ------------------------------------------------------------------


def test_save_and_load_artifact(canonical_seed, canonical_capture, tmp_path):
    _, secrets_text = canonical_capture
    prefix = corpus.save_interesting(canonical_seed, "NewCoverage", tmp_path,
                                     secrets_text, {"timestamp": "17", "mode": "full"})
    assert prefix.with_suffix(".seed").exists()
    assert prefix.with_suffix(".secrets").exists()
    assert prefix.with_suffix(".meta").exists()
    loaded, text, meta = corpus.load_artifact(prefix)
    assert text == secrets_text
    assert meta["outcome"] == "NewCoverage"
    assert meta["timestamp"] == "17"
    assert [r.data for r in loaded.records] == [r.data for r in canonical_seed.records]
    assert [r.protected for r in loaded.records] == [False] * 5


def test_save_deduplicates_by_content(canonical_seed, tmp_path):
    p1 = corpus.save_interesting(canonical_seed, "NewCoverage", tmp_path, "s=1")
    marker = p1.with_suffix(".meta").read_text()
    p2 = corpus.save_interesting(canonical_seed, "Crash", tmp_path, "s=1")
    assert p1 == p2
    assert p1.with_suffix(".meta").read_text() == marker  # second save is a no-op
    assert len(list(tmp_path.glob("*.seed"))) == 1


def test_save_records_op_log_one_per_line(canonical_seed, tmp_path):
    seq = canonical_seed.clone()
    seq.op_log = ["byteset 0 10 255 -", "regiondup 0 1 0 -"]
    prefix = corpus.save_interesting(seq, "NewState", tmp_path, "")
    meta = prefix.with_suffix(".meta").read_text().splitlines()
    assert "ops=2" in meta
    assert "op=byteset 0 10 255 -" in meta
    assert "op=regiondup 0 1 0 -" in meta
    loaded, _, _ = corpus.load_artifact(prefix)
    assert loaded.op_log == seq.op_log


def test_opaque_flags_survive_roundtrip(baseline_seed, tmp_path):
    prefix = corpus.save_interesting(baseline_seed, "Crash", tmp_path, "")
    loaded, _, meta = corpus.load_artifact(prefix)
    assert all(r.protected for r in loaded.records)
    assert meta.get("opaque") == "0,1,2,3,4"


def test_load_artifact_missing_piece(canonical_seed, tmp_path):
    prefix = corpus.save_interesting(canonical_seed, "Crash", tmp_path, "")
    prefix.with_suffix(".secrets").unlink()
    with pytest.raises(CorruptArtifact):
        corpus.load_artifact(prefix)


def test_load_artifact_corrupt_seed(canonical_seed, tmp_path):
    prefix = corpus.save_interesting(canonical_seed, "Crash", tmp_path, "")
    seed_file = prefix.with_suffix(".seed")
    seed_file.write_bytes(seed_file.read_bytes()[:-4])
    with pytest.raises(CorruptArtifact):
        corpus.load_artifact(prefix)


def test_seed_id_stable(canonical_seed):
    assert canonical_seed.seed_id() == canonical_seed.seed_id()
    mutant = canonical_seed.clone()
    assert mutant.seed_id() == canonical_seed.seed_id()
    rec = mutant.records[0]
    rec.data = rec.data[:-1] + bytes([rec.data[-1] ^ 1])
    assert mutant.seed_id() != canonical_seed.seed_id()
    assert mutant.parent == canonical_seed.seed_id()


def test_artifact_preserves_packet_spans(canonical_seed, tmp_path):
    # size-mutated records have packet spans that embedded length fields
    # no longer describe; a reloaded artifact must keep the saved table
    import random

    from quicgrey import mutate

    rng = random.Random(8)
    budget = mutate.MutationBudget(region_op_probability=0.5)
    for _ in range(50):
        mutant, _ = mutate.mutate(canonical_seed, rng, budget,
                                  mutate.build_donor_pool([canonical_seed]))
        prefix = corpus.save_interesting(mutant, "NewCoverage", tmp_path, "")
        loaded, _, _ = corpus.load_artifact(prefix)
        for orig, back in zip(mutant.records, loaded.records):
            orig_spans = [r.span() for r in orig.regions if r.kind == corpus.PACKET]
            back_spans = [r.span() for r in back.regions if r.kind == corpus.PACKET]
            assert orig_spans == back_spans
