"""Seed ingestion, region modeling, and artifact persistence.

A seed is an ordered, direction-tagged list of datagram records. In crypto
mode records hold decrypted packet images and carry a region table (packet
and frame byte spans) that mutation operators use as operands; opaque records
keep their wire bytes and a single whole-buffer region.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

from . import codec
from .errors import BadMagic, CorruptArtifact, IoFailure, TruncatedRecord

MAGIC = b"QFSEED1\n"

CLIENT_TO_SERVER = 0
SERVER_TO_CLIENT = 1

PACKET = "packet"
FRAME = "frame"


@dataclass
class Region:
    start: int
    end: int
    kind: str  # PACKET or FRAME

    def span(self) -> tuple[int, int]:
        return (self.start, self.end)


@dataclass
class SeedRecord:
    direction: int
    data: bytes
    regions: list[Region] = field(default_factory=list)
    protected: bool = False  # True: wire bytes (opaque); False: plaintext image


@dataclass
class Scores:
    new_edges: int = 0
    new_states: int = 0
    selections: int = 0


@dataclass
class SeedSequence:
    records: list[SeedRecord]
    secrets_ref: str = ""
    parent: str | None = None
    op_log: list[str] = field(default_factory=list)
    scores: Scores = field(default_factory=Scores)
    codes: list[int] = field(default_factory=list)  # state trace from defining run

    def client_indices(self) -> list[int]:
        return [i for i, r in enumerate(self.records) if r.direction == CLIENT_TO_SERVER]

    def seed_id(self) -> str:
        return hashlib.sha256(serialize_capture(
            [(r.direction, r.data) for r in self.records])).hexdigest()[:16]

    def clone(self) -> "SeedSequence":
        records = [SeedRecord(r.direction, r.data,
                              [Region(g.start, g.end, g.kind) for g in r.regions],
                              r.protected)
                   for r in self.records]
        return SeedSequence(records, secrets_ref=self.secrets_ref,
                            parent=self.seed_id())


# --- QFSEED1 container ----------------------------------------------------


def serialize_capture(records: list[tuple[int, bytes]]) -> bytes:
    out = bytearray(MAGIC)
    for direction, payload in records:
        out.append(direction & 0x01)
        out += struct.pack(">I", len(payload))
        out += payload
    return bytes(out)


def parse_capture(blob: bytes) -> list[tuple[int, bytes]]:
    if len(blob) < len(MAGIC) or blob[:len(MAGIC)] != MAGIC:
        raise BadMagic("not a QFSEED1 file")
    records = []
    cursor = len(MAGIC)
    while cursor < len(blob):
        if cursor + 5 > len(blob):
            raise TruncatedRecord("record header truncated")
        direction = blob[cursor]
        length = struct.unpack_from(">I", blob, cursor + 1)[0]
        cursor += 5
        if cursor + length > len(blob):
            raise TruncatedRecord("record payload exceeds file size")
        records.append((direction, blob[cursor:cursor + length]))
        cursor += length
    return records


def import_capture(path: str | Path) -> list[tuple[int, bytes]]:
    """Load raw (direction, bytes) records from a QFSEED1 capture file."""
    return parse_capture(Path(path).read_bytes())


def export_capture(records: list[tuple[int, bytes]], path: str | Path) -> None:
    Path(path).write_bytes(serialize_capture(records))


# --- regions ----------------------------------------------------------------


def build_regions(data: bytes, short_dcid_len: int = 8) -> list[Region]:
    """Build packet/frame regions for a plaintext record image.

    Runs of padding frames collapse into one region; a record that does not
    split cleanly gets a single whole-buffer region.
    """
    if not data:
        return []
    try:
        dgram = codec.split_datagram(data, short_dcid_len)
    except Exception:
        return [Region(0, len(data), PACKET)]
    if not dgram.packets:
        return [Region(0, len(data), PACKET)]
    regions: list[Region] = []
    for pkt in dgram.packets:
        regions.append(Region(pkt.start, pkt.end, PACKET))
        base = pkt.payload_offset
        try:
            spans = codec.parse_frames_spans(pkt.payload)
        except Exception:
            continue
        run_start: int | None = None
        run_end = 0
        for frame, s, e in spans:
            if isinstance(frame, codec.Padding):
                if run_start is None:
                    run_start = s
                run_end = e
                continue
            if run_start is not None:
                regions.append(Region(base + run_start, base + run_end, FRAME))
                run_start = None
            regions.append(Region(base + s, base + e, FRAME))
        if run_start is not None:
            regions.append(Region(base + run_start, base + run_end, FRAME))
    return regions


def refresh_regions(record: SeedRecord, short_dcid_len: int = 8) -> None:
    if record.protected:
        record.regions = [Region(0, len(record.data), PACKET)] if record.data else []
    else:
        record.regions = build_regions(record.data, short_dcid_len)


def refresh_frame_regions(record: SeedRecord, short_dcid_len: int = 8) -> None:
    """Rebuild frame regions inside the existing packet spans.

    Mutation keeps packet spans aligned arithmetically; embedded length
    fields may be stale after size-changing operators, so packet boundaries
    are trusted from the table and only the frame layer is re-parsed. Packets
    whose contents no longer parse simply lose their frame regions.
    """
    packets = [r for r in record.regions if r.kind == PACKET]
    fresh: list[Region] = []
    for pkt in packets:
        fresh.append(pkt)
        if record.protected:
            continue
        chunk = record.data[pkt.start:pkt.end]
        try:
            _, payload_offset, _ = codec.parse_header(chunk, short_dcid_len)
            spans = codec.parse_frames_spans(chunk[payload_offset:])
        except Exception:
            continue
        base = pkt.start + payload_offset
        run_start: int | None = None
        run_end = 0
        for frame, s, e in spans:
            if isinstance(frame, codec.Padding):
                if run_start is None:
                    run_start = s
                run_end = e
                continue
            if run_start is not None:
                fresh.append(Region(base + run_start, base + run_end, FRAME))
                run_start = None
            fresh.append(Region(base + s, base + e, FRAME))
        if run_start is not None:
            fresh.append(Region(base + run_start, base + run_end, FRAME))
    fresh.sort(key=lambda r: (r.start, r.kind != PACKET, -r.end))
    record.regions = fresh


def regions_well_formed(record: SeedRecord) -> bool:
    """Check nesting and bounds: frame regions sit inside exactly one packet."""
    n = len(record.data)
    packets = [r for r in record.regions if r.kind == PACKET]
    for r in record.regions:
        if not (0 <= r.start < r.end <= n):
            return False
    for i, a in enumerate(packets):
        for b in packets[i + 1:]:
            if a.start < b.end and b.start < a.end:
                return False
    for r in record.regions:
        if r.kind == FRAME:
            owners = [p for p in packets if p.start <= r.start and r.end <= p.end]
            if len(owners) != 1:
                return False
    return True


# --- artifact persistence ---------------------------------------------------


def save_interesting(seq: SeedSequence, outcome: str, results_dir: str | Path,
                     secrets_text: str, extra_meta: dict[str, str] | None = None) -> Path:
    """Persist a seed as a .seed/.secrets/.meta triple under a content hash.

    Returns the path prefix (without extension). Saving the same content
    twice is a no-op.
    """
    results_dir = Path(results_dir)
    try:
        results_dir.mkdir(parents=True, exist_ok=True)
        name = seq.seed_id()
        prefix = results_dir / name
        seed_path = prefix.with_suffix(".seed")
        if seed_path.exists():
            return prefix
        extra = dict(extra_meta or {})
        meta_lines = [
            f"outcome={outcome}",
            f"parent={seq.parent or '-'}",
            f"timestamp={extra.pop('timestamp', '0')}",
        ]
        opaque = [str(i) for i, r in enumerate(seq.records) if r.protected]
        if opaque:
            meta_lines.append("opaque=" + ",".join(opaque))
        # Packet spans are mutation state, not derivable from mutated bytes
        # (embedded length fields go stale); persist them so replay
        # re-protects with the exact boundaries the campaign used.
        span_parts = []
        for idx, rec in enumerate(seq.records):
            if rec.protected:
                continue
            spans = "|".join(f"{r.start}-{r.end}" for r in rec.regions if r.kind == PACKET)
            span_parts.append(f"{idx}:{spans}")
        if span_parts:
            meta_lines.append("packets=" + ";".join(span_parts))
        for key, value in extra.items():
            meta_lines.append(f"{key}={value}")
        meta_lines.append(f"ops={len(seq.op_log)}")
        for op in seq.op_log:
            meta_lines.append(f"op={op}")
        seed_path.write_bytes(serialize_capture([(r.direction, r.data) for r in seq.records]))
        prefix.with_suffix(".secrets").write_text(secrets_text)
        prefix.with_suffix(".meta").write_text("\n".join(meta_lines) + "\n")
        return prefix
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def load_artifact(prefix: str | Path) -> tuple[SeedSequence, str, dict[str, str]]:
    """Load a saved .seed/.secrets/.meta triple back into a SeedSequence."""
    prefix = Path(prefix)
    if prefix.suffix in (".seed", ".secrets", ".meta"):
        prefix = prefix.with_suffix("")
    seed_path = prefix.with_suffix(".seed")
    secrets_path = prefix.with_suffix(".secrets")
    meta_path = prefix.with_suffix(".meta")
    for p in (seed_path, secrets_path, meta_path):
        if not p.exists():
            raise CorruptArtifact(f"missing {p.name}")
    try:
        raw = parse_capture(seed_path.read_bytes())
    except (BadMagic, TruncatedRecord) as exc:
        raise CorruptArtifact(str(exc)) from exc
    meta: dict[str, str] = {}
    ops: list[str] = []
    for line in meta_path.read_text().splitlines():
        if not line.strip() or "=" not in line:
            continue
        key, value = line.split("=", 1)
        if key == "op":
            ops.append(value)
        else:
            meta[key] = value
    opaque = {int(i) for i in meta.get("opaque", "").split(",") if i}
    saved_spans: dict[int, list[tuple[int, int]]] = {}
    for part in meta.get("packets", "").split(";"):
        if not part or ":" not in part:
            continue
        idx_text, span_text = part.split(":", 1)
        spans = []
        for span in span_text.split("|"):
            if "-" in span:
                start, end = span.split("-", 1)
                spans.append((int(start), int(end)))
        saved_spans[int(idx_text)] = spans
    records = []
    for idx, (direction, data) in enumerate(raw):
        rec = SeedRecord(direction, data, protected=idx in opaque)
        if idx in saved_spans and not rec.protected:
            rec.regions = [Region(start, end, PACKET)
                           for start, end in saved_spans[idx]]
            refresh_frame_regions(rec)
        else:
            refresh_regions(rec)
        records.append(rec)
    seq = SeedSequence(records, parent=meta.get("parent") or None, op_log=ops)
    if seq.parent == "-":
        seq.parent = None
    return seq, secrets_path.read_text(), meta
