"""Operator entry point.

Subcommands: ``fuzz`` (run a campaign with ablation modes), ``replay``
(rerun a saved artifact), ``decrypt-seed`` (human-readable capture dump),
``stats`` (campaign summary), ``record`` (produce the canonical fixture).
Exit codes: 0 ok, 1 findings with a crash, 2 usage, 3 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import codec, corpus, crypto, statemodel, sync
from .campaign import CampaignConfig, MODE_FLAGS, run_campaign
from .errors import QuicGreyError
from .snapshot import ServerAdapter, SnapshotManager
from .target import (STATIC_SECRETS, TargetManifest, format_manifest,
                     parse_manifest, record_session)

EXIT_OK = 0
EXIT_CRASH = 1
EXIT_USAGE = 2
EXIT_RUNTIME = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quicgrey",
        description="Greybox mutation fuzzer for QUIC v1 with plaintext-level mutation.")
    sub = parser.add_subparsers(dest="command", required=True)

    fuzz = sub.add_parser("fuzz", help="run a fuzzing campaign")
    fuzz.add_argument("--seed-dir", required=True, help="directory of QFSEED1 captures")
    fuzz.add_argument("--secrets", help="secrets config (required in crypto modes)")
    fuzz.add_argument("--target-manifest", help="target manifest file")
    fuzz.add_argument("--mode", choices=sorted(MODE_FLAGS), default="full")
    fuzz.add_argument("--execs", type=int, help="execution budget")
    fuzz.add_argument("--seconds", type=float, help="wall-clock budget")
    fuzz.add_argument("--rng-seed", type=int, default=0)
    fuzz.add_argument("--out", required=True, help="results directory")

    replay = sub.add_parser("replay", help="replay a saved artifact")
    replay.add_argument("artifact", help="artifact path prefix (or its .seed file)")
    replay.add_argument("--target-manifest", help="override the recorded target config")

    dump = sub.add_parser("decrypt-seed", help="dump a capture as packets and frames")
    dump.add_argument("capture", help="QFSEED1 capture file")
    dump.add_argument("--secrets", required=True, help="secrets config file")

    stats = sub.add_parser("stats", help="summarize a campaign directory")
    stats.add_argument("campaign_dir")

    record = sub.add_parser("record", help="record a scripted session against the reference target")
    record.add_argument("--script", default="hello,finish,app:GET /index",
                        help="comma-separated steps: hello,finish,nofin,app:<text>,close,ackinit")
    record.add_argument("--out", required=True, help="output path prefix")
    return parser


def _load_seeds(seed_dir: Path, secrets: crypto.SecretSet | None,
                crypto_enabled: bool) -> tuple[list[corpus.SeedSequence], str]:
    paths = sorted(seed_dir.glob("*.seed"))
    if not paths:
        raise QuicGreyError(f"no .seed files under {seed_dir}")
    seeds = []
    for path in paths:
        raw = corpus.import_capture(path)
        if crypto_enabled and secrets is not None:
            seeds.append(crypto.decrypt_sequence(raw, secrets))
        else:
            records = []
            for direction, data in raw:
                rec = corpus.SeedRecord(direction, data, protected=True)
                corpus.refresh_regions(rec)
                records.append(rec)
            seeds.append(corpus.SeedSequence(records))
    return seeds, ""


def _cmd_fuzz(args) -> int:
    crypto_enabled = MODE_FLAGS[args.mode][0]
    if crypto_enabled and not args.secrets:
        raise UsageError(f"--secrets is required for mode {args.mode}")
    if args.execs is None and args.seconds is None:
        raise UsageError("one of --execs/--seconds is required")
    manifest = parse_manifest(Path(args.target_manifest)) if args.target_manifest \
        else TargetManifest()
    secrets_text = Path(args.secrets).read_text() if args.secrets \
        else crypto.format_secrets_text(STATIC_SECRETS)
    fuzzer_secrets = crypto.install_secrets(crypto.parse_secrets_text(secrets_text)) \
        if crypto_enabled else None
    target_secrets = crypto.install_secrets(crypto.parse_secrets_text(secrets_text))
    seeds, _ = _load_seeds(Path(args.seed_dir), fuzzer_secrets, crypto_enabled)
    config = CampaignConfig.for_mode(
        args.mode, exec_budget=args.execs, time_budget_s=args.seconds,
        rng_seed=args.rng_seed, out_dir=Path(args.out))
    report = run_campaign(config, manifest, fuzzer_secrets, target_secrets,
                          seeds, secrets_text)
    sys.stdout.write(report.summary())
    return EXIT_CRASH if report.unique_crashes else EXIT_OK


def _cmd_replay(args) -> int:
    seq, secrets_text, meta = corpus.load_artifact(Path(args.artifact))
    if args.target_manifest:
        manifest = parse_manifest(Path(args.target_manifest))
    else:
        manifest = TargetManifest(
            paradigm=meta.get("paradigm", sync.MODE_RECEIVE_SEND),
            bugs={b for b in meta.get("bugs", "").split(",") if b})
    secrets = crypto.install_secrets(crypto.parse_secrets_text(secrets_text))
    snap = SnapshotManager(factory=lambda: ServerAdapter(manifest, secrets))
    try:
        adapter = snap.arm()
        records = [o.data for o in crypto.protect_sequence(seq, secrets)]
        result = sync.drive_sequence(records, adapter, manifest.paradigm)
    finally:
        snap.kill()
    if result.crash_id:
        print(f"crash {result.crash_id}")
        return EXIT_CRASH
    print(f"ok ({sum(len(g) for g in result.responses)} response datagrams)")
    return EXIT_OK


def _cmd_decrypt_seed(args) -> int:
    raw = corpus.import_capture(Path(args.capture))
    secrets = crypto.install_secrets(Path(args.secrets))
    seq = crypto.decrypt_sequence(raw, secrets)
    arrow = {corpus.CLIENT_TO_SERVER: "client->server", corpus.SERVER_TO_CLIENT: "server->client"}
    for index, rec in enumerate(seq.records):
        print(f"[{index}] {arrow[rec.direction]} {len(rec.data)} bytes"
              + (" OPAQUE" if rec.protected else ""))
        if rec.protected:
            print(f"    {rec.data.hex()}")
            continue
        dgram = codec.split_datagram(rec.data, 8)
        for pkt in dgram.packets:
            frames = codec.parse_frames(pkt.payload)
            print(f"  {pkt.header.kind} pn={pkt.header.packet_number} "
                  f"frames: {_frame_summary(frames)}")
            print(f"    {pkt.payload.hex()}")
    return EXIT_OK


def _frame_summary(frames: list[codec.Frame]) -> str:
    parts = []
    run = 0
    for frame in frames:
        if isinstance(frame, codec.Padding):
            run += 1
            continue
        if run:
            parts.append(f"PADDINGx{run}")
            run = 0
        if isinstance(frame, codec.Crypto):
            tls = statemodel.last_tls_message_type(frame.data)
            names = {1: "ClientHello", 2: "ServerHello", 8: "EncryptedExtensions",
                     11: "Certificate", 15: "CertificateVerify", 20: "Finished"}
            label = names.get(tls, "opaque")
            parts.append(f"CRYPTO(off={frame.offset} len={len(frame.data)} {label})")
        elif isinstance(frame, codec.StreamFrame):
            parts.append(f"STREAM(id={frame.stream_id} len={len(frame.data)}"
                         + (" fin" if frame.fin else "") + ")")
        elif isinstance(frame, codec.Ack):
            parts.append(f"ACK(largest={frame.largest_acked})")
        elif isinstance(frame, codec.ConnectionClose):
            parts.append(f"CLOSE(err={frame.error_code})")
        elif isinstance(frame, codec.Raw):
            parts.append(f"RAW(type=0x{frame.type_id:x} len={len(frame.body)})")
        else:
            parts.append(type(frame).__name__.upper())
    if run:
        parts.append(f"PADDINGx{run}")
    return " ".join(parts) if parts else "(empty)"


def _cmd_stats(args) -> int:
    campaign_dir = Path(args.campaign_dir)
    report = campaign_dir / "report.txt"
    machine = campaign_dir / "statemachine.txt"
    if not report.exists():
        raise QuicGreyError(f"no report.txt under {campaign_dir}")
    sys.stdout.write(report.read_text())
    if machine.exists():
        print("state machine edges:")
        sys.stdout.write(machine.read_text())
    return EXIT_OK


def _cmd_record(args) -> int:
    script = [step.strip() for step in args.script.split(",") if step.strip()]
    records, secrets_text = record_session(script)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    corpus.export_capture(records, prefix.with_suffix(".seed"))
    prefix.with_suffix(".secrets").write_text(secrets_text)
    manifest_path = prefix.with_suffix(".manifest")
    manifest_path.write_text(format_manifest(TargetManifest()))
    print(f"recorded {len(records)} records -> {prefix.with_suffix('.seed')}")
    return EXIT_OK


class UsageError(Exception):
    pass


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    handlers = {
        "fuzz": _cmd_fuzz,
        "replay": _cmd_replay,
        "decrypt-seed": _cmd_decrypt_seed,
        "stats": _cmd_stats,
        "record": _cmd_record,
    }
    try:
        return handlers[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except QuicGreyError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
