#!/usr/bin/env python3
"""Record canonical seed fixtures for fuzzing campaigns.

Writes QFSEED1 captures plus the matching secrets config and a default
target manifest into the chosen directory.
"""

import argparse
from pathlib import Path

from quicgrey import corpus
from quicgrey.target import TargetManifest, format_manifest, record_session

FIXTURES = {
    "handshake": ["hello", "finish", "app:GET /index"],
    "handshake-nofin": ["hello", "nofin"],
}


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="fixtures", help="output directory")
    parser.add_argument("--bugs", default="", help="comma list for the manifest (vn,drain,stream)")
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    secrets_text = ""
    for name, script in FIXTURES.items():
        records, secrets_text = record_session(script)
        corpus.export_capture(records, out / f"{name}.seed")
        print(f"{name}: {len(records)} records -> {out / (name + '.seed')}")
    (out / "static.secrets").write_text(secrets_text)
    bugs = {b for b in args.bugs.split(",") if b}
    (out / "target.manifest").write_text(format_manifest(TargetManifest(bugs=bugs)))
    print(f"secrets -> {out / 'static.secrets'}")
    print(f"manifest -> {out / 'target.manifest'}")


if __name__ == "__main__":
    main()
