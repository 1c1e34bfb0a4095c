"""Shared fixtures: the canonical recorded session and derived seeds."""

from __future__ import annotations

import pytest

from quicgrey import corpus, crypto
from quicgrey.target import STATIC_SECRETS, record_session


@pytest.fixture(scope="session")
def canonical_capture():
    records, secrets_text = record_session()
    return records, secrets_text


@pytest.fixture(scope="session")
def secrets():
    return crypto.install_secrets(STATIC_SECRETS)


@pytest.fixture()
def canonical_seed(canonical_capture, secrets):
    records, _ = canonical_capture
    return crypto.decrypt_sequence(records, secrets)


@pytest.fixture()
def baseline_seed(canonical_capture):
    records, _ = canonical_capture
    recs = []
    for direction, data in records:
        rec = corpus.SeedRecord(direction, data, protected=True)
        corpus.refresh_regions(rec)
        recs.append(rec)
    return corpus.SeedSequence(recs)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    lines = []
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            name = getattr(report, "nodeid", "")
            if "test_acceptance" in name and "criterion" in name:
                label = name.split("::")[-1]
                verdict = "PASS" if status == "passed" else "FAIL"
                lines.append(f"[{verdict}] {label}")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
