"""The fuzzing campaign loop: select state, select seed, mutate, execute,
evaluate, grow the corpus, and log crashes.

One campaign owns one logical thread of control; the target runs behind the
snapshot manager and the only shared artifact is its coverage region, read
after each run. With sync and snapshot enabled the whole campaign is a pure
function of (rng seed, corpus, target build).
"""

from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from random import Random

from . import corpus, crypto, mutate, statemodel, sync
from .coverage import GlobalMap
from .errors import CorpusEmpty, QuicGreyError, RendezvousTimeout, TargetUnavailable
from .mutate import MutationBudget
from .snapshot import ServerAdapter, SnapshotManager
from .statemodel import StateMachine
from .target import TargetManifest

MODE_FLAGS = {
    "baseline": (False, False, False),
    "crypto": (True, False, False),
    "crypto+sync": (True, True, False),
    "full": (True, True, True),
}

OUTCOME_NEW_COVERAGE = "NewCoverage"
OUTCOME_NEW_STATE = "NewState"
OUTCOME_CRASH = "Crash"

STATUS_OK = "ok"
STATUS_CRASH = "crash"
STATUS_HANG = "hang"


@dataclass
class CampaignConfig:
    crypto_enabled: bool = True
    sync_enabled: bool = True
    snapshot_enabled: bool = True
    exec_budget: int | None = None
    time_budget_s: float | None = None
    rng_seed: int = 0
    out_dir: Path | None = None
    recv_window_s: float = 0.005
    response_delay_s: float = 0.0
    hang_factor: float = 20.0
    hang_floor_s: float = 0.1
    energy_base: int = 32
    energy_cap: int = 512
    stale_after: int = 8
    select_w1: float = 1.0
    select_w2: float = 0.5
    budget: MutationBudget = field(default_factory=MutationBudget)
    short_dcid_len: int = 8
    stop_on_bugs: frozenset = frozenset()

    @classmethod
    def for_mode(cls, mode: str, **kwargs) -> "CampaignConfig":
        try:
            crypto_on, sync_on, snapshot_on = MODE_FLAGS[mode]
        except KeyError:
            raise QuicGreyError(f"unknown mode {mode!r}") from None
        return cls(crypto_enabled=crypto_on, sync_enabled=sync_on,
                   snapshot_enabled=snapshot_on, **kwargs)

    @property
    def mode_name(self) -> str:
        flags = (self.crypto_enabled, self.sync_enabled, self.snapshot_enabled)
        for name, known in MODE_FLAGS.items():
            if flags == known:
                return name
        return f"custom{flags}"


@dataclass
class RunOutcome:
    status: str
    coverage: bytes
    codes: list[int]
    exec_time_s: float
    crash_id: str | None = None
    responses: list[bytes] = field(default_factory=list)


@dataclass
class CampaignReport:
    mode: str
    execs: int = 0
    hangs: int = 0
    elapsed_s: float = 0.0
    edges: int = 0
    states: int = 0
    corpus_size: int = 0
    unique_crashes: dict[tuple[str, int], int] = field(default_factory=dict)
    series: list[tuple[int, int, int, int, int]] = field(default_factory=list)
    machine_export: str = ""
    snapshot_stats: str = ""
    coverage_bytes: bytes = b""

    @property
    def crash_ids(self) -> set[str]:
        return {key[0] for key in self.unique_crashes}

    @property
    def exec_per_s(self) -> float:
        return self.execs / self.elapsed_s if self.elapsed_s > 0 else 0.0

    def summary(self) -> str:
        crash_lines = "".join(
            f"  crash {fid} @state {statemodel.format_code(state)}: {count} hit(s)\n"
            for (fid, state), count in sorted(self.unique_crashes.items()))
        return (f"mode: {self.mode}\n"
                f"executions: {self.execs} ({self.exec_per_s:.1f}/s over {self.elapsed_s:.1f}s)\n"
                f"hangs: {self.hangs}\n"
                f"edges: {self.edges}\n"
                f"states: {self.states}\n"
                f"corpus: {self.corpus_size} seeds\n"
                f"unique crashes: {len(self.unique_crashes)}\n"
                + crash_lines
                + f"snapshot: {self.snapshot_stats}\n")


class Campaign:
    def __init__(self, config: CampaignConfig, manifest: TargetManifest,
                 fuzzer_secrets: crypto.SecretSet | None,
                 target_secrets: crypto.SecretSet,
                 seeds: list[corpus.SeedSequence], secrets_text: str = ""):
        if not seeds:
            raise CorpusEmpty("no seeds to fuzz")
        self.config = config
        self.manifest = manifest
        self.secrets = fuzzer_secrets
        self.secrets_text = secrets_text
        self.seeds = seeds
        self.rng = Random(config.rng_seed)
        self.global_map = GlobalMap()
        self.machine = StateMachine()
        self.snap = SnapshotManager(
            factory=lambda: ServerAdapter(manifest, target_secrets,
                                          sync_mode=config.sync_enabled,
                                          response_delay_s=config.response_delay_s),
            enabled=config.snapshot_enabled)
        self.donor_pool = mutate.build_donor_pool(seeds)
        self.hang_threshold_s = config.hang_floor_s
        self.execs = 0
        self.hangs = 0
        self.crashes: dict[tuple[str, int], int] = {}
        self.series: list[tuple[int, int, int, int, int]] = []

    # -- execution

    def wire_records(self, seq: corpus.SeedSequence) -> list[bytes]:
        if self.config.crypto_enabled and self.secrets is not None:
            return [o.data for o in crypto.protect_sequence(seq, self.secrets,
                                                            self.config.short_dcid_len)]
        return [seq.records[i].data for i in seq.client_indices()]

    def execute(self, seq: corpus.SeedSequence) -> RunOutcome:
        adapter = self.snap.reset()
        records = self.wire_records(seq)
        start = time.perf_counter()
        crash_id = None
        status = STATUS_OK
        responses: list[bytes] = []
        try:
            if self.config.sync_enabled:
                result = sync.drive_sequence(records, adapter, self.manifest.paradigm)
            else:
                result = sync.drive_sequence_unsync(records, adapter,
                                                    self.config.recv_window_s)
            responses = result.flat_responses()
            crash_id = result.crash_id
        except RendezvousTimeout:
            status = STATUS_HANG
        elapsed = time.perf_counter() - start
        if crash_id is not None:
            status = STATUS_CRASH
        elif status == STATUS_OK and not self.config.sync_enabled \
                and elapsed > self.hang_threshold_s:
            status = STATUS_HANG
        codes: list[int] = []
        feed = None
        if self.config.crypto_enabled and self.secrets is not None:
            feed = crypto.sequence_secrets(seq, self.secrets, self.config.short_dcid_len)
        for datagram in responses:
            items = crypto.decrypt_response(datagram, feed, self.config.short_dcid_len)
            codes.extend(statemodel.extract_codes(items))
        return RunOutcome(status, adapter.coverage_snapshot(), codes, elapsed,
                          crash_id, responses)

    # -- evaluation

    def evaluate(self, outcome: RunOutcome) -> tuple[int, int]:
        """Fold a run into the global maps; returns (new_edges, new_states)."""
        new_edges = self.global_map.merge(outcome.coverage)
        new_states = self.machine.update(outcome.codes)
        return new_edges, new_states

    def assign_energy(self, seq: corpus.SeedSequence) -> int:
        bonus = 0
        if seq.scores.selections == 0:
            bonus += 1
        if seq.scores.selections < self.config.stale_after:
            if seq.scores.new_states > 0:
                bonus += 2
            if seq.scores.new_edges > 0:
                bonus += 1
        return min(self.config.energy_cap, self.config.energy_base << bonus)

    def dedup_crash(self, seq: corpus.SeedSequence, outcome: RunOutcome) -> bool:
        """Record a crash; persists a triage bundle for new (id, state) keys."""
        last_state = statemodel.START
        path = statemodel.significant_path(outcome.codes)
        if path:
            last_state = path[-1]
        key = (outcome.crash_id or "?", last_state)
        known = key in self.crashes
        self.crashes[key] = self.crashes.get(key, 0) + 1
        if not known and self.config.out_dir is not None:
            corpus.save_interesting(
                seq, OUTCOME_CRASH, Path(self.config.out_dir) / "crashes",
                self.secrets_text, {
                    "timestamp": str(self.execs),
                    "failure": outcome.crash_id or "?",
                    "last_state": statemodel.format_code(last_state),
                    "mode": self.config.mode_name,
                    "paradigm": self.manifest.paradigm,
                    "bugs": ",".join(sorted(self.manifest.bugs)),
                })
        return not known

    def _emit_row(self) -> None:
        self.series.append((self.execs, self.execs, self.global_map.edge_count(),
                            len(self.machine.nodes), len(self.crashes)))

    def _budget_left(self, start: float) -> bool:
        if self.config.exec_budget is not None and self.execs >= self.config.exec_budget:
            return False
        if self.config.time_budget_s is not None \
                and time.monotonic() - start >= self.config.time_budget_s:
            return False
        if self.config.stop_on_bugs \
                and self.config.stop_on_bugs <= {k[0] for k in self.crashes}:
            return False
        return True

    # -- the loop

    def run(self) -> CampaignReport:
        start = time.monotonic()
        try:
            self.snap.arm()
        except QuicGreyError as exc:
            raise TargetUnavailable(str(exc)) from exc
        try:
            return self._run_loop(start)
        finally:
            self.snap.kill()

    def _run_loop(self, start: float) -> CampaignReport:
        state_index: dict[int, list[int]] = {}
        dry_times: list[float] = []

        for idx, seed in enumerate(self.seeds):
            outcome = self.execute(seed)
            dry_times.append(outcome.exec_time_s)
            new_edges, new_states = self.evaluate(outcome)
            seed.scores = corpus.Scores(new_edges=new_edges, new_states=new_states)
            seed.codes = statemodel.significant_path(outcome.codes)
            for code in seed.codes:
                state_index.setdefault(code, []).append(idx)
            if outcome.status == STATUS_CRASH:
                self.dedup_crash(seed, outcome)
        if dry_times:
            self.hang_threshold_s = max(self.config.hang_floor_s,
                                        self.config.hang_factor * statistics.median(dry_times))
        self._emit_row()

        while self._budget_left(start):
            target_state = self.machine.select_target_state(
                self.rng, self.config.select_w1, self.config.select_w2)
            candidates = state_index.get(target_state, [])
            if not candidates or target_state == statemodel.START:
                candidates = list(range(len(self.seeds)))
            seed_idx = candidates[self.rng.randrange(len(candidates))]
            seed = self.seeds[seed_idx]
            energy = self.assign_energy(seed)
            seed.scores.selections += 1
            self.machine.note_selection(target_state, energy)

            for _ in range(energy):
                if not self._budget_left(start):
                    break
                mutant, _ = mutate.mutate(seed, self.rng, self.config.budget,
                                          self.donor_pool)
                outcome = self.execute(mutant)
                self.execs += 1
                if outcome.status == STATUS_HANG:
                    self.hangs += 1
                new_edges, new_states = self.evaluate(outcome)
                if outcome.status == STATUS_CRASH:
                    if self.dedup_crash(mutant, outcome):
                        self._emit_row()
                    continue
                if new_edges or new_states:
                    mutant.scores = corpus.Scores(new_edges=new_edges,
                                                  new_states=new_states)
                    mutant.codes = statemodel.significant_path(outcome.codes)
                    self.seeds.append(mutant)
                    new_idx = len(self.seeds) - 1
                    for code in mutant.codes:
                        state_index.setdefault(code, []).append(new_idx)
                    self.donor_pool = mutate.build_donor_pool(self.seeds)
                    if self.config.out_dir is not None:
                        outcome_name = OUTCOME_NEW_STATE if new_states else OUTCOME_NEW_COVERAGE
                        corpus.save_interesting(
                            mutant, outcome_name,
                            Path(self.config.out_dir) / "corpus", self.secrets_text,
                            {"timestamp": str(self.execs), "mode": self.config.mode_name})
                    self._emit_row()

        self._emit_row()
        report = CampaignReport(
            mode=self.config.mode_name,
            execs=self.execs,
            hangs=self.hangs,
            elapsed_s=time.monotonic() - start,
            edges=self.global_map.edge_count(),
            states=len(self.machine.nodes),
            corpus_size=len(self.seeds),
            unique_crashes=dict(self.crashes),
            series=list(self.series),
            machine_export=self.machine.export_edges(),
            snapshot_stats=self.snap.stats.line(),
            coverage_bytes=self.global_map.copy_bytes(),
        )
        return report


def series_csv(report: CampaignReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["timestamp", "execs", "edges", "states", "crashes"])
    writer.writerows(report.series)
    return buf.getvalue()


def write_report(report: CampaignReport, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report.summary())
    (out / "series.csv").write_text(series_csv(report))
    (out / "statemachine.txt").write_text(report.machine_export)


def run_campaign(config: CampaignConfig, manifest: TargetManifest,
                 fuzzer_secrets: crypto.SecretSet | None,
                 target_secrets: crypto.SecretSet,
                 seeds: list[corpus.SeedSequence],
                 secrets_text: str = "") -> CampaignReport:
    campaign = Campaign(config, manifest, fuzzer_secrets, target_secrets,
                        seeds, secrets_text)
    report = campaign.run()
    if config.out_dir is not None:
        write_report(report, config.out_dir)
    return report
