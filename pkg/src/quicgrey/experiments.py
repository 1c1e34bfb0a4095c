"""Desk-scale experiment drivers: bug reachability, ablation, throughput.

These are the scaled-down analogues of the big comparative campaigns; the
acceptance suite and the scripts under scripts/ both run through here. Jobs
are plain picklable dataclasses so independent campaigns can spread across
cores with multiprocessing.
"""

from __future__ import annotations

import multiprocessing
import statistics
from dataclasses import dataclass, field

from . import corpus, crypto
from .campaign import CampaignConfig, run_campaign
from .target import STATIC_SECRETS, TargetManifest, record_session

ALL_BUG_IDS = ("vn-log", "ack-drain", "stream-null")
ABLATION_MODES = ("baseline", "crypto", "crypto+sync", "full")


@dataclass(frozen=True)
class CampaignJob:
    mode: str
    rng_seed: int
    time_budget_s: float | None = None
    exec_budget: int | None = None
    bugs: tuple[str, ...] = ()
    init_delay_ms: float = 0.0
    paradigm: str = "rs"
    stop_on_bugs: tuple[str, ...] = ()
    scripts: tuple[tuple[str, ...], ...] = (("hello", "finish", "app:GET /index"),)


def build_seeds(crypto_enabled: bool,
                scripts: tuple[tuple[str, ...], ...]) -> tuple[list[corpus.SeedSequence], str]:
    secrets = crypto.install_secrets(STATIC_SECRETS)
    seeds = []
    secrets_text = ""
    for script in scripts:
        records, secrets_text = record_session(list(script))
        if crypto_enabled:
            seeds.append(crypto.decrypt_sequence(records, secrets))
        else:
            recs = []
            for direction, data in records:
                rec = corpus.SeedRecord(direction, data, protected=True)
                corpus.refresh_regions(rec)
                recs.append(rec)
            seeds.append(corpus.SeedSequence(recs))
    return seeds, secrets_text


def run_job(job: CampaignJob) -> dict:
    """Execute one campaign; returns a picklable summary."""
    secrets = crypto.install_secrets(STATIC_SECRETS)
    config = CampaignConfig.for_mode(
        job.mode, rng_seed=job.rng_seed, time_budget_s=job.time_budget_s,
        exec_budget=job.exec_budget, stop_on_bugs=frozenset(job.stop_on_bugs))
    seeds, secrets_text = build_seeds(config.crypto_enabled, job.scripts)
    manifest = TargetManifest(paradigm=job.paradigm,
                              init_delay_ms=job.init_delay_ms, bugs=set(job.bugs))
    fuzzer_secrets = secrets if config.crypto_enabled else None
    report = run_campaign(config, manifest, fuzzer_secrets, secrets, seeds, secrets_text)
    return {
        "mode": job.mode,
        "rng_seed": job.rng_seed,
        "execs": report.execs,
        "exec_per_s": report.exec_per_s,
        "edges": report.edges,
        "states": report.states,
        "crash_ids": sorted(report.crash_ids),
        "elapsed_s": report.elapsed_s,
    }


def run_jobs(jobs: list[CampaignJob], workers: int | None = None) -> list[dict]:
    if workers is None:
        workers = max(1, min(multiprocessing.cpu_count(), len(jobs)))
    if workers <= 1 or len(jobs) <= 1:
        return [run_job(job) for job in jobs]
    with multiprocessing.Pool(workers) as pool:
        return pool.map(run_job, jobs, chunksize=1)


@dataclass
class ReachabilityResult:
    found: dict[str, list[set[str]]] = field(default_factory=dict)

    def count(self, mode: str, bug: str) -> int:
        return sum(1 for ids in self.found.get(mode, []) if bug in ids)

    def trials(self, mode: str) -> int:
        return len(self.found.get(mode, []))


def bug_reachability(trials: int = 10, full_seconds: float = 60.0,
                     baseline_seconds: float = 60.0, stream_seconds: float = 300.0,
                     workers: int | None = None) -> ReachabilityResult:
    """Table-4-style separation experiment across rng seeds 0..trials-1.

    Campaigns may stop early once the bugs they are scored on have been
    found; absence claims always consume the whole budget.
    """
    result = ReachabilityResult()
    full_jobs = [CampaignJob("full", seed, time_budget_s=full_seconds,
                             bugs=("vn", "drain", "stream"),
                             stop_on_bugs=("vn-log", "ack-drain"))
                 for seed in range(trials)]
    base_jobs = [CampaignJob("baseline", seed, time_budget_s=baseline_seconds,
                             bugs=("vn", "drain", "stream"))
                 for seed in range(trials)]
    stream_jobs = [CampaignJob("full", seed, time_budget_s=stream_seconds,
                               bugs=("vn", "drain", "stream"),
                               stop_on_bugs=("stream-null",))
                   for seed in range(trials)]
    result.found["full_60s"] = [set(r["crash_ids"]) for r in run_jobs(full_jobs, workers)]
    result.found["baseline_60s"] = [set(r["crash_ids"]) for r in run_jobs(base_jobs, workers)]
    result.found["full_300s"] = [set(r["crash_ids"]) for r in run_jobs(stream_jobs, workers)]
    return result


def ablation(trials: int = 10, seconds: float = 120.0, init_delay_ms: float = 5.0,
             workers: int | None = None) -> dict[str, list[int]]:
    """Median-coverage ladder across the four ablation modes."""
    jobs = [CampaignJob(mode, seed, time_budget_s=seconds, init_delay_ms=init_delay_ms)
            for mode in ABLATION_MODES for seed in range(trials)]
    edges: dict[str, list[int]] = {mode: [] for mode in ABLATION_MODES}
    for summary in run_jobs(jobs, workers):
        edges[summary["mode"]].append(summary["edges"])
    return edges


def ablation_medians(edges: dict[str, list[int]]) -> dict[str, float]:
    return {mode: statistics.median(values) for mode, values in edges.items()}


def snapshot_throughput(execs: int = 500, init_delay_ms: float = 50.0,
                        rng_seed: int = 0) -> tuple[float, float]:
    """exec/s with snapshots on vs off, same machine, same seed, sequential."""
    enabled = run_job(CampaignJob("full", rng_seed, exec_budget=execs,
                                  init_delay_ms=init_delay_ms))
    disabled = run_job(CampaignJob("crypto+sync", rng_seed, exec_budget=execs,
                                   init_delay_ms=init_delay_ms))
    return enabled["exec_per_s"], disabled["exec_per_s"]
