"""Crash-injection harness for the dispatcher.

Worker processes commit one output file per job and die (``os._exit``) with a
fixed probability at a random point of a job: before any work, after writing a
temporary file, or after committing but before reporting completion. Dead
workers are replaced and an extra worker joins mid-run.
"""
from __future__ import annotations

import multiprocessing as mp
import os
import random
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .executors import commit_bytes
from .journal import read_journal
from .ledger import DONE, JobRecord, Ledger
from .server import serve
from .worker import DispatcherClient, run_worker

STEP = "touch"
JOINER = "joiner"


def _chaos_worker(address, out_dir, kill_probability, seed, worker_id, lease_seconds):
    rng = random.Random(seed)
    out = Path(out_dir)
    commits = out / "commits.log"

    def execute(job: JobRecord):
        die = rng.random() < kill_probability
        stage = rng.randrange(3) if die else -1
        if stage == 0:
            os._exit(17)
        final = out / f"{job.job_id}.out"
        if stage == 1:
            (out / f"{job.job_id}.out.tmp.{os.getpid()}").write_bytes(b"partial")
            os._exit(17)
        if commit_bytes(final, job.job_id.encode()):
            fd = os.open(commits, os.O_WRONLY | os.O_APPEND | os.O_CREAT)
            try:
                os.write(fd, f"{job.job_id}\t{worker_id}\n".encode())
            finally:
                os.close(fd)
        if stage == 2:
            os._exit(17)

    run_worker(address, STEP, execute, worker_id=worker_id,
               heartbeat_seconds=lease_seconds / 3, poll_seconds=0.05)


@dataclass
class ChaosReport:
    jobs: int
    all_done: bool
    committed_files: int
    commit_counts: Counter
    replay_matches: bool
    joiner_served: bool
    kills: int
    seconds: float
    stray_files: list = field(default_factory=list)

    @property
    def exactly_once(self) -> bool:
        return (self.committed_files == self.jobs and len(self.commit_counts) == self.jobs
                and all(c == 1 for c in self.commit_counts.values()))

    @property
    def ok(self) -> bool:
        return self.all_done and self.exactly_once and self.replay_matches and self.joiner_served


def run_chaos(work_dir, jobs: int = 100, workers: int = 8, kill_probability: float = 0.2,
              lease_seconds: float = 2.0, seed: int = 0, join_fraction: float = 0.3,
              timeout: float = 110.0) -> ChaosReport:
    work = Path(work_dir)
    out = work / "outputs"
    out.mkdir(parents=True, exist_ok=True)
    journal = work / "journal.bin"
    records = [JobRecord(f"job-{k:04d}", STEP) for k in range(jobs)]
    server = serve(records, ("127.0.0.1", 0), lease_seconds, journal_path=journal, fsync=False)
    ctx = mp.get_context("spawn")
    procs: dict[str, mp.Process] = {}
    generation = 0
    kills = 0
    joiner_started = False
    t0 = time.monotonic()

    def spawn(worker_id, p_kill):
        nonlocal generation
        generation += 1
        p = ctx.Process(target=_chaos_worker, args=(server.address, str(out), p_kill,
                                                    seed * 100003 + generation, worker_id,
                                                    lease_seconds))
        p.start()
        procs[worker_id] = p

    try:
        for k in range(workers):
            spawn(f"chaos-{k}-0", kill_probability)
        client = DispatcherClient(server.address)
        while time.monotonic() - t0 < timeout:
            st = client.status()
            if st[DONE] == jobs:
                break
            if not joiner_started and st[DONE] >= join_fraction * jobs:
                spawn(JOINER, 0.0)
                joiner_started = True
            for wid, p in list(procs.items()):
                if p.exitcode is not None and p.exitcode != 0:
                    kills += 1
                    del procs[wid]
                    if wid != JOINER:
                        slot = wid.split("-")[1]
                        spawn(f"chaos-{slot}-{generation}", kill_probability)
            time.sleep(0.05)
        client.close()
        for p in procs.values():
            p.join(timeout=10)
            if p.is_alive():
                p.kill()
        all_done = server.ledger.counts()[DONE] == jobs
        live = server.ledger.snapshot()
    finally:
        server.stop()
    committed = sorted(out.glob("*.out"))
    log = out / "commits.log"
    counts = Counter(line.split("\t")[0] for line in log.read_text().splitlines()) if log.exists() else Counter()
    records, _ = read_journal(journal)
    joiner_served = any(r.get("op") == "lease" and r.get("worker") == JOINER for r in records)
    return ChaosReport(jobs, all_done, len(committed), counts, Ledger.replay(records).snapshot() == live,
                       joiner_served, kills, time.monotonic() - t0,
                       sorted(p.name for p in out.iterdir() if ".tmp." in p.name))

