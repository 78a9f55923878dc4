"""Job ledger: FIFO queues per step, leases, and journaled transitions.

Every mutation is written to the journal before it is applied, so replaying
the journal from empty reproduces the ledger exactly.
"""
from __future__ import annotations

import threading
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import DomainError, JournalCorruptionError, ProtocolError
from .journal import Journal, read_journal

PENDING, LEASED, DONE = "pending", "leased", "done"
KNOWN_STEPS = frozenset({"align", "csc-group", "filter", "compress", "analyze", "sleep", "touch"})


def _expect(job, state, op):
    if job.state != state:
        raise JournalCorruptionError(f"{op} on job {job.job_id} in state {job.state}")


@dataclass
class JobRecord:
    job_id: str
    step: str
    params: dict = field(default_factory=dict)
    state: str = PENDING
    worker: str = ""
    lease_expiry: float | None = None
    attempt_count: int = 0

    def snapshot(self) -> tuple:
        return (self.job_id, self.step, tuple(sorted(self.params.items())), self.state,
                self.worker, self.lease_expiry, self.attempt_count)


class Ledger:
    def __init__(self, journal: Journal | None = None, steps=KNOWN_STEPS):
        self.jobs: OrderedDict[str, JobRecord] = OrderedDict()
        self.steps = set(steps)
        self.journal = journal
        self.lock = threading.RLock()

    # -- transitions; ``_apply`` is shared by live operation and replay

    def _apply(self, rec: dict) -> None:
        op, jid = rec["op"], rec["job"]
        if op == "add":
            if jid in self.jobs:
                raise DomainError(f"duplicate job id {jid}")
            params = {k[6:]: v for k, v in rec.items() if k.startswith("param.")}
            self.jobs[jid] = JobRecord(jid, rec["step"], params)
            self.steps.add(rec["step"])
            return
        job = self.jobs.get(jid)
        if job is None:
            raise JournalCorruptionError(f"{op} record for unknown job {jid}")
        if op == "lease":
            _expect(job, PENDING, op)
            job.state, job.worker = LEASED, rec["worker"]
            job.lease_expiry = float(rec["expiry"])
            job.attempt_count += 1
        elif op == "renew":
            _expect(job, LEASED, op)
            job.lease_expiry = float(rec["expiry"])
        elif op == "expire":
            _expect(job, LEASED, op)
            job.state, job.worker, job.lease_expiry = PENDING, "", None
        elif op == "done":
            _expect(job, LEASED, op)
            job.state, job.worker, job.lease_expiry = DONE, rec["worker"], None
        else:
            raise DomainError(f"unknown journal op {op!r}")

    def _commit(self, rec: dict) -> None:
        rec = {"ts": f"{time.time():.6f}", **rec}
        if self.journal is not None:
            self.journal.append(rec)
        self._apply(rec)

    # -- construction

    @classmethod
    def replay(cls, records, steps=KNOWN_STEPS) -> "Ledger":
        led = cls(None, steps)
        for rec in records:
            led._apply(rec)
        return led

    @classmethod
    def open(cls, journal_path, jobs=(), fsync: bool = True, steps=KNOWN_STEPS) -> "Ledger":
        """Resume from a journal (if present) and add any jobs it does not yet hold."""
        journal = Journal(journal_path, fsync=fsync)
        led = cls.replay(journal.records, steps)
        led.journal = journal
        for job in jobs:
            if job.job_id not in led.jobs:
                led.add(job)
        return led

    def add(self, job: JobRecord) -> None:
        with self.lock:
            rec = {"job": job.job_id, "op": "add", "step": job.step, "worker": ""}
            rec.update({f"param.{k}": v for k, v in job.params.items()})
            self._commit(rec)

    # -- operations

    def _check_step(self, step):
        if step not in self.steps:
            raise ProtocolError("unknown_step", step)

    def _job(self, job_id) -> JobRecord:
        job = self.jobs.get(job_id)
        if job is None:
            raise ProtocolError("unknown_job", job_id)
        return job

    def expire(self, now: float | None = None) -> list[str]:
        now = time.time() if now is None else now
        out = []
        with self.lock:
            for job in self.jobs.values():
                if job.state == LEASED and job.lease_expiry is not None and job.lease_expiry <= now:
                    self._commit({"job": job.job_id, "op": "expire", "worker": job.worker})
                    out.append(job.job_id)
        return out

    def acquire(self, step: str, worker: str, lease_seconds: float, now: float | None = None):
        now = time.time() if now is None else now
        with self.lock:
            self._check_step(step)
            self.expire(now)
            for job in self.jobs.values():
                if job.step == step and job.state == PENDING:
                    self._commit({"job": job.job_id, "op": "lease", "worker": worker,
                                  "expiry": f"{now + lease_seconds:.6f}"})
                    return job
            return None

    def heartbeat(self, job_id: str, worker: str, lease_seconds: float, now: float | None = None) -> None:
        now = time.time() if now is None else now
        with self.lock:
            job = self._job(job_id)
            if job.state != LEASED or job.worker != worker:
                raise ProtocolError("lease_lost", job_id)
            self._commit({"job": job_id, "op": "renew", "worker": worker,
                          "expiry": f"{now + lease_seconds:.6f}"})

    def complete(self, job_id: str, worker: str, now: float | None = None) -> bool:
        """Mark done; returns False when the job already was (idempotent ack).

        A worker whose lease expired may still complete: its output was
        committed by rename, so the job is re-leased to it and closed.
        """
        now = time.time() if now is None else now
        with self.lock:
            job = self._job(job_id)
            if job.state == DONE:
                return False
            if job.state == PENDING:
                self._commit({"job": job_id, "op": "lease", "worker": worker, "expiry": f"{now:.6f}"})
            self._commit({"job": job_id, "op": "done", "worker": worker})
            return True

    # -- inspection

    def counts(self, step: str | None = None) -> dict:
        with self.lock:
            out = {PENDING: 0, LEASED: 0, DONE: 0}
            for job in self.jobs.values():
                if step is None or job.step == step:
                    out[job.state] += 1
            return out

    def remaining(self, step: str) -> int:
        c = self.counts(step)
        return c[PENDING] + c[LEASED]

    def snapshot(self) -> list[tuple]:
        with self.lock:
            return [j.snapshot() for j in self.jobs.values()]

    def close(self) -> None:
        if self.journal is not None:
            self.journal.close()


def replay_file(path, steps=KNOWN_STEPS) -> Ledger:
    records, _ = read_journal(path)
    return Ledger.replay(records, steps)


# ---------------------------------------------------------------------------
# job files: one job per line, tab-separated key=value fields


def write_jobs_file(path, jobs) -> None:
    lines = []
    for job in jobs:
        fields = {"job_id": job.job_id, "step": job.step, **job.params}
        for k, v in fields.items():
            if any(c in f"{k}{v}" for c in "\t\n") or "=" in k:
                raise DomainError(f"job field {k!r} cannot be written")
        lines.append("\t".join(f"{k}={v}" for k, v in fields.items()))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_jobs_file(path) -> list[JobRecord]:
    jobs = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = dict(item.split("=", 1) for item in line.split("\t"))
        try:
            jid, step = fields.pop("job_id"), fields.pop("step")
        except KeyError as exc:
            raise DomainError(f"{path}:{lineno}: missing {exc.args[0]}") from exc
        jobs.append(JobRecord(jid, step, fields))
    return jobs
