"""Worker side: a protocol client and the acquire -> execute -> complete loop.

Workers talk only to the dispatcher; data moves through shared storage.
"""
from __future__ import annotations

import logging
import os
import socket
import threading
import time
import uuid
from dataclasses import dataclass, field

from ..errors import ProtocolError, SimGraphError
from .ledger import JobRecord
from .protocol import fields_to_params, parse_address, recv_message, send_message
from .server import DEFAULT_HEARTBEAT

log = logging.getLogger(__name__)


class DispatcherUnreachable(SimGraphError):
    pass


class DispatcherClient:
    def __init__(self, address: str, retries: int = 20, backoff: float = 0.1, timeout: float = 30.0):
        self.address = parse_address(address)
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self._sock: socket.socket | None = None

    @property
    def address_text(self) -> str:
        return f"{self.address[0]}:{self.address[1]}"

    def _connect(self):
        delay = self.backoff
        for attempt in range(self.retries + 1):
            try:
                self._sock = socket.create_connection(self.address, timeout=self.timeout)
                return
            except OSError as exc:
                if attempt == self.retries:
                    raise DispatcherUnreachable(f"{self.address[0]}:{self.address[1]}: {exc}") from exc
                time.sleep(delay)
                delay = min(delay * 2, 2.0)

    def request(self, verb: str, **fields) -> dict:
        for attempt in range(2):  # one silent reconnect on a dropped connection
            if self._sock is None:
                self._connect()
            try:
                send_message(self._sock, {"verb": verb, **fields})
                reply = recv_message(self._sock)
                if reply is None:
                    raise ConnectionError("dispatcher closed the connection")
                break
            except (OSError, ProtocolError):
                self.close()
                if attempt:
                    raise
        if reply.get("reply") == "ERR":
            raise ProtocolError(reply.get("code", "error"), reply.get("message", ""))
        return reply

    def acquire(self, step: str, worker: str) -> tuple[JobRecord | None, int]:
        r = self.request("ACQUIRE", step=step, worker=worker)
        if r["reply"] == "NONE":
            return None, int(r.get("remaining", 0))
        job = JobRecord(r["job"], r["step"], fields_to_params(r), attempt_count=int(r["attempt"]))
        return job, -1

    def complete(self, job_id: str, worker: str) -> bool:
        return self.request("COMPLETE", job=job_id, worker=worker)["duplicate"] == "0"

    def heartbeat(self, job_id: str, worker: str) -> None:
        self.request("HEARTBEAT", job=job_id, worker=worker)

    def status(self) -> dict:
        r = self.request("STATUS")
        return {k: int(v) for k, v in r.items() if k != "reply"}

    def close(self):
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None


@dataclass
class WorkerReport:
    worker_id: str
    completed: list = field(default_factory=list)
    duplicates: int = 0
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def default_worker_id() -> str:
    return f"{socket.gethostname()}-{os.getpid()}-{uuid.uuid4().hex[:6]}"


def _heartbeat_loop(address, job_id, worker, every, stop: threading.Event):
    client = DispatcherClient(address, retries=2)
    try:
        while not stop.wait(every):
            try:
                client.heartbeat(job_id, worker)
            except (ProtocolError, SimGraphError, OSError) as exc:
                log.warning("heartbeat for %s failed: %s", job_id, exc)
    finally:
        client.close()


def _slot_loop(address, step, executor, worker_id, report, lock, heartbeat_seconds, poll_seconds,
               max_failures):
    client = DispatcherClient(address)
    failures = 0
    try:
        while True:
            job, remaining = client.acquire(step, worker_id)
            if job is None:
                if remaining == 0:
                    return
                time.sleep(poll_seconds)  # others hold leases that may still expire
                continue
            stop = threading.Event()
            beat = threading.Thread(target=_heartbeat_loop, daemon=True,
                                    args=(client.address_text, job.job_id, worker_id,
                                          heartbeat_seconds, stop))
            beat.start()
            try:
                executor(job)
            except Exception as exc:  # the lease will expire and the job is retried
                log.error("job %s failed: %s", job.job_id, exc)
                with lock:
                    report.failures.append((job.job_id, repr(exc)))
                failures += 1
                if failures >= max_failures:
                    return
                continue
            finally:
                stop.set()
                beat.join()
            fresh = client.complete(job.job_id, worker_id)
            with lock:
                report.completed.append(job.job_id)
                report.duplicates += not fresh
    finally:
        client.close()


def run_worker(address: str, step: str, executor, slots: int = 1, worker_id: str | None = None,
               heartbeat_seconds: float = DEFAULT_HEARTBEAT, poll_seconds: float = 0.2,
               max_failures: int = 3) -> WorkerReport:
    """Loop acquire -> execute -> complete on ``slots`` threads until the step is drained.

    A failing job is logged and abandoned; its lease expires and another
    attempt follows. A slot gives up after ``max_failures`` failed jobs. Raises ``DispatcherUnreachable`` after bounded retries.
    """
    if slots < 1:
        raise ValueError("slots must be positive")
    worker_id = worker_id or default_worker_id()
    report = WorkerReport(worker_id)
    lock = threading.Lock()
    errors = []

    def slot(k):
        try:
            _slot_loop(address, step, executor, worker_id if slots == 1 else f"{worker_id}/{k}",
                       report, lock, heartbeat_seconds, poll_seconds, max_failures)
        except Exception as exc:
            errors.append(exc)

    threads = [threading.Thread(target=slot, args=(k,)) for k in range(slots)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    return report
