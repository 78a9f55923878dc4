"""Dispatcher service: one thread per connection over a shared, journaled ledger."""
from __future__ import annotations

import logging
import socketserver
import threading
from pathlib import Path

from ..errors import ProtocolError, SimGraphError
from .ledger import DONE, LEASED, PENDING, Ledger
from .protocol import params_to_fields, recv_message, send_message

log = logging.getLogger(__name__)

DEFAULT_LEASE = 60.0
DEFAULT_HEARTBEAT = 20.0


class StartupError(SimGraphError):
    pass


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        while True:
            try:
                msg = recv_message(self.request)
            except (ProtocolError, OSError) as exc:
                log.debug("dropping connection: %s", exc)
                return
            if msg is None:
                return
            try:
                reply = self.server.dispatch(msg)
            except ProtocolError as exc:
                reply = {"reply": "ERR", "code": exc.code, "message": str(exc)}
            try:
                send_message(self.request, reply)
            except OSError:
                return


class DispatcherServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, ledger: Ledger, bind: tuple[str, int], lease_seconds: float = DEFAULT_LEASE):
        if lease_seconds <= 0:
            raise StartupError("lease must be positive")
        self.ledger = ledger
        self.lease_seconds = float(lease_seconds)
        try:
            super().__init__(bind, _Handler)
        except OSError as exc:
            raise StartupError(f"cannot bind {bind[0]}:{bind[1]}: {exc}") from exc
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def dispatch(self, msg: dict) -> dict:
        verb = msg.get("verb", "")
        led = self.ledger
        if verb == "ACQUIRE":
            step, worker = _need(msg, "step"), _need(msg, "worker")
            job = led.acquire(step, worker, self.lease_seconds)
            if job is None:
                return {"reply": "NONE", "remaining": led.remaining(step)}
            return {"reply": "JOB", "job": job.job_id, "step": job.step,
                    "attempt": job.attempt_count, "lease": self.lease_seconds,
                    **params_to_fields(job.params)}
        if verb == "COMPLETE":
            fresh = led.complete(_need(msg, "job"), _need(msg, "worker"))
            return {"reply": "ACK", "duplicate": int(not fresh)}
        if verb == "HEARTBEAT":
            led.heartbeat(_need(msg, "job"), _need(msg, "worker"), self.lease_seconds)
            return {"reply": "ACK"}
        if verb == "STATUS":
            led.expire()
            c = led.counts()
            return {"reply": "ACK", "total": len(led.jobs), PENDING: c[PENDING],
                    LEASED: c[LEASED], DONE: c[DONE]}
        raise ProtocolError("unknown_verb", verb)

    def start(self) -> "DispatcherServer":
        self._thread = threading.Thread(target=self.serve_forever, name="dispatcher", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join()
        self.ledger.close()


def _need(msg, key):
    if key not in msg or msg[key] == "":
        raise ProtocolError("missing_field", key)
    return msg[key]


def serve(jobs, bind: tuple[str, int], lease_seconds: float = DEFAULT_LEASE,
          journal_path=None, fsync: bool = True) -> DispatcherServer:
    """Start the dispatcher in a background thread.

    The journal resumes an earlier run; jobs not yet in it are added. Starting
    with neither jobs nor an existing journal is an error.
    """
    jobs = list(jobs)
    if journal_path is None:
        if not jobs:
            raise StartupError("no jobs and no journal to resume")
        ledger = Ledger()
        for job in jobs:
            ledger.add(job)
    else:
        if not jobs and not Path(journal_path).exists():
            raise StartupError(f"no jobs and no journal at {journal_path}")
        ledger = Ledger.open(journal_path, jobs, fsync=fsync)
        if not ledger.jobs:
            ledger.close()
            raise StartupError("ledger is empty")
    try:
        server = DispatcherServer(ledger, bind, lease_seconds)
    except StartupError:
        ledger.close()
        raise
    return server.start()
