"""Job dispatcher: journaled ledger, TCP service, workers and a crash-injection harness."""
from .executors import EXECUTORS, align_jobs, commit_bytes, executor_for
from .journal import Journal, read_journal
from .ledger import DONE, LEASED, PENDING, JobRecord, Ledger, read_jobs_file, replay_file, write_jobs_file
from .server import DEFAULT_HEARTBEAT, DEFAULT_LEASE, DispatcherServer, StartupError, serve
from .worker import DispatcherClient, DispatcherUnreachable, WorkerReport, run_worker

__all__ = [
    "DEFAULT_HEARTBEAT", "DEFAULT_LEASE", "DONE", "DispatcherClient", "DispatcherServer",
    "DispatcherUnreachable", "EXECUTORS", "JobRecord", "Journal", "LEASED", "Ledger", "PENDING",
    "StartupError", "WorkerReport", "align_jobs", "commit_bytes", "executor_for", "read_jobs_file",
    "read_journal", "replay_file", "run_worker", "serve", "write_jobs_file",
]
