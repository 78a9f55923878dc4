"""Job runners keyed by step name, and the rename-style commit they share."""
from __future__ import annotations

import os
import time
import uuid
from pathlib import Path

from .ledger import JobRecord


def commit_bytes(final_path, data: bytes) -> bool:
    """Write to a private temporary file, then hard-link it into place.

    ``link`` fails if the target exists, so among concurrent or repeated
    attempts exactly one commits; the rest return False. A crash at any point
    leaves at most a stray temporary file.
    """
    final = Path(final_path)
    final.parent.mkdir(parents=True, exist_ok=True)
    tmp = final.with_name(f"{final.name}.tmp.{os.getpid()}.{uuid.uuid4().hex[:8]}")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    try:
        os.link(tmp, final)
        return True
    except FileExistsError:
        return False
    finally:
        tmp.unlink(missing_ok=True)


def run_sleep(job: JobRecord) -> None:
    time.sleep(float(job.params.get("seconds", "0")))


def run_touch(job: JobRecord) -> None:
    commit_bytes(job.params["output"], job.params.get("payload", job.job_id).encode())


def run_align(job: JobRecord) -> None:
    from ..seqsim import AlignJob, SubstitutionMatrix, align_block

    p = job.params
    gap = int(p.get("gap", "-2"))
    matrix = (SubstitutionMatrix.load(p["matrix"], gap) if p.get("matrix")
              else SubstitutionMatrix.simple(gap=gap))
    align_block(AlignJob(int(p["i"]), int(p["j"]), Path(p["corpus"]), Path(p["output"])), matrix,
                min_score=int(p.get("min_score", "30")),
                max_alignments_per_pair=int(p.get("max_alignments", "3")),
                self_pairs=p.get("self_pairs", "0") == "1")


EXECUTORS = {"sleep": run_sleep, "touch": run_touch, "align": run_align}


def executor_for(step: str):
    try:
        return EXECUTORS[step]
    except KeyError:
        raise KeyError(f"no executor for step {step!r}; known: {sorted(EXECUTORS)}") from None


def align_jobs(align_jobs_list, min_score: int = 30, max_alignments: int = 3, matrix=None,
               gap: int = -2) -> list[JobRecord]:
    """Ledger records for a block schedule (``seqsim.enumerate_blocks`` output)."""
    out = []
    for a in align_jobs_list:
        params = {"i": a.i, "j": a.j, "corpus": str(a.corpus_dir), "output": str(a.output_path),
                  "min_score": min_score, "max_alignments": max_alignments, "gap": gap}
        if matrix:
            params["matrix"] = str(matrix)
        out.append(JobRecord(a.job_id, "align", {k: str(v) for k, v in params.items()}))
    return out
