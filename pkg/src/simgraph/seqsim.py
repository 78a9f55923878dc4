"""Corpus partitioning, the block schedule, pairwise alignment and synthetic COO input."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from . import _kernels as K
from .errors import DomainError, ParseError, StorageError
from .graph import MAX_VERTICES, PartitionScheme, atomic_write, coo_block_name, write_coo_block

log = logging.getLogger(__name__)

ALPHABET = "ACDEFGHIKLMNPQRSTVWY"
_CODE = np.full(256, -1, dtype=np.int8)
for _k, _c in enumerate(ALPHABET):
    _CODE[ord(_c)] = _k
_VALID = re.compile(f"^[{ALPHABET}]+$")

SCHEME_FILE = "scheme.txt"


@dataclass(frozen=True)
class SequenceRecord:
    id: int
    name: str
    residues: str


# ---------------------------------------------------------------------------
# FASTA-like input


def iter_fasta(path) -> Iterator[tuple[str, str]]:
    """Yield ``(name, residues)``; residues must use the 20-letter amino-acid alphabet."""
    name = None
    chunks: list[str] = []
    index = -1
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith(">"):
                if name is not None:
                    yield _finish(name, chunks, index)
                name = line[1:].strip()
                chunks = []
                index += 1
            else:
                if name is None:
                    raise ParseError("sequence data before the first '>' header", record_index=0)
                chunks.append(line.upper())
    if name is not None:
        yield _finish(name, chunks, index)


def _finish(name, chunks, index):
    seq = "".join(chunks)
    if not seq:
        raise ParseError(f"record {index} ({name!r}) has no residues", record_index=index)
    if not _VALID.match(seq):
        bad = next(c for c in seq if c not in ALPHABET)
        raise ParseError(f"record {index} ({name!r}) has invalid residue {bad!r}",
                         record_index=index)
    return name, seq


def encode_residues(seq: str) -> np.ndarray:
    return _CODE[np.frombuffer(seq.encode(), dtype=np.uint8)].astype(np.int64)


def partition_path(directory, p: int) -> Path:
    return Path(directory) / f"part_{p}.seq"


def names_path(directory, p: int) -> Path:
    return Path(directory) / f"part_{p}.names"


def partition_corpus(fasta_input, partitions: int, out_dir) -> PartitionScheme:
    """Assign ids 0..N-1 in input order and write near-equal id-sequence and id-name shards."""
    if partitions < 1:
        raise DomainError("partition count must be positive")
    count = sum(1 for _ in iter_fasta(fasta_input))  # validates every record
    if count == 0:
        raise DomainError(f"{fasta_input}: corpus is empty")
    if count > MAX_VERTICES:
        raise DomainError("corpus exceeds the 32-bit id limit")
    scheme = PartitionScheme.near_equal(count, partitions)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = iter_fasta(fasta_input)
    next_id = 0
    for p in range(partitions):
        with atomic_write(partition_path(out_dir, p)) as seq_fh, \
                atomic_write(names_path(out_dir, p)) as name_fh:
            for _ in scheme.vertex_range(p):
                name, seq = next(records)
                seq_fh.write(f">{next_id}\n{seq}\n".encode())
                name_fh.write(f"{next_id}\t{name}\n".encode())
                next_id += 1
    scheme.save(out_dir / SCHEME_FILE)
    return scheme


def load_partition(directory, p: int) -> list[SequenceRecord]:
    return [SequenceRecord(int(name), name, seq)
            for name, seq in iter_fasta(partition_path(directory, p))]


def load_names(directory, p: int) -> dict[int, str]:
    out = {}
    with open(names_path(directory, p)) as fh:
        for line in fh:
            vid, name = line.rstrip("\n").split("\t", 1)
            out[int(vid)] = name
    return out


# ---------------------------------------------------------------------------
# block schedule


@dataclass(frozen=True)
class AlignJob:
    i: int
    j: int
    corpus_dir: Path | None = None
    output_path: Path | None = None

    @property
    def block(self) -> tuple[int, int]:
        return self.i, self.j

    @property
    def job_id(self) -> str:
        return f"align-{self.i}-{self.j}"


def enumerate_blocks(scheme: PartitionScheme, corpus_dir=None, out_dir=None) -> list[AlignJob]:
    """One job per block ``(i, j)``, ``i <= j``; ``j`` major, ``i`` minor."""
    jobs = []
    for i, j in scheme.blocks():
        out = Path(out_dir) / coo_block_name(i, j) if out_dir is not None else None
        jobs.append(AlignJob(i, j, Path(corpus_dir) if corpus_dir else None, out))
    return jobs


# ---------------------------------------------------------------------------
# alignment


@dataclass(frozen=True, eq=False)
class SubstitutionMatrix:
    scores: np.ndarray  # 20 x 20, indexed in ALPHABET order
    gap_penalty: int

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.int64)
        if s.shape != (20, 20):
            raise DomainError("substitution matrix must be 20 x 20")
        if not np.array_equal(s, s.T):
            raise DomainError("substitution matrix must be symmetric")
        if self.gap_penalty >= 0:
            raise DomainError("gap penalty must be negative")
        object.__setattr__(self, "scores", s)

    @classmethod
    def simple(cls, match: int = 2, mismatch: int = -1, gap: int = -2) -> "SubstitutionMatrix":
        s = np.full((20, 20), mismatch, dtype=np.int64)
        np.fill_diagonal(s, match)
        return cls(s, gap)

    @classmethod
    def load(cls, path, gap: int = -2) -> "SubstitutionMatrix":
        """Read a whitespace matrix: a header row of letters, then one labelled row per letter."""
        rows = [ln.split() for ln in Path(path).read_text().splitlines()
                if ln.strip() and not ln.lstrip().startswith("#")]
        header = rows[0]
        table = {r[0]: dict(zip(header, map(int, r[1:]))) for r in rows[1:]}
        try:
            s = [[table[a][b] for b in ALPHABET] for a in ALPHABET]
        except KeyError as exc:
            raise ParseError(f"{path}: matrix lacks residue {exc.args[0]!r}") from None
        return cls(np.array(s), gap)

    def score(self, a: str, b: str) -> int:
        return int(self.scores[ALPHABET.index(a), ALPHABET.index(b)])


def local_alignments(a: str, b: str, matrix: SubstitutionMatrix, min_score: int = 1,
                     max_alignments: int = 1) -> list[int]:
    """Scores of up to ``max_alignments`` masked-rerun local alignments, best first."""
    hits = K.smith_waterman(encode_residues(a), encode_residues(b), matrix.scores,
                            matrix.gap_penalty, max_alignments, max(min_score, 1))
    return hits.tolist()


def align_score(a: str, b: str, matrix: SubstitutionMatrix) -> int:
    """Optimal local alignment score (0 when nothing aligns)."""
    hits = local_alignments(a, b, matrix, 1, 1)
    return hits[0] if hits else 0


def align_block(job: AlignJob, matrix: SubstitutionMatrix, min_score: int = 30,
                max_alignments_per_pair: int = 3, self_pairs: bool = False) -> Path:
    """Align partition ``i`` against partition ``j`` and commit ``coo_i_j.bin``.

    Pairs are visited with ``x <= y`` (``x < y`` unless self-pairs are on);
    each qualifying alignment contributes one ``(x, y, score)`` triple.
    A block whose output already exists is left alone.
    """
    if min_score <= 0:
        raise DomainError("min_score must be positive")
    if job.corpus_dir is None or job.output_path is None:
        raise DomainError("align job needs a corpus directory and an output path")
    out = Path(job.output_path)
    if out.exists():
        log.debug("block (%d,%d) already committed", job.i, job.j)
        return out
    left = load_partition(job.corpus_dir, job.i)
    right = left if job.i == job.j else load_partition(job.corpus_dir, job.j)
    right_codes = [encode_residues(r.residues) for r in right]
    src, dst, wts = [], [], []
    for x in left:
        xc = encode_residues(x.residues)
        for y, yc in zip(right, right_codes):
            if y.id < x.id or (y.id == x.id and not self_pairs):
                continue
            hits = K.smith_waterman(xc, yc, matrix.scores, matrix.gap_penalty,
                                    max_alignments_per_pair, min_score)
            for score in hits:
                src.append(x.id)
                dst.append(y.id)
                wts.append(int(score))
    try:
        write_coo_block(out, np.array(src, np.uint32), np.array(dst, np.uint32),
                        np.array(wts, np.uint32))
    except OSError as exc:
        raise StorageError(f"cannot write {out}: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# synthetic input


@dataclass(frozen=True)
class WeightLaw:
    """Integer weight distribution: ``uniform``, ``powerlaw`` or ``constant``.

    ``powerlaw`` draws ``floor(low * U ** (-1 / (exponent - 1)))`` clipped to
    ``high``, so ``P(W >= w) = (low / w) ** (exponent - 1)`` for ``low <= w <= high``.
    """

    kind: str = "powerlaw"
    low: int = 98
    high: int = 634925
    exponent: float = 2.5

    @classmethod
    def parse(cls, text: str) -> "WeightLaw":
        """Parse ``kind:key=value,...``, e.g. ``powerlaw:low=98,high=634925,exponent=2.5``."""
        kind, _, rest = text.partition(":")
        kw = {}
        try:
            for item in filter(None, rest.split(",")):
                k, v = item.split("=")
                k = k.strip()
                if k not in ("low", "high", "exponent"):
                    raise ValueError(k)
                kw[k] = float(v) if k == "exponent" else int(v)
        except ValueError:
            raise ParseError(f"bad weight law {text!r}; expected kind:low=..,high=..,exponent=..") from None
        law = cls(kind.strip(), **kw)
        if law.low < 1 or law.high < law.low:
            raise DomainError("weight law needs 1 <= low <= high")
        if law.kind not in ("uniform", "powerlaw", "constant"):
            raise DomainError(f"unknown weight law {law.kind!r}")
        return law

    def to_text(self) -> str:
        return f"{self.kind}:low={self.low},high={self.high},exponent={self.exponent}"

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "constant":
            return np.full(n, self.low, np.uint32)
        if self.kind == "uniform":
            return rng.integers(self.low, self.high + 1, n).astype(np.uint32)
        u = 1.0 - rng.random(n)  # (0, 1]
        w = np.floor(self.low * u ** (-1.0 / (self.exponent - 1.0)))
        return np.minimum(w, self.high).astype(np.uint32)

    def ccdf(self, w: float) -> float:
        """Exact ``P(W >= w)``."""
        if w <= self.low:
            return 1.0
        if w > self.high:
            return 0.0
        if self.kind == "constant":
            return 0.0
        if self.kind == "uniform":
            return (self.high - np.ceil(w) + 1) / (self.high - self.low + 1)
        return (self.low / np.ceil(w)) ** (self.exponent - 1.0)


def _pair_capacity(n: int, self_loops: bool) -> int:
    return n * (n + 1) // 2 if self_loops else n * (n - 1) // 2


def synthetic_pairs(vertex_count: int, edge_count: int, rng: np.random.Generator,
                    skew: float = 0.0, self_loops: bool = False):
    """Distinct pairs ``(src, dst)`` with ``src <= dst``; endpoints weighted by a Zipf-like law."""
    n = vertex_count
    if n == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    capacity = _pair_capacity(n, self_loops)
    if 2 * edge_count > capacity and capacity <= 4_000_000:
        lo, hi = np.triu_indices(n, 0 if self_loops else 1)
        pick = rng.choice(capacity, edge_count, replace=False)
        return lo[pick].astype(np.int64), hi[pick].astype(np.int64)
    if skew > 0:
        pop = (np.arange(1, n + 1, dtype=np.float64)) ** (-skew)
        pop = pop[rng.permutation(n)]
        pop /= pop.sum()
    else:
        pop = None
    keys = np.zeros(0, np.int64)
    stall = 0
    while len(keys) < edge_count:
        want = edge_count - len(keys)
        batch = int(want * 1.3) + 64
        a = rng.choice(n, batch, p=pop)
        b = rng.choice(n, batch, p=pop)
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        if not self_loops:
            keep = lo != hi
            lo, hi = lo[keep], hi[keep]
        new = np.unique(np.concatenate([keys, lo * n + hi]))
        stall = stall + 1 if len(new) == len(keys) else 0
        if stall > 50:
            raise DomainError("cannot draw enough distinct pairs; lower the skew or edge count")
        keys = new
    # unique() sorted the keys; draw a deterministic random subset in random order
    keys = keys[rng.permutation(len(keys))[:edge_count]]
    return keys // n, keys % n


def generate_synthetic_coo(vertex_count: int, edge_count: int, weight_law: WeightLaw,
                           scheme: PartitionScheme, seed: int, out_dir,
                           skew: float = 0.8, duplicate_fraction: float = 0.0,
                           self_loops: bool = False) -> list[Path]:
    """Write one COO block file per block of ``scheme``; deterministic for a fixed seed.

    ``duplicate_fraction`` appends that share of extra triples repeating an
    existing pair with a freshly drawn weight (exercising deduplication).
    """
    if vertex_count <= 0:
        raise DomainError("vertex_count must be positive")
    if scheme.vertex_count != vertex_count:
        raise DomainError("scheme does not cover the vertex set")
    if edge_count < 0 or edge_count > _pair_capacity(vertex_count, self_loops):
        raise DomainError(f"{edge_count} edges exceed the lower-triangle capacity")
    rng = np.random.default_rng(seed)
    src, dst = synthetic_pairs(vertex_count, edge_count, rng, skew, self_loops)
    wts = weight_law.sample(rng, len(src))
    extra = int(round(duplicate_fraction * len(src)))
    if extra:
        pick = rng.integers(0, len(src), extra)
        src = np.concatenate([src, src[pick]])
        dst = np.concatenate([dst, dst[pick]])
        wts = np.concatenate([wts, weight_law.sample(rng, extra)])
    pi = scheme.partition_of(src)
    pj = scheme.partition_of(dst)
    block_id = pj * (pj + 1) // 2 + pi  # matches scheme.blocks() order
    order = np.argsort(block_id, kind="stable")
    bounds = np.searchsorted(block_id[order], np.arange(scheme.block_count + 1))
    out_dir = Path(out_dir)
    paths = []
    for k, (i, j) in enumerate(scheme.blocks()):
        sel = order[bounds[k]: bounds[k + 1]]
        path = out_dir / coo_block_name(i, j)
        write_coo_block(path, src[sel], dst[sel], wts[sel])
        paths.append(path)
    return paths


def synthetic_corpus(path, families: int, members: int, length: int, mutation: float,
                     seed: int) -> int:
    """Write a FASTA corpus of mutated sequence families; returns the record count."""
    rng = np.random.default_rng(seed)
    letters = np.array(list(ALPHABET))
    n = 0
    with atomic_write(path) as fh:
        for f in range(families):
            root = rng.integers(0, 20, length)
            for m in range(members):
                seq = root.copy()
                flip = rng.random(length) < mutation
                seq[flip] = rng.integers(0, 20, int(flip.sum()))
                fh.write(f">fam{f}_m{m}\n{''.join(letters[seq])}\n".encode())
                n += 1
    return n
