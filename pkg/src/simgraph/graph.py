"""In-memory graph types and their on-disk formats.

Every binary file starts with an 8-byte magic whose last byte is the format
version, followed by a little-endian u64 count and a fixed-width body:

    COO block   b"MSBCOO\\0\\1"  u64 n   n x (u32 src, u32 dst, u32 weight)
    offsets     b"MSBOFF\\0\\1"  u64 V   (V + 1) x u64
    edges       b"MSBEDG\\0\\1"  u64 E   E x (u32 neighbor, u32 weight)
    renumbering b"MSBREN\\0\\1"  u64 n   n x u32 (new id -> old id)

CSC always means in-neighbour lists: the slice of vertex ``v`` holds the
sources ``u`` of edges ``u -> v``.
"""
from __future__ import annotations

import contextlib
import hashlib
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import DomainError, FormatError, TruncationError, ValidationError

FORMAT_VERSION = 1
MAGIC_COO = b"MSBCOO\x00\x01"
MAGIC_OFFSETS = b"MSBOFF\x00\x01"
MAGIC_EDGES = b"MSBEDG\x00\x01"
MAGIC_RENUMBER = b"MSBREN\x00\x01"
HEADER_SIZE = 16

MAX_VERTICES = 2**32 - 1
ABSENT = np.uint32(0xFFFFFFFF)

COO_DTYPE = np.dtype([("src", "<u4"), ("dst", "<u4"), ("weight", "<u4")])
EDGE_DTYPE = np.dtype([("neighbor", "<u4"), ("weight", "<u4")])

OFFSETS_FILE = "offsets.bin"
EDGES_FILE = "edges.bin"
MANIFEST_FILE = "manifest.txt"


# ---------------------------------------------------------------------------
# small file helpers


@contextlib.contextmanager
def atomic_write(path):
    """Open a temporary sibling of ``path`` for binary writing and rename it into place on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _read_header(fh, path, magic):
    head = fh.read(HEADER_SIZE)
    if len(head) < HEADER_SIZE:
        raise FormatError(f"{path}: header too short ({len(head)} bytes)")
    if head[:8] != magic:
        if head[:6] == magic[:6] and head[7] != magic[7]:
            raise FormatError(f"{path}: unsupported format version {head[7]}")
        raise FormatError(f"{path}: bad magic {head[:8]!r}, expected {magic!r}")
    (count,) = struct.unpack("<Q", head[8:])
    return count


def _read_body(fh, path, dtype, count):
    want = count * dtype.itemsize
    data = fh.read(want)
    if len(data) < want:
        raise TruncationError(path, HEADER_SIZE + len(data),
                              f"{path}: declared {count} records but body ends at byte "
                              f"{HEADER_SIZE + len(data)} (expected {HEADER_SIZE + want})")
    return np.frombuffer(data, dtype=dtype).copy()


def _write_array(path, magic, count, array):
    with atomic_write(path) as fh:
        fh.write(magic)
        fh.write(struct.pack("<Q", count))
        fh.write(np.ascontiguousarray(array).tobytes())


# ---------------------------------------------------------------------------
# manifests: key=value lines closed by a checksum line over everything above it


def format_manifest(fields: dict) -> str:
    body = "".join(f"{k}={fields[k]}\n" for k in fields)
    digest = hashlib.sha256(body.encode()).hexdigest()
    return body + f"checksum={digest}\n"


def write_manifest(path, fields: dict) -> None:
    with atomic_write(path) as fh:
        fh.write(format_manifest(fields).encode())


def parse_kv_lines(text: str, source="<text>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def read_manifest(path) -> dict:
    text = Path(path).read_text()
    lines = text.splitlines(keepends=True)
    if not lines or not lines[-1].startswith("checksum="):
        raise FormatError(f"{path}: manifest has no checksum line")
    body = "".join(lines[:-1])
    want = lines[-1].strip().split("=", 1)[1]
    if hashlib.sha256(body.encode()).hexdigest() != want:
        raise FormatError(f"{path}: manifest checksum mismatch")
    return parse_kv_lines(body, str(path))


# ---------------------------------------------------------------------------
# partitions and blocks


@dataclass(frozen=True)
class PartitionScheme:
    """Contiguous vertex partitions given by ``P + 1`` ascending boundaries."""

    boundaries: tuple

    def __post_init__(self):
        b = tuple(int(x) for x in self.boundaries)
        if len(b) < 2:
            raise DomainError("a partition scheme needs at least one partition")
        if b[0] != 0:
            raise DomainError("boundaries must start at 0")
        if any(b[k] > b[k + 1] for k in range(len(b) - 1)):
            raise DomainError("boundaries must be non-decreasing")
        if b[-1] > MAX_VERTICES:
            raise DomainError(f"vertex count {b[-1]} exceeds the 32-bit id limit")
        object.__setattr__(self, "boundaries", b)

    @classmethod
    def near_equal(cls, vertex_count: int, partitions: int) -> "PartitionScheme":
        """Split ``vertex_count`` ids into ``partitions`` ranges whose sizes differ by at most one."""
        if partitions < 1:
            raise DomainError("partition count must be positive")
        q, r = divmod(vertex_count, partitions)
        return cls(tuple(k * q + min(k, r) for k in range(partitions + 1)))

    @property
    def partition_count(self) -> int:
        return len(self.boundaries) - 1

    @property
    def vertex_count(self) -> int:
        return self.boundaries[-1]

    @property
    def block_count(self) -> int:
        p = self.partition_count
        return p * (p + 1) // 2

    def sizes(self) -> list[int]:
        b = self.boundaries
        return [b[k + 1] - b[k] for k in range(len(b) - 1)]

    def vertex_range(self, p: int) -> range:
        return range(self.boundaries[p], self.boundaries[p + 1])

    def partition_of(self, v):
        """Partition index of a vertex id, or an array of them."""
        arr = np.asarray(v)
        if arr.size and (arr.min() < 0 or arr.max() >= self.vertex_count):
            raise DomainError(f"vertex id out of range [0, {self.vertex_count})")
        idx = np.searchsorted(np.asarray(self.boundaries[1:], dtype=np.int64), arr, side="right")
        return int(idx) if np.ndim(idx) == 0 else idx

    def blocks(self) -> list[tuple[int, int]]:
        """All blocks ``(i, j)`` with ``i <= j``, ``j`` major and ``i`` minor."""
        return [(i, j) for j in range(self.partition_count) for i in range(j + 1)]

    def to_text(self) -> str:
        return (f"partitions={self.partition_count}\n"
                f"boundaries={','.join(str(x) for x in self.boundaries)}\n")

    @classmethod
    def from_text(cls, text: str) -> "PartitionScheme":
        kv = parse_kv_lines(text)
        scheme = cls(tuple(int(x) for x in kv["boundaries"].split(",")))
        if "partitions" in kv and int(kv["partitions"]) != scheme.partition_count:
            raise FormatError("partition count does not match boundaries")
        return scheme

    def save(self, path) -> None:
        with atomic_write(path) as fh:
            fh.write(self.to_text().encode())

    @classmethod
    def load(cls, path) -> "PartitionScheme":
        return cls.from_text(Path(path).read_text())


def block_of(src: int, dst: int, scheme: PartitionScheme) -> tuple[int, int]:
    """Block holding the pair; orientation is normalised so that ``i <= j``."""
    n = scheme.vertex_count
    for v in (src, dst):
        if not 0 <= v < n:
            raise DomainError(f"vertex id {v} out of range [0, {n})")
    a, b = scheme.partition_of(src), scheme.partition_of(dst)
    return (a, b) if a <= b else (b, a)


def coo_block_name(i: int, j: int) -> str:
    return f"coo_{i}_{j}.bin"


# ---------------------------------------------------------------------------
# COO blocks


def write_coo_block(path, src, dst, weight) -> None:
    src = np.asarray(src)
    n = len(src)
    rec = np.empty(n, dtype=COO_DTYPE)
    rec["src"] = src
    rec["dst"] = dst
    rec["weight"] = weight
    _write_array(path, MAGIC_COO, n, rec)


def read_coo_block(path) -> np.ndarray:
    """Read a whole COO block as a structured array with fields src, dst, weight."""
    with open(path, "rb") as fh:
        count = _read_header(fh, path, MAGIC_COO)
        return _read_body(fh, path, COO_DTYPE, count)


def coo_block_count(path) -> int:
    with open(path, "rb") as fh:
        return _read_header(fh, path, MAGIC_COO)


def iter_coo_block(path, chunk_triples: int = 65536) -> Iterator[np.ndarray]:
    """Stream a COO block in bounded chunks; raises ``TruncationError`` when the body is short."""
    with open(path, "rb") as fh:
        count = _read_header(fh, path, MAGIC_COO)
        done = 0
        while done < count:
            take = min(chunk_triples, count - done)
            want = take * COO_DTYPE.itemsize
            data = fh.read(want)
            if len(data) < want:
                raise TruncationError(path, HEADER_SIZE + done * COO_DTYPE.itemsize + len(data))
            done += take
            yield np.frombuffer(data, dtype=COO_DTYPE)


# ---------------------------------------------------------------------------
# CSC graphs


@dataclass(frozen=True, eq=False)
class CscGraph:
    """Offsets plus in-neighbour edge records.

    ``offsets`` has ``vertex_count + 1`` u64 entries; ``neighbors`` and
    ``weights`` are parallel u32 arrays of length ``edge_count``.
    """

    offsets: np.ndarray
    neighbors: np.ndarray
    weights: np.ndarray
    symmetric: bool = False
    _degrees: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "offsets", np.asarray(self.offsets, dtype=np.uint64))
        object.__setattr__(self, "neighbors", np.asarray(self.neighbors, dtype=np.uint32))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.uint32))
        if self.offsets.ndim != 1 or len(self.offsets) < 1:
            raise ValidationError("offsets must hold vertex_count + 1 entries")
        if len(self.neighbors) != len(self.weights):
            raise ValidationError("neighbors and weights differ in length")
        if int(self.offsets[0]) != 0 or int(self.offsets[-1]) != len(self.neighbors):
            raise ValidationError("offsets must run from 0 to the edge count")
        for a in (self.offsets, self.neighbors, self.weights):
            a.flags.writeable = False

    @classmethod
    def empty(cls, vertex_count: int = 0, symmetric: bool = False) -> "CscGraph":
        return cls(np.zeros(vertex_count + 1, np.uint64), np.zeros(0, np.uint32),
                   np.zeros(0, np.uint32), symmetric)

    @classmethod
    def from_arcs(cls, vertex_count, src, dst, weight, symmetric=False) -> "CscGraph":
        """Build in memory from arc arrays ``src -> dst``; slices sorted by (neighbor, weight)."""
        src = np.asarray(src, dtype=np.uint32)
        dst = np.asarray(dst, dtype=np.uint32)
        weight = np.asarray(weight, dtype=np.uint32)
        if len(dst) and int(max(src.max(), dst.max())) >= vertex_count:
            raise DomainError("arc endpoint out of range")
        order = np.lexsort((weight, src, dst))
        counts = np.bincount(dst, minlength=vertex_count)
        offsets = np.zeros(vertex_count + 1, np.uint64)
        np.cumsum(counts, out=offsets[1:])
        return cls(offsets, src[order], weight[order], symmetric)

    @property
    def vertex_count(self) -> int:
        return len(self.offsets) - 1

    @property
    def edge_count(self) -> int:
        return len(self.neighbors)

    @property
    def direction_kind(self) -> str:
        return "symmetric" if self.symmetric else "asymmetric"

    def in_degrees(self) -> np.ndarray:
        if self._degrees is None:
            object.__setattr__(self, "_degrees", np.diff(self.offsets).astype(np.int64))
        return self._degrees

    def out_degrees(self) -> np.ndarray:
        return np.bincount(self.neighbors, minlength=self.vertex_count).astype(np.int64)

    def destinations(self) -> np.ndarray:
        """Destination vertex of every edge slot, aligned with ``neighbors``."""
        return np.repeat(np.arange(self.vertex_count, dtype=np.uint32), self.in_degrees())

    def slice(self, v: int) -> tuple[np.ndarray, np.ndarray]:
        a, b = int(self.offsets[v]), int(self.offsets[v + 1])
        return self.neighbors[a:b], self.weights[a:b]

    def with_kind(self, symmetric: bool) -> "CscGraph":
        return CscGraph(self.offsets, self.neighbors, self.weights, symmetric)

    def equals(self, other: "CscGraph") -> bool:
        return (self.symmetric == other.symmetric
                and np.array_equal(self.offsets, other.offsets)
                and np.array_equal(self.neighbors, other.neighbors)
                and np.array_equal(self.weights, other.weights))

    def unsorted_vertex(self, strict: bool = False) -> int | None:
        """First vertex whose neighbour slice is not ascending (strictly, if ``strict``)."""
        if self.edge_count < 2:
            return None
        d = np.diff(self.neighbors.astype(np.int64))
        bad = d <= 0 if strict else d < 0
        # a "descent" across a slice boundary is legitimate
        starts = self.offsets[1:-1].astype(np.int64)
        starts = starts[(starts > 0) & (starts < self.edge_count)]
        bad[starts - 1] = False
        hits = np.flatnonzero(bad)
        if not len(hits):
            return None
        return int(np.searchsorted(self.offsets, hits[0], side="right") - 1)

    def check(self) -> None:
        """Raise ``ValidationError`` naming the first vertex that breaks a CSC invariant."""
        off = self.offsets
        if off[0] != 0:
            raise ValidationError("offsets[0] must be 0", vertex=0)
        if self.vertex_count > MAX_VERTICES:
            raise ValidationError("vertex count exceeds 32-bit id limit")
        dec = np.flatnonzero(off[1:] < off[:-1])
        if len(dec):
            raise ValidationError(f"offsets decrease at vertex {int(dec[0])}", vertex=int(dec[0]))
        if int(off[-1]) != self.edge_count:
            raise ValidationError(f"offsets end at {int(off[-1])}, edge count is {self.edge_count}",
                                  vertex=self.vertex_count - 1)
        if self.edge_count:
            big = np.flatnonzero(self.neighbors >= self.vertex_count)
            if len(big):
                v = int(np.searchsorted(off, big[0], side="right") - 1)
                raise ValidationError(f"vertex {v} has out-of-range neighbour "
                                      f"{int(self.neighbors[big[0]])}", vertex=v)
        v = self.unsorted_vertex()
        if v is not None:
            raise ValidationError(f"neighbours of vertex {v} are not sorted", vertex=v)
        if self.symmetric:
            v = asymmetric_vertex(self)
            if v is not None:
                raise ValidationError(f"vertex {v} has an edge without an equal-weight reverse",
                                      vertex=v)


def asymmetric_vertex(graph: CscGraph) -> int | None:
    """First destination holding an edge whose reverse (same weight) is missing, else None."""
    if graph.edge_count == 0:
        return None
    dst = graph.destinations()
    src = graph.neighbors
    w = graph.weights
    fwd = np.lexsort((w, src, dst))
    rev = np.lexsort((w, dst, src))
    same = ((dst[fwd] == src[rev]) & (src[fwd] == dst[rev]) & (w[fwd] == w[rev]))
    if same.all():
        return None
    k = int(np.flatnonzero(~same)[0])
    return int(min(dst[fwd][k], src[rev][k]))


def write_csc(graph: CscGraph, directory, extra: dict | None = None) -> dict:
    """Validate and serialise a graph; returns the manifest fields written."""
    graph.check()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rec = np.empty(graph.edge_count, dtype=EDGE_DTYPE)
    rec["neighbor"] = graph.neighbors
    rec["weight"] = graph.weights
    _write_array(directory / OFFSETS_FILE, MAGIC_OFFSETS, graph.vertex_count,
                 graph.offsets.astype("<u8"))
    _write_array(directory / EDGES_FILE, MAGIC_EDGES, graph.edge_count, rec)
    fields = {
        "format": "csc",
        "version": FORMAT_VERSION,
        "vertex_count": graph.vertex_count,
        "edge_count": graph.edge_count,
        "direction_kind": graph.direction_kind,
        "offsets_sha256": file_sha256(directory / OFFSETS_FILE),
        "edges_sha256": file_sha256(directory / EDGES_FILE),
    }
    fields.update(extra or {})
    write_manifest(directory / MANIFEST_FILE, fields)
    return fields


def read_csc(directory, verify: bool = True) -> CscGraph:
    directory = Path(directory)
    manifest = read_manifest(directory / MANIFEST_FILE)
    if verify:
        for name, key in ((OFFSETS_FILE, "offsets_sha256"), (EDGES_FILE, "edges_sha256")):
            if file_sha256(directory / name) != manifest[key]:
                raise FormatError(f"{directory / name}: checksum does not match manifest")
    with open(directory / OFFSETS_FILE, "rb") as fh:
        v = _read_header(fh, directory / OFFSETS_FILE, MAGIC_OFFSETS)
        offsets = _read_body(fh, directory / OFFSETS_FILE, np.dtype("<u8"), v + 1)
    with open(directory / EDGES_FILE, "rb") as fh:
        e = _read_header(fh, directory / EDGES_FILE, MAGIC_EDGES)
        rec = _read_body(fh, directory / EDGES_FILE, EDGE_DTYPE, e)
    if v != int(manifest["vertex_count"]) or e != int(manifest["edge_count"]):
        raise FormatError(f"{directory}: counts disagree with manifest")
    return CscGraph(offsets, rec["neighbor"], rec["weight"],
                    manifest["direction_kind"] == "symmetric")


def csc_checksum(directory) -> str:
    """Identity of a stored graph: the digest of its manifest."""
    return hashlib.sha256((Path(directory) / MANIFEST_FILE).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# renumbering


@dataclass(frozen=True, eq=False)
class RenumberMap:
    """Order-preserving renumbering; ``forward[old]`` is ``ABSENT`` for dropped vertices."""

    forward: np.ndarray
    reverse: np.ndarray

    @classmethod
    def from_mask(cls, keep: np.ndarray) -> "RenumberMap":
        keep = np.asarray(keep, dtype=bool)
        reverse = np.flatnonzero(keep).astype(np.uint32)
        forward = np.full(len(keep), ABSENT, dtype=np.uint32)
        forward[reverse] = np.arange(len(reverse), dtype=np.uint32)
        return cls(forward, reverse)

    @property
    def old_count(self) -> int:
        return len(self.forward)

    @property
    def new_count(self) -> int:
        return len(self.reverse)

    def is_identity(self) -> bool:
        return self.old_count == self.new_count

    def write_reverse(self, path) -> None:
        _write_array(path, MAGIC_RENUMBER, self.new_count, self.reverse.astype("<u4"))

    @classmethod
    def read_reverse(cls, path, old_count: int) -> "RenumberMap":
        with open(path, "rb") as fh:
            n = _read_header(fh, path, MAGIC_RENUMBER)
            reverse = _read_body(fh, path, np.dtype("<u4"), n)
        keep = np.zeros(old_count, dtype=bool)
        keep[reverse] = True
        return cls.from_mask(keep)
