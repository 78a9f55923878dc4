"""Gamma-coded graph container with a coupled label stream.

Per vertex the graph stream holds ``gamma(degree + 1)`` and, when the degree
is positive, ``gamma(first + 1)`` followed by ``gamma(gap)`` for every later
neighbour. The label stream holds ``gamma(weight + 1)`` per edge in the same
order. Both streams get Elias-Fano indexes of per-vertex bit positions
(``V + 1`` entries, the last one being the stream length), so a zero-degree
vertex's label slice is empty and starts where the next vertex's does.

File layout (little-endian)::

    b"MSBBVZ\\0\\1"
    u64 vertex_count, u64 edge_count, u8 flags (bit 0: symmetric)
    u64 graph_bits, u64 label_bits
    graph stream bytes, label stream bytes      (each zero-padded to a byte)
    Elias-Fano index of graph positions
    Elias-Fano index of label positions
    u32 crc32 of every preceding byte

No vertex's code depends on another's, so vertex-range chunks are encoded
independently and bit-concatenated; the file is identical for any chunk count.
"""
from __future__ import annotations

import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import _kernels as K
from ..errors import CorruptionError, DomainError, PreconditionError
from ..graph import CscGraph, atomic_write
from .eliasfano import EliasFanoIndex, ef_build

MAGIC = b"MSBBVZ\x00\x01"
FLAG_SYMMETRIC = 1
_HEAD = struct.Struct("<QQBQQ")


@dataclass(frozen=True, eq=False)
class CompressedGraph:
    vertex_count: int
    edge_count: int
    symmetric: bool
    graph_stream: np.ndarray
    graph_bits: int
    label_stream: np.ndarray
    label_bits: int
    graph_offsets: EliasFanoIndex
    label_offsets: EliasFanoIndex

    def neighbors(self, v: int) -> list[tuple[int, int]]:
        nbrs, wts = self.neighbor_arrays(v)
        return list(zip(nbrs.tolist(), wts.tolist()))

    def neighbor_arrays(self, v: int) -> tuple[np.ndarray, np.ndarray]:
        if not 0 <= v < self.vertex_count:
            raise DomainError(f"vertex {v} out of range [0, {self.vertex_count})")
        gpos = self.graph_offsets.access(v)
        lpos = self.label_offsets.access(v)
        nbrs, wts, status = K.decode_vertex(self.graph_stream, self.graph_bits, gpos,
                                            self.label_stream, self.label_bits, lpos)
        if status < 0:
            raise CorruptionError(f"stream exhausted decoding vertex {v}", vertex=v)
        return nbrs, wts

    @property
    def size_bytes(self) -> int:
        return len(self.to_bytes())

    def to_bytes(self) -> bytes:
        flags = FLAG_SYMMETRIC if self.symmetric else 0
        body = b"".join([
            MAGIC,
            _HEAD.pack(self.vertex_count, self.edge_count, flags, self.graph_bits, self.label_bits),
            self.graph_stream.tobytes(),
            self.label_stream.tobytes(),
            self.graph_offsets.to_bytes(),
            self.label_offsets.to_bytes(),
        ])
        return body + struct.pack("<I", zlib.crc32(body))

    @classmethod
    def from_bytes(cls, data: bytes) -> "CompressedGraph":
        if len(data) < len(MAGIC) + _HEAD.size + 4:
            raise CorruptionError(f"container too short ({len(data)} bytes)")
        if data[:8] != MAGIC:
            raise CorruptionError(f"bad magic {data[:8]!r}")
        (crc,) = struct.unpack_from("<I", data, len(data) - 4)
        if zlib.crc32(data[:-4]) != crc:
            raise CorruptionError("container checksum mismatch (truncated or corrupted)")
        vc, ec, flags, gbits, lbits = _HEAD.unpack_from(data, 8)
        off = 8 + _HEAD.size
        glen, llen = (gbits + 7) // 8, (lbits + 7) // 8
        if off + glen + llen > len(data) - 4:
            raise CorruptionError("bitstreams extend past end of container")
        mv = memoryview(data)
        gstream = np.frombuffer(mv[off: off + glen], np.uint8)
        off += glen
        lstream = np.frombuffer(mv[off: off + llen], np.uint8)
        off += llen
        gidx, off = EliasFanoIndex.from_bytes(data, off)
        lidx, off = EliasFanoIndex.from_bytes(data, off)
        if off != len(data) - 4 or gidx.n != vc + 1 or lidx.n != vc + 1:
            raise CorruptionError("offset indexes inconsistent with header")
        return cls(vc, ec, bool(flags & FLAG_SYMMETRIC), gstream, gbits, lstream, lbits,
                   gidx, lidx)

    def save(self, path) -> None:
        with atomic_write(path) as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "CompressedGraph":
        return cls.from_bytes(Path(path).read_bytes())


def chunk_bounds(graph: CscGraph, chunk_count: int) -> list[int]:
    """Vertex boundaries of ``chunk_count`` contiguous ranges with roughly equal edge counts."""
    if chunk_count < 1:
        raise DomainError("chunk_count must be positive")
    v, e = graph.vertex_count, graph.edge_count
    targets = [e * k // chunk_count for k in range(1, chunk_count)]
    cuts = np.searchsorted(graph.offsets, np.asarray(targets, dtype=np.uint64), side="left")
    bounds = [0] + [int(c) for c in cuts] + [v]
    return [min(max(b, 0), v) for b in bounds]


def _concat_bits(parts):
    """Bit-concatenate (buffer, nbits) pairs; returns (buffer, nbits, start offsets)."""
    starts = []
    pieces = []
    total = 0
    for buf, nbits in parts:
        starts.append(total)
        total += nbits
        if nbits:
            pieces.append(np.unpackbits(buf)[:nbits])
    if not pieces:
        return np.zeros(0, np.uint8), 0, starts
    return np.packbits(np.concatenate(pieces)), total, starts


def compress(graph: CscGraph, chunk_count: int = 1, workers: int | None = None) -> CompressedGraph:
    """Encode a deduplicated graph; ``chunk_count`` ranges are encoded concurrently."""
    bad = graph.unsorted_vertex(strict=True)
    if bad is not None:
        raise PreconditionError(f"neighbours of vertex {bad} are not strictly ascending "
                                f"(deduplicate before compressing)")
    bounds = chunk_bounds(graph, chunk_count)
    offsets = graph.offsets.astype(np.int64)
    nbrs, wts = graph.neighbors, graph.weights

    def encode(k):
        return K.encode_range(offsets, nbrs, wts, bounds[k], bounds[k + 1])

    n_workers = workers or min(chunk_count, 8)
    if n_workers > 1 and chunk_count > 1:
        with ThreadPoolExecutor(n_workers) as pool:
            results = list(pool.map(encode, range(chunk_count)))
    else:
        results = [encode(k) for k in range(chunk_count)]
    for r in results:
        if r[6] < 0:
            raise PreconditionError(f"neighbours of vertex {-1 - r[6]} are not strictly ascending")

    gstream, gbits, gstarts = _concat_bits([(r[0], r[1]) for r in results])
    lstream, lbits, lstarts = _concat_bits([(r[2], r[3]) for r in results])
    gpos = [results[0][4][:1]] if results else []
    lpos = [results[0][5][:1]] if results else []
    for k, r in enumerate(results):
        gpos.append(r[4][1:] + gstarts[k])
        lpos.append(r[5][1:] + lstarts[k])
    gpos = np.concatenate(gpos)
    lpos = np.concatenate(lpos)
    return CompressedGraph(graph.vertex_count, graph.edge_count, graph.symmetric,
                           gstream, gbits, lstream, lbits,
                           ef_build(gpos, gbits + 1), ef_build(lpos, lbits + 1))


def decompress_stream(cg: CompressedGraph) -> CscGraph:
    """Rebuild the CSC graph with one sequential pass over each bitstream."""
    offsets, nbrs, wts, status = K.decode_all(cg.graph_stream, cg.graph_bits,
                                              cg.label_stream, cg.label_bits,
                                              cg.vertex_count, cg.edge_count)
    if status < 0:
        v = -1 - status
        raise CorruptionError(f"bitstream inconsistent at vertex {v}", vertex=v)
    return CscGraph(offsets, nbrs, wts, cg.symmetric)


def neighbors(cg: CompressedGraph, v: int) -> list[tuple[int, int]]:
    return cg.neighbors(v)
