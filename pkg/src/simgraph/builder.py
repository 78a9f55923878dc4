"""COO to CSC conversion under a memory budget, validation, deduplication,
transposition and symmetrisation.

The COO input is a directory of ``coo_i_j.bin`` blocks. Because every edge of
destination partition ``p_j`` lives in a block ``(p_i, p_j)`` with ``i <= j``,
the edge array can be filled one group of destination partitions at a time;
only that group's slice (8 bytes per edge) is resident.
"""
from __future__ import annotations

import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K
from .errors import (CompletenessError, DomainError, PlanningError, PreconditionError,
                     ValidationError)
from .graph import (EDGE_DTYPE, MAGIC_EDGES, CscGraph, PartitionScheme,
                    coo_block_name, iter_coo_block, write_csc, write_manifest)

log = logging.getLogger(__name__)

EDGE_BYTES = 8  # u32 neighbour + u32 weight
# working memory per COO triple while claiming slots: raw record, packed key,
# destination offsets, sort order, slot indices
CHUNK_BYTES_PER_TRIPLE = 12 + 8 + 8 + 8 + 8
CHUNK_BUDGET = 768 * 1024
_LOW32 = np.uint64(0xFFFFFFFF)


@dataclass
class GroupPlan:
    groups: list  # (first_partition, last_partition_exclusive)
    memory_budget_bytes: int
    group_bytes: list = field(default_factory=list)


@dataclass
class BuildMetrics:
    triples_scanned: int = 0
    peak_edge_buffer_bytes: int = 0
    largest_group_bytes: int = 0
    groups: int = 0
    durations: dict = field(default_factory=dict)

    def to_fields(self) -> dict:
        out = {
            "triples_scanned": self.triples_scanned,
            "peak_edge_buffer_bytes": self.peak_edge_buffer_bytes,
            "largest_group_bytes": self.largest_group_bytes,
            "groups": self.groups,
        }
        out.update({f"seconds_{k}": f"{v:.6f}" for k, v in self.durations.items()})
        return out


@dataclass
class ValidationReport:
    ok: bool
    checked: int = 0
    message: str = ""
    first_vertex: int | None = None
    first_triple: tuple | None = None

    def __bool__(self):
        return self.ok

    def raise_for_failure(self):
        if not self.ok:
            raise ValidationError(self.message, vertex=self.first_vertex, edge=self.first_triple)
        return self


class _Tracker:
    """Thread-safe accounting of live edge-buffer bytes."""

    def __init__(self):
        self.lock = threading.Lock()
        self.live = 0
        self.peak = 0

    def add(self, n):
        with self.lock:
            self.live += n
            self.peak = max(self.peak, self.live)

    def sub(self, n):
        with self.lock:
            self.live -= n


def _pack(nbr, w):
    return (np.asarray(nbr, np.uint64) << np.uint64(32)) | np.asarray(w, np.uint64)


def block_paths(block_dir, scheme: PartitionScheme) -> dict:
    block_dir = Path(block_dir)
    paths = {(i, j): block_dir / coo_block_name(i, j) for i, j in scheme.blocks()}
    missing = [b for b, p in paths.items() if not p.exists()]
    if missing:
        raise CompletenessError(missing)
    return paths


def _check_block_contract(chunk, i, j, scheme, path):
    if not len(chunk):
        return
    b = scheme.boundaries
    src, dst = chunk["src"], chunk["dst"]
    bad = ((src < b[i]) | (src >= b[i + 1]) | (dst < b[j]) | (dst >= b[j + 1]))
    if i == j:
        bad |= src > dst
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise ValidationError(f"{path}: triple ({int(src[k])},{int(dst[k])},"
                              f"{int(chunk['weight'][k])}) violates block ({i},{j})")


def tally_in_degrees(block_dir, scheme: PartitionScheme, chunk_triples: int = 65536):
    """Phase (i): one pass over all blocks counting destination degrees."""
    n = scheme.vertex_count
    degrees = np.zeros(n, np.int64)
    scanned = 0
    for (i, j), path in block_paths(block_dir, scheme).items():
        for chunk in iter_coo_block(path, chunk_triples):
            _check_block_contract(chunk, i, j, scheme, path)
            degrees += np.bincount(chunk["dst"], minlength=n)
            scanned += len(chunk)
    return degrees, scanned


def plan_groups(offsets, scheme: PartitionScheme, budget_bytes: int) -> GroupPlan:
    """Greedy contiguous grouping of destination partitions within the byte budget."""
    if budget_bytes <= 0:
        raise PlanningError("memory budget must be positive")
    b = scheme.boundaries
    mass = [EDGE_BYTES * int(offsets[b[p + 1]] - offsets[b[p]]) for p in range(scheme.partition_count)]
    for p, m in enumerate(mass):
        if m > budget_bytes:
            raise PlanningError(f"partition {p} needs {m} bytes of edges; budget is {budget_bytes}")
    groups, sizes = [], []
    start, acc = 0, 0
    for p, m in enumerate(mass):
        if acc + m > budget_bytes:
            groups.append((start, p))
            sizes.append(acc)
            start, acc = p, 0
        acc += m
    groups.append((start, scheme.partition_count))
    sizes.append(acc)
    return GroupPlan(groups, budget_bytes, sizes)


def coo_to_csc(block_dir, scheme: PartitionScheme, budget_bytes: int, workers: int = 1,
               out_dir=None, metrics: BuildMetrics | None = None,
               chunk_triples: int | None = None) -> CscGraph:
    """Three-phase conversion: degree tally, prefix sum, budgeted scatter + per-vertex sort.

    With ``out_dir`` the edge array is written group by group straight into
    ``edges.bin`` (only one group's slice is ever resident); the graph is
    then read back. Slices are sorted by (neighbor, weight), so the result
    does not depend on ``workers``.
    """
    metrics = metrics if metrics is not None else BuildMetrics()
    workers = max(1, int(workers))
    if chunk_triples is None:
        chunk_triples = max(1024, CHUNK_BUDGET // (CHUNK_BYTES_PER_TRIPLE * workers))
    n = scheme.vertex_count
    t0 = time.perf_counter()
    paths = block_paths(block_dir, scheme)
    degrees, scanned = tally_in_degrees(block_dir, scheme, chunk_triples)
    metrics.triples_scanned = scanned
    t1 = time.perf_counter()

    offsets = np.zeros(n + 1, np.uint64)
    np.cumsum(degrees, out=offsets[1:])
    edge_count = int(offsets[-1])
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        # offsets are final before the scatter mutates its own cursor copy
        np.save(out_dir / "offsets.phase2.npy", offsets)
    plan = plan_groups(offsets, scheme, budget_bytes)
    metrics.groups = len(plan.groups)
    metrics.largest_group_bytes = max(plan.group_bytes) if plan.group_bytes else 0
    t2 = time.perf_counter()

    if out_dir is not None:
        edges_path = out_dir / "edges.bin.partial"
        with open(edges_path, "wb") as fh:
            fh.write(MAGIC_EDGES + np.uint64(edge_count).tobytes())
            fh.truncate(16 + EDGE_BYTES * edge_count)
        sink = (np.memmap(edges_path, dtype=EDGE_DTYPE, mode="r+", offset=16, shape=(edge_count,))
                if edge_count else np.zeros(0, EDGE_DTYPE))
        out_nbr, out_w = sink["neighbor"], sink["weight"]
    else:
        out_nbr = np.zeros(edge_count, np.uint32)
        out_w = np.zeros(edge_count, np.uint32)

    tracker = _Tracker()
    for g_lo, g_hi in plan.groups:
        v_lo, v_hi = scheme.boundaries[g_lo], scheme.boundaries[g_hi]
        base = int(offsets[v_lo])
        size = int(offsets[v_hi]) - base
        buf = np.empty(size, np.uint64)
        tracker.add(buf.nbytes)
        cursor = (offsets[v_lo:v_hi] - np.uint64(base)).astype(np.int64)
        claim = threading.Lock()
        todo = [paths[(i, j)] for j in range(g_lo, g_hi) for i in range(j + 1)]

        def scatter(path, buf=buf, cursor=cursor, claim=claim, v_lo=v_lo):
            for chunk in iter_coo_block(path, chunk_triples):
                if not len(chunk):
                    continue
                work = CHUNK_BYTES_PER_TRIPLE * len(chunk)
                tracker.add(work)
                local = chunk["dst"].astype(np.int64) - v_lo
                order = np.argsort(local, kind="stable")
                ordered = local[order]
                rank = np.arange(len(ordered)) - np.searchsorted(ordered, ordered, side="left")
                uniq, counts = np.unique(ordered, return_counts=True)
                with claim:  # every writer gets distinct slots within a vertex's slice
                    slots = cursor[ordered] + rank
                    cursor[uniq] += counts
                buf[slots] = _pack(chunk["src"][order], chunk["weight"][order])
                tracker.sub(work)

        if workers > 1 and len(todo) > 1:
            with ThreadPoolExecutor(workers) as pool:
                list(pool.map(scatter, todo))
        else:
            for path in todo:
                scatter(path)
        seg = (offsets[v_lo:v_hi + 1] - np.uint64(base)).astype(np.int64)
        K.sort_segments(buf, seg)
        step = 1 << 16
        for k in range(0, size, step):
            part = buf[k:k + step]
            out_nbr[base + k: base + k + len(part)] = part >> np.uint64(32)
            out_w[base + k: base + k + len(part)] = part & _LOW32
        tracker.sub(buf.nbytes)
        del buf
    metrics.peak_edge_buffer_bytes = tracker.peak
    t3 = time.perf_counter()
    metrics.durations.update(degree_tally=t1 - t0, prefix_sum=t2 - t1, scatter_sort=t3 - t2)

    if out_dir is None:
        return CscGraph(offsets, out_nbr, out_w, symmetric=False)
    if edge_count:
        sink.flush()
    graph = CscGraph(offsets, np.array(out_nbr), np.array(out_w), symmetric=False)
    del sink, out_nbr, out_w
    (out_dir / "edges.bin.partial").unlink()
    (out_dir / "offsets.phase2.npy").unlink()
    write_csc(graph, out_dir)
    return graph


def write_metrics(path, metrics: BuildMetrics) -> None:
    write_manifest(path, metrics.to_fields())


# ---------------------------------------------------------------------------
# validation against the COO blocks


def _bisect_slices(keys, lo, hi, probe):
    """Vectorised leftmost binary search of ``probe`` in ``keys[lo:hi]`` per element."""
    lo = lo.copy()
    hi = hi.copy()
    active = lo < hi
    while active.any():
        mid = (lo + hi) // 2
        val = keys[np.where(active, mid, 0)] if len(keys) else np.zeros_like(probe)
        right = active & (val < probe)
        left = active & ~right
        lo = np.where(right, mid + 1, lo)
        hi = np.where(left, mid, hi)
        active = lo < hi
    return lo


def validate_csc(graph: CscGraph, block_dir, scheme: PartitionScheme,
                 chunk_triples: int = 65536) -> ValidationReport:
    """Binary-search every COO triple in its destination's sorted slice and compare degrees.

    Identical repeated triples must each match a distinct slot, so together
    with the degree check the CSC edge multiset equals the COO multiset.
    """
    n = graph.vertex_count
    if n != scheme.vertex_count:
        return ValidationReport(False, 0, f"graph has {n} vertices, scheme {scheme.vertex_count}")
    keys = _pack(graph.neighbors, graph.weights)
    offs = graph.offsets.astype(np.int64)
    used = np.zeros(graph.edge_count, np.int64)
    tally = np.zeros(n, np.int64)
    checked = 0
    for (i, j), path in block_paths(block_dir, scheme).items():
        for chunk in iter_coo_block(path, chunk_triples):
            if not len(chunk):
                continue
            src = chunk["src"].astype(np.int64)
            dst = chunk["dst"].astype(np.int64)
            if dst.max() >= n or src.max() >= n:
                k = int(np.flatnonzero((dst >= n) | (src >= n))[0])
                t = (int(src[k]), int(dst[k]), int(chunk["weight"][k]))
                return ValidationReport(False, checked, f"triple {t} outside vertex range",
                                        first_triple=t)
            if graph.edge_count == 0:
                t = (int(src[0]), int(dst[0]), int(chunk["weight"][0]))
                return ValidationReport(False, checked, f"COO triple {t} missing: graph has no edges",
                                        first_vertex=t[1], first_triple=t)
            probe = _pack(chunk["src"], chunk["weight"])
            tally += np.bincount(dst, minlength=n)
            pos = _bisect_slices(keys, offs[dst], offs[dst + 1], probe)
            # rank among identical triples in this chunk, offset by earlier matches
            order = np.lexsort((probe, dst))
            d_o, p_o = dst[order], probe[order]
            new = np.ones(len(order), bool)
            new[1:] = (d_o[1:] != d_o[:-1]) | (p_o[1:] != p_o[:-1])
            run_start = np.maximum.accumulate(np.where(new, np.arange(len(order)), 0))
            rank = np.empty(len(order), np.int64)
            rank[order] = np.arange(len(order)) - run_start
            safe = np.minimum(pos, max(graph.edge_count - 1, 0))
            slot = pos + used[safe] + rank
            ok = slot < offs[dst + 1]
            ok[ok] = keys[slot[ok]] == probe[ok]
            if not ok.all():
                k = int(np.flatnonzero(~ok)[0])
                t = (int(src[k]), int(dst[k]), int(chunk["weight"][k]))
                return ValidationReport(False, checked + k,
                                        f"COO triple {t} not found in CSC slice of vertex {t[1]}",
                                        first_vertex=t[1], first_triple=t)
            np.add.at(used, safe, 1)
            checked += len(chunk)
    deg = graph.in_degrees()
    diff = np.flatnonzero(deg != tally)
    if len(diff):
        v = int(diff[0])
        return ValidationReport(False, checked,
                                f"vertex {v}: CSC degree {int(deg[v])}, COO degree {int(tally[v])}",
                                first_vertex=v)
    return ValidationReport(True, checked, f"{checked} triples verified")


# ---------------------------------------------------------------------------
# deduplication, transposition, symmetrisation


def dedup_max_weight(graph: CscGraph) -> tuple[CscGraph, int]:
    """Collapse same-endpoint edges of each vertex to one edge carrying the largest weight."""
    bad = graph.unsorted_vertex()
    if bad is not None:
        raise PreconditionError(f"neighbours of vertex {bad} are not sorted")
    e = graph.edge_count
    if e == 0:
        return graph, 0
    dst = graph.destinations()
    nbr = graph.neighbors
    start = np.ones(e, bool)
    start[1:] = (dst[1:] != dst[:-1]) | (nbr[1:] != nbr[:-1])
    runs = np.flatnonzero(start)
    removed = e - len(runs)
    if removed == 0:
        return graph, 0
    weights = np.maximum.reduceat(graph.weights, runs)
    counts = np.bincount(dst[runs], minlength=graph.vertex_count)
    offsets = np.zeros(graph.vertex_count + 1, np.uint64)
    np.cumsum(counts, out=offsets[1:])
    return CscGraph(offsets, nbr[runs], weights, graph.symmetric), removed


def _whole(graph):
    return PartitionScheme((0, graph.vertex_count))


def _transpose_part(graph: CscGraph, v_lo: int, v_hi: int):
    a, b = int(graph.offsets[v_lo]), int(graph.offsets[v_hi])
    owner = graph.neighbors[a:b]
    deg = graph.in_degrees()[v_lo:v_hi]
    nbr = np.repeat(np.arange(v_lo, v_hi, dtype=np.uint32), deg)
    order = np.argsort(owner, kind="stable")
    return owner[order], nbr[order], graph.weights[a:b][order]


def transpose(graph: CscGraph, scheme: PartitionScheme | None = None, workers: int = 1) -> CscGraph:
    """Reverse every edge. Partitions are transposed independently, then merged per vertex."""
    scheme = scheme or _whole(graph)
    if scheme.vertex_count != graph.vertex_count:
        raise DomainError("scheme does not match the graph's vertex count")
    ranges = [(scheme.boundaries[p], scheme.boundaries[p + 1]) for p in range(scheme.partition_count)]
    if workers > 1 and len(ranges) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda r: _transpose_part(graph, *r), ranges))
    else:
        parts = [_transpose_part(graph, *r) for r in ranges]
    owner = np.concatenate([p[0] for p in parts]) if parts else np.zeros(0, np.uint32)
    nbr = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0, np.uint32)
    w = np.concatenate([p[2] for p in parts]) if parts else np.zeros(0, np.uint32)
    # partitions are in ascending id order, so a stable merge keeps slices sorted
    order = np.argsort(owner, kind="stable")
    counts = np.bincount(owner, minlength=graph.vertex_count)
    offsets = np.zeros(graph.vertex_count + 1, np.uint64)
    np.cumsum(counts, out=offsets[1:])
    return CscGraph(offsets, nbr[order], w[order], graph.symmetric)


def symmetrize(graph: CscGraph, scheme: PartitionScheme | None = None, workers: int = 1) -> CscGraph:
    """Union of the graph and its transpose, merged per vertex; coinciding edges keep the max weight."""
    bad = graph.unsorted_vertex(strict=True)
    if bad is not None:
        raise PreconditionError(f"vertex {bad} has duplicate or unsorted neighbours; "
                                f"run dedup_max_weight first")
    t = transpose(graph, scheme, workers)
    bound = graph.edge_count + t.edge_count
    out_off = np.zeros(graph.vertex_count + 1, np.int64)
    out_nbr = np.zeros(bound, np.uint32)
    out_w = np.zeros(bound, np.uint32)
    e = K.merge_max(graph.offsets.astype(np.int64), graph.neighbors, graph.weights,
                    t.offsets.astype(np.int64), t.neighbors, t.weights, out_off, out_nbr, out_w)
    return CscGraph(out_off.astype(np.uint64), out_nbr[:e].copy(), out_w[:e].copy(), symmetric=True)


def symmetrize_sorted(graph: CscGraph) -> CscGraph:
    """Second route to the symmetric graph: append reversed edges, sort once, dedup by max."""
    dst = graph.destinations()
    src = np.concatenate([graph.neighbors, dst])
    dd = np.concatenate([dst, graph.neighbors])
    w = np.concatenate([graph.weights, graph.weights])
    both = CscGraph.from_arcs(graph.vertex_count, src, dd, w)
    merged, _ = dedup_max_weight(both)
    return merged.with_kind(True)


def symmetrize_edge_count(graph: CscGraph) -> dict:
    """Self-loops and mutual (reciprocated) directed edges of a deduplicated graph."""
    dst = graph.destinations().astype(np.uint64)
    src = graph.neighbors.astype(np.uint64)
    n = np.uint64(max(graph.vertex_count, 1))
    loops = int(np.count_nonzero(src == dst))
    fwd = src * n + dst
    rev = dst * n + src
    off_diag = src != dst
    mutual = int(np.count_nonzero(np.isin(fwd[off_diag], rev[off_diag])))
    return {"edges": graph.edge_count, "self_loops": loops, "mutual_edges": mutual,
            "expected_symmetric_edges": 2 * graph.edge_count - loops - mutual}


def validate_symmetric(a: CscGraph, b: CscGraph) -> ValidationReport:
    """Pass iff every vertex has the same degree and identical edge slice in both graphs."""
    if a.vertex_count != b.vertex_count:
        return ValidationReport(False, 0, f"vertex counts differ: {a.vertex_count} vs {b.vertex_count}")
    da, db = a.in_degrees(), b.in_degrees()
    bad = da != db
    if a.edge_count == b.edge_count and not bad.any():
        diff = (a.neighbors != b.neighbors) | (a.weights != b.weights)
        if not diff.any():
            return ValidationReport(True, a.vertex_count, f"{a.vertex_count} vertices identical")
        e = int(np.flatnonzero(diff)[0])
        v = int(np.searchsorted(a.offsets, e, side="right") - 1)
    else:
        v = int(np.flatnonzero(bad)[0])
    return ValidationReport(False, v, f"vertex {v} differs (degree {int(da[v])} vs {int(db[v])})",
                            first_vertex=v)


__all__ = [
    "BuildMetrics", "GroupPlan", "ValidationReport", "block_paths", "coo_to_csc", "dedup_max_weight",
    "plan_groups", "symmetrize", "symmetrize_edge_count", "symmetrize_sorted", "tally_in_degrees",
    "transpose", "validate_csc", "validate_symmetric", "write_metrics",
]
