"""Edge filtering by absolute weight or vertex-relative weight, and zero-degree removal.

Absolute filtering keeps ``w >= t`` and preserves symmetry. Vertex-relative
filtering keeps an in-edge of ``v`` when ``w >= alpha * M_v`` where ``M_v`` is
the largest weight among ``v``'s in-edges; the result is directed. Relative
borders live on the grid ``alpha = k / VRW_BINS`` and the keep test is done in
integers (``w * VRW_BINS >= k * M_v``), so histogram counts and the filter agree
exactly.
"""
from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .builder import ValidationReport
from .errors import DomainError, PreconditionError
from .graph import CscGraph, PartitionScheme, RenumberMap

ABSOLUTE = "absolute_weight"
RELATIVE = "vertex_relative"
VRW_BINS = 10_000
ACCURACY = 0.01


@dataclass(frozen=True)
class FilterSpec:
    kind: str
    target_fraction: float
    label: str = ""
    threshold: int | None = None   # absolute border
    alpha_bin: int | None = None   # relative border, alpha = alpha_bin / VRW_BINS
    achieved_fraction: float | None = None
    warning: bool = False

    def __post_init__(self):
        if self.kind not in (ABSOLUTE, RELATIVE):
            raise DomainError(f"unknown filter kind {self.kind!r}")
        if not 0 < self.target_fraction <= 1:
            raise DomainError("target fraction must lie in (0, 1]")
        if self.alpha_bin is not None and not 1 <= self.alpha_bin <= VRW_BINS:
            raise DomainError("alpha must lie in (0, 1]")

    @property
    def resolved(self) -> bool:
        return (self.threshold is not None) if self.kind == ABSOLUTE else (self.alpha_bin is not None)

    @property
    def alpha(self) -> float | None:
        return None if self.alpha_bin is None else self.alpha_bin / VRW_BINS

    @classmethod
    def with_alpha(cls, alpha: float, **kw) -> "FilterSpec":
        """Relative spec from an explicit alpha, snapped up to the histogram grid."""
        return cls(RELATIVE, alpha_bin=int(np.ceil(alpha * VRW_BINS - 1e-9)), **kw)

    def manifest_fields(self) -> dict:
        border = self.threshold if self.kind == ABSOLUTE else f"{self.alpha:.4f}"
        return {
            "filter_kind": self.kind,
            "filter_label": self.label,
            "filter_target": f"{self.target_fraction:.6f}",
            "filter_threshold": border,
            "filter_achieved": "" if self.achieved_fraction is None else f"{self.achieved_fraction:.6f}",
            "filter_warning": int(self.warning),
        }


@dataclass(frozen=True)
class ThresholdChoice:
    border: int          # weight threshold, or alpha bin for relative borders
    achieved: float
    warning: bool


# ---------------------------------------------------------------------------
# distributions


def weight_histogram(graph: CscGraph) -> tuple[np.ndarray, np.ndarray]:
    """Distinct weights (ascending) and their edge counts."""
    return np.unique(graph.weights, return_counts=True)


def vertex_max_weight(graph: CscGraph) -> np.ndarray:
    """``M_v`` per vertex; 0 for vertices without in-edges."""
    out = np.zeros(graph.vertex_count, np.uint32)
    deg = graph.in_degrees()
    has = np.flatnonzero(deg > 0)
    if len(has):
        out[has] = np.maximum.reduceat(graph.weights, graph.offsets[has].astype(np.int64))
    return out


def vrw_bin_index(weights, maxima) -> np.ndarray:
    """``floor(w * VRW_BINS / M)``: bins ``[k/B, (k+1)/B)`` with ``k = B`` holding ratio exactly 1."""
    w = np.asarray(weights, np.uint64)
    m = np.asarray(maxima, np.uint64)
    return (w * np.uint64(VRW_BINS) // m).astype(np.int64)


def vrw_histogram(graph: CscGraph, max_w: np.ndarray | None = None) -> np.ndarray:
    """Counts of ``w / M_v`` over every in-edge slot, ``VRW_BINS + 1`` bins."""
    if max_w is None:
        max_w = vertex_max_weight(graph)
    if graph.edge_count == 0:
        return np.zeros(VRW_BINS + 1, np.int64)
    k = vrw_bin_index(graph.weights, np.repeat(max_w, graph.in_degrees()))
    return np.bincount(k, minlength=VRW_BINS + 1).astype(np.int64)


def _best(kept, total, target, candidates):
    """Candidate minimising |kept/total - target|; ties go to the later (larger) border."""
    frac = kept / total
    err = np.abs(frac - target)
    k = len(err) - 1 - int(np.argmin(err[::-1]))
    achieved = float(frac[k])
    return ThresholdChoice(int(candidates[k]), achieved, abs(achieved - target) > ACCURACY)


def resolve_absolute_threshold(histogram, target_fraction: float) -> ThresholdChoice:
    values, counts = (np.asarray(a) for a in histogram)
    if len(values) == 0 or counts.sum() == 0:
        raise DomainError("weight histogram is empty")
    if not 0 < target_fraction <= 1:
        raise DomainError("target fraction must lie in (0, 1]")
    kept = np.cumsum(counts[::-1])[::-1]  # edges with w >= values[k]
    return _best(kept, int(counts.sum()), target_fraction, values)


def resolve_relative_threshold(vrw_hist, target_fraction: float) -> ThresholdChoice:
    hist = np.asarray(vrw_hist, np.int64)
    if len(hist) != VRW_BINS + 1 or hist.sum() == 0:
        raise DomainError("vertex-relative histogram is empty or mis-sized")
    if not 0 < target_fraction <= 1:
        raise DomainError("target fraction must lie in (0, 1]")
    kept = np.cumsum(hist[::-1])[::-1][1:]  # candidates alpha = k / B for k = 1..B
    return _best(kept, int(hist.sum()), target_fraction, np.arange(1, VRW_BINS + 1))


def resolve_spec(spec: FilterSpec, graph: CscGraph, weight_hist=None, vrw_hist=None) -> FilterSpec:
    """Fill in the border of ``spec`` from the graph's distributions."""
    if spec.kind == ABSOLUTE:
        choice = resolve_absolute_threshold(weight_hist if weight_hist is not None
                                            else weight_histogram(graph), spec.target_fraction)
        return dataclasses.replace(spec, threshold=choice.border, achieved_fraction=choice.achieved,
                                   warning=choice.warning)
    choice = resolve_relative_threshold(vrw_hist if vrw_hist is not None else vrw_histogram(graph),
                                        spec.target_fraction)
    return dataclasses.replace(spec, alpha_bin=choice.border, achieved_fraction=choice.achieved,
                               warning=choice.warning)


# ---------------------------------------------------------------------------
# filtering


def keep_mask(spec: FilterSpec, weights, maxima) -> np.ndarray:
    """Keep-predicate per edge; ``maxima`` is ``M`` of each edge's destination."""
    if not spec.resolved:
        raise PreconditionError(f"filter spec {spec.label or spec.kind} has no resolved border")
    w = np.asarray(weights, np.uint64)
    if spec.kind == ABSOLUTE:
        return w >= np.uint64(spec.threshold)
    return w * np.uint64(VRW_BINS) >= np.uint64(spec.alpha_bin) * np.asarray(maxima, np.uint64)


def _filter_partition(graph, v_lo, v_hi, specs):
    a, b = int(graph.offsets[v_lo]), int(graph.offsets[v_hi])
    w = graph.weights[a:b]
    nbr = graph.neighbors[a:b]
    deg = graph.in_degrees()[v_lo:v_hi]
    local = np.repeat(np.arange(v_hi - v_lo), deg)
    # M_v from the vertex's own slice: available within the same pass
    m = np.zeros(v_hi - v_lo, np.uint32)
    has = np.flatnonzero(deg > 0)
    if len(has):
        starts = (graph.offsets[v_lo:v_hi][has] - np.uint64(a)).astype(np.int64)
        m[has] = np.maximum.reduceat(w, starts)
    maxima = m[local]
    out = []
    for spec in specs:
        keep = keep_mask(spec, w, maxima)
        out.append((np.bincount(local[keep], minlength=v_hi - v_lo), nbr[keep], w[keep]))
    return out


def multi_filter(graph: CscGraph, specs: list, scheme: PartitionScheme | None = None,
                 workers: int = 1) -> list:
    """Apply every spec in one pass over the edges; returns one graph per spec.

    Each partition is read once and split into one sub-partition per spec;
    the sub-partitions of each spec are then merged in partition order.
    """
    if not graph.symmetric:
        raise PreconditionError("multi_filter expects a symmetric graph")
    if graph.unsorted_vertex(strict=True) is not None:
        raise PreconditionError("multi_filter expects a deduplicated graph")
    for s in specs:
        if not s.resolved:
            raise PreconditionError(f"filter spec {s.label or s.kind} has no resolved border")
    scheme = scheme or PartitionScheme((0, graph.vertex_count))
    ranges = [(scheme.boundaries[p], scheme.boundaries[p + 1]) for p in range(scheme.partition_count)]
    if workers > 1 and len(ranges) > 1:
        with ThreadPoolExecutor(workers) as pool:
            subs = list(pool.map(lambda r: _filter_partition(graph, r[0], r[1], specs), ranges))
    else:
        subs = [_filter_partition(graph, lo, hi, specs) for lo, hi in ranges]

    outputs = []
    for k, spec in enumerate(specs):
        counts = np.concatenate([s[k][0] for s in subs]) if subs else np.zeros(0, np.int64)
        offsets = np.zeros(graph.vertex_count + 1, np.uint64)
        np.cumsum(counts, out=offsets[1:])
        nbr = np.concatenate([s[k][1] for s in subs]) if subs else np.zeros(0, np.uint32)
        w = np.concatenate([s[k][2] for s in subs]) if subs else np.zeros(0, np.uint32)
        outputs.append(CscGraph(offsets, nbr, w, symmetric=spec.kind == ABSOLUTE))
    return outputs


def achieved_fraction(parent: CscGraph, child: CscGraph) -> float:
    return child.edge_count / parent.edge_count if parent.edge_count else 0.0


# ---------------------------------------------------------------------------
# zero-degree removal


def remove_zero_degrees(graph: CscGraph) -> tuple[CscGraph, RenumberMap]:
    """Drop isolated vertices, renumbering the rest in their original order."""
    if not graph.symmetric:
        raise DomainError("zero-degree removal applies to symmetric graphs only")
    deg = graph.in_degrees()
    keep = deg > 0
    rmap = RenumberMap.from_mask(keep)
    if rmap.is_identity():
        return graph, rmap
    offsets = np.append(graph.offsets[:-1][keep], graph.offsets[-1])
    return CscGraph(offsets, rmap.forward[graph.neighbors], graph.weights, True), rmap


# ---------------------------------------------------------------------------
# validation


def validate_filtered(parent: CscGraph, child: CscGraph, spec: FilterSpec,
                      renumber: RenumberMap | None = None) -> ValidationReport:
    """Child edges all come from the parent and pass the predicate; no passing edge is lost."""
    if not spec.resolved:
        raise PreconditionError("spec must be resolved before validation")
    n = parent.vertex_count
    if renumber is not None:
        if renumber.old_count != n or renumber.new_count != child.vertex_count:
            return ValidationReport(False, 0, "renumbering does not match parent/child sizes")
        c_dst = renumber.reverse[child.destinations()].astype(np.uint64)
        c_nbr = renumber.reverse[child.neighbors].astype(np.uint64)
    else:
        if child.vertex_count != n:
            return ValidationReport(False, 0, f"child has {child.vertex_count} vertices, parent {n}")
        c_dst = child.destinations().astype(np.uint64)
        c_nbr = child.neighbors.astype(np.uint64)
    c_w = child.weights
    nn = np.uint64(max(n, 1))
    p_dst = parent.destinations().astype(np.uint64)
    p_key = p_dst * nn + parent.neighbors.astype(np.uint64)
    c_key = c_dst * nn + c_nbr
    maxima = vertex_max_weight(parent)

    pos = np.searchsorted(p_key, c_key)
    safe = np.minimum(pos, max(len(p_key) - 1, 0))
    found = (pos < len(p_key)) & (p_key[safe] == c_key) if len(p_key) else np.zeros(len(c_key), bool)
    if len(c_key):
        found &= parent.weights[safe] == c_w
        found &= keep_mask(spec, c_w, maxima[c_dst.astype(np.int64)])
    if not found.all():
        k = int(np.flatnonzero(~found)[0])
        e = (int(c_nbr[k]), int(c_dst[k]), int(c_w[k]))
        return ValidationReport(False, k, f"child edge {e[0]}->{e[1]} (w={e[2]}) is not a kept "
                                          f"parent edge", first_vertex=e[1], first_triple=e)
    if len(np.unique(c_key)) != len(c_key):
        return ValidationReport(False, len(c_key), "child repeats an edge")
    expect = keep_mask(spec, parent.weights, maxima[p_dst.astype(np.int64)])
    if int(expect.sum()) != len(c_key):
        missing = expect & ~np.isin(p_key, c_key)
        k = int(np.flatnonzero(missing)[0])
        e = (int(parent.neighbors[k]), int(p_dst[k]), int(parent.weights[k]))
        return ValidationReport(False, len(c_key),
                                f"parent edge {e[0]}->{e[1]} (w={e[2]}) passes the filter but is "
                                f"missing from the child", first_vertex=e[1], first_triple=e)
    if renumber is not None and child.vertex_count and (child.in_degrees() == 0).any():
        v = int(np.flatnonzero(child.in_degrees() == 0)[0])
        return ValidationReport(False, len(c_key), f"compacted child keeps isolated vertex {v}",
                                first_vertex=v)
    return ValidationReport(True, len(c_key), f"{len(c_key)} edges verified")
