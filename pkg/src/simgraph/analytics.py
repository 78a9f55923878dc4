"""Structural statistics of CSC graphs: distribution views, Fibonacci binning,
degree decomposition, weakly-connected components, push/pull locality and the
summary statistics row.

Every view is plain data; ``write_views`` emits one TSV per view with a
one-line header. Nothing here renders plots.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels as K
from .errors import DomainError
from .filtering import VRW_BINS, vertex_max_weight, vrw_histogram
from .graph import CscGraph, atomic_write

SIDES = ("in", "out", "total")
# classes [10^k, 10^(k+1)) for k = 0..6, then [10^7, inf)
CLASS_EDGES = np.array([10 ** k for k in range(1, 8)], dtype=np.int64)
CLASS_LABELS = [f"[1e{k},1e{k + 1})" for k in range(7)] + ["[1e7,inf)"]


@dataclass(frozen=True)
class FibonacciBins:
    lo: np.ndarray
    hi: np.ndarray
    mean: np.ndarray  # summed frequency / bin width

    @property
    def midpoint(self) -> np.ndarray:
        return (self.lo + self.hi) / 2.0

    def __len__(self):
        return len(self.lo)


@dataclass(frozen=True)
class DistributionViews:
    values: np.ndarray          # distinct x, ascending
    frequency: np.ndarray
    fibonacci: FibonacciBins
    ccdf: np.ndarray            # population with value >= x
    cumulative_percent: np.ndarray
    cumulative_edges_percent: np.ndarray | None = None

    @property
    def population(self) -> int:
        return int(self.frequency.sum())


def fibonacci_bins(values, frequency) -> FibonacciBins:
    """Average frequencies over consecutive bins of Fibonacci width starting at 1.

    The last bin is cut at the largest value and averaged over its cut width,
    so the bins tile ``[1, max]`` exactly.
    """
    values = np.asarray(values, dtype=np.int64)
    frequency = np.asarray(frequency, dtype=np.int64)
    if len(values) == 0:
        raise DomainError("frequency table is empty")
    if values.min() < 1:
        raise DomainError("Fibonacci bins are defined over positive values")
    order = np.argsort(values)
    values, frequency = values[order], frequency[order]
    top = int(values[-1])
    lo, hi = [], []
    a, b, start = 1, 1, 1
    while start <= top:
        end = min(start + a - 1, top)
        lo.append(start)
        hi.append(end)
        start = end + 1
        a, b = b, a + b
    lo = np.array(lo, np.int64)
    hi = np.array(hi, np.int64)
    csum = np.concatenate([[0], np.cumsum(frequency)])
    total = csum[np.searchsorted(values, hi, side="right")] - csum[np.searchsorted(values, lo, side="left")]
    return FibonacciBins(lo, hi, total / (hi - lo + 1))


def distribution_views(samples, edge_weighted: bool = False) -> DistributionViews:
    """Five views of a multiset of non-negative integers.

    With ``edge_weighted`` the samples are degrees and the cumulative-edges
    view is added: the share of the degree sum held by values ``<= x``.
    """
    samples = np.asarray(samples, dtype=np.int64)
    values, freq = np.unique(samples, return_counts=True)
    freq = freq.astype(np.int64)
    n = int(freq.sum())
    positive = values > 0
    fib = (fibonacci_bins(values[positive], freq[positive]) if positive.any()
           else FibonacciBins(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)))
    ccdf = n - np.concatenate([[0], np.cumsum(freq)[:-1]]) if n else np.zeros(0, np.int64)
    cum = 100.0 * np.cumsum(freq) / n if n else np.zeros(0)
    edges = None
    if edge_weighted:
        mass = np.cumsum(values * freq)
        edges = 100.0 * mass / mass[-1] if n and mass[-1] else np.zeros(len(values))
    return DistributionViews(values, freq, fib, ccdf, cum, edges)


def degrees(graph: CscGraph, side: str = "in") -> np.ndarray:
    if side == "in":
        return graph.in_degrees()
    if side == "out":
        return graph.out_degrees()
    if side == "total":
        return graph.in_degrees() + graph.out_degrees()
    raise DomainError(f"side must be one of {SIDES}")


def degree_views(graph: CscGraph, side: str = "in") -> DistributionViews:
    return distribution_views(degrees(graph, side), edge_weighted=True)


def weight_views(graph: CscGraph) -> DistributionViews:
    return distribution_views(graph.weights)


# ---------------------------------------------------------------------------
# vertex-relative weights


@dataclass(frozen=True)
class VrwViews:
    counts: np.ndarray  # VRW_BINS + 1 bins; the last holds ratio exactly 1

    @property
    def lo(self) -> np.ndarray:
        return np.arange(VRW_BINS + 1) / VRW_BINS

    @property
    def ccdf(self) -> np.ndarray:
        return np.cumsum(self.counts[::-1])[::-1]

    @property
    def cumulative_percent(self) -> np.ndarray:
        total = self.counts.sum()
        return 100.0 * np.cumsum(self.counts) / total if total else np.zeros(len(self.counts))


def vrw_views(graph: CscGraph) -> VrwViews:
    """Binned ``w / M_v`` distribution; the binning is the one the filter resolves against."""
    if not graph.symmetric:
        raise DomainError("vertex-relative weights are defined on symmetric graphs")
    return VrwViews(vrw_histogram(graph, vertex_max_weight(graph)))


# ---------------------------------------------------------------------------
# degree decomposition


@dataclass(frozen=True)
class DecompositionMatrix:
    counts: np.ndarray  # [dst_class, src_class] edge counts

    @property
    def percent(self) -> np.ndarray:
        rows = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(rows > 0, 100.0 * self.counts / np.maximum(rows, 1), 0.0)

    def row_sums(self) -> np.ndarray:
        return self.percent.sum(axis=1)


def degree_class(deg) -> np.ndarray:
    """Class index ``floor(log10 d)`` capped at 7; only defined for ``d >= 1``."""
    return np.searchsorted(CLASS_EDGES, np.asarray(deg, np.int64), side="right")


def _decompose_range(graph, cls, v_lo, v_hi):
    a, b = int(graph.offsets[v_lo]), int(graph.offsets[v_hi])
    deg = graph.in_degrees()[v_lo:v_hi]
    dst_cls = np.repeat(cls[v_lo:v_hi], deg)
    src_cls = cls[graph.neighbors[a:b]]
    return np.bincount(dst_cls * 8 + src_cls, minlength=64)


def degree_decomposition(graph: CscGraph, workers: int = 1) -> DecompositionMatrix:
    if not graph.symmetric:
        raise DomainError("degree decomposition needs a symmetric graph")
    cls = degree_class(graph.in_degrees())
    n = graph.vertex_count
    parts = max(1, workers)
    cuts = [n * k // parts for k in range(parts + 1)]
    ranges = list(zip(cuts[:-1], cuts[1:]))
    if parts > 1:
        with ThreadPoolExecutor(parts) as pool:
            partial = list(pool.map(lambda r: _decompose_range(graph, cls, *r), ranges))
    else:
        partial = [_decompose_range(graph, cls, *r) for r in ranges]
    return DecompositionMatrix(np.sum(partial, axis=0).reshape(8, 8).astype(np.int64))


# ---------------------------------------------------------------------------
# weakly-connected components


@dataclass(frozen=True)
class WccResult:
    component: np.ndarray  # component id per vertex, ids ordered by smallest member
    sizes: np.ndarray

    @property
    def count(self) -> int:
        return len(self.sizes)

    @property
    def largest(self) -> int:
        return int(self.sizes.max()) if len(self.sizes) else 0

    def size_views(self) -> DistributionViews:
        return distribution_views(self.sizes)


def wcc(graph: CscGraph) -> WccResult:
    n = graph.vertex_count
    if n == 0:
        return WccResult(np.zeros(0, np.int64), np.zeros(0, np.int64))
    roots = K.dsu_components(n, graph.neighbors, graph.destinations())
    # relabel so component ids follow the smallest vertex of each component
    first = np.full(n, n, np.int64)
    np.minimum.at(first, roots, np.arange(n))
    order = np.argsort(first[roots], kind="stable")
    comp = np.empty(n, np.int64)
    r_sorted = roots[order]
    new = np.ones(n, bool)
    new[1:] = r_sorted[1:] != r_sorted[:-1]
    comp[order] = np.cumsum(new) - 1
    return WccResult(comp, np.bincount(comp).astype(np.int64))


# ---------------------------------------------------------------------------
# push / pull locality


@dataclass(frozen=True)
class LocalityCurves:
    k: np.ndarray
    push: np.ndarray  # % of edges covered by the k largest in-degrees
    pull: np.ndarray  # same for out-degrees


def locality_samples(n: int) -> np.ndarray:
    if n == 0:
        return np.zeros(0, np.int64)
    k = [1 << i for i in range(n.bit_length()) if (1 << i) < n]
    return np.array(k + [n], np.int64)


def _coverage(deg, ks, total):
    if total == 0:
        return np.zeros(len(ks))
    cum = np.cumsum(np.sort(deg)[::-1])
    return 100.0 * cum[ks - 1] / total


def push_pull_locality(graph: CscGraph) -> LocalityCurves:
    ks = locality_samples(graph.vertex_count)
    e = graph.edge_count
    return LocalityCurves(ks, _coverage(graph.in_degrees(), ks, e),
                          _coverage(graph.out_degrees(), ks, e))


# ---------------------------------------------------------------------------
# summary row


def table_stats(graph: CscGraph, components: WccResult | None = None) -> dict:
    n, e = graph.vertex_count, graph.edge_count
    din, dout = graph.in_degrees(), graph.out_degrees()
    comp = components if components is not None else wcc(graph)
    return {
        "vertices": n,
        "edges": e,
        "direction": graph.direction_kind,
        "max_in_degree": int(din.max()) if n else 0,
        "max_out_degree": int(dout.max()) if n else 0,
        "min_weight": int(graph.weights.min()) if e else 0,
        "max_weight": int(graph.weights.max()) if e else 0,
        "zero_in_degree": int(np.count_nonzero(din == 0)),
        "zero_out_degree": int(np.count_nonzero(dout == 0)),
        "average_degree": e / n if n else 0.0,
        "wcc_count": comp.count,
        "largest_wcc_percent": 100.0 * comp.largest / n if n else 0.0,
    }


# ---------------------------------------------------------------------------
# emission


def _write_tsv(path, header, columns):
    with atomic_write(path) as fh:
        fh.write(("\t".join(header) + "\n").encode())
        for row in zip(*columns):
            fh.write(("\t".join(_fmt(x) for x in row) + "\n").encode())


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.6g}"
    return str(x)


def write_views(views: DistributionViews, out_dir, prefix: str) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []

    def emit(name, header, cols):
        p = out / f"{prefix}.{name}.tsv"
        _write_tsv(p, header, cols)
        paths.append(p)

    emit("frequency", ["x", "frequency"], [views.values, views.frequency])
    fb = views.fibonacci
    emit("fibonacci", ["bin_lo", "bin_hi", "x_mid", "mean_frequency"], [fb.lo, fb.hi, fb.midpoint, fb.mean])
    emit("ccdf", ["x", "count_ge_x"], [views.values, views.ccdf])
    emit("cumulative", ["x", "percent_le_x"], [views.values, views.cumulative_percent])
    if views.cumulative_edges_percent is not None:
        emit("cumulative_edges", ["x", "edges_percent_le_x"], [views.values, views.cumulative_edges_percent])
    return paths


def write_decomposition(matrix: DecompositionMatrix, path) -> None:
    pct = matrix.percent
    _write_tsv(path, ["dst_class"] + CLASS_LABELS,
               [CLASS_LABELS] + [pct[:, c] for c in range(8)])


def write_locality(curves: LocalityCurves, path) -> None:
    _write_tsv(path, ["k", "push_percent", "pull_percent"], [curves.k, curves.push, curves.pull])


def write_vrw(views: VrwViews, path) -> None:
    _write_tsv(path, ["ratio_lo", "count", "count_ge", "cumulative_percent"],
               [views.lo, views.counts, views.ccdf, views.cumulative_percent])


def write_stats(stats: dict, path) -> None:
    with atomic_write(path) as fh:
        fh.write("".join(f"{k}={_fmt(v)}\n" for k, v in stats.items()).encode())
