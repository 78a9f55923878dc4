import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import edge_dict, graph_from_dict, symmetrize_oracle
from simgraph.builder import symmetrize
from simgraph.errors import DomainError, PreconditionError
from simgraph.filtering import (ABSOLUTE, RELATIVE, VRW_BINS, FilterSpec, multi_filter,
                                remove_zero_degrees, resolve_absolute_threshold,
                                resolve_relative_threshold, resolve_spec, validate_filtered,
                                vertex_max_weight, vrw_histogram, weight_histogram)
from simgraph.graph import CscGraph, PartitionScheme

sym_edges = st.dictionaries(st.tuples(st.integers(0, 24), st.integers(0, 24)),
                            st.integers(1, 40), max_size=120)


def sym_graph(n, edges):
    return graph_from_dict(n, symmetrize_oracle({(s % n, d % n): w for (s, d), w in edges.items()}),
                           symmetric=True)


def test_uniform_weights_target_twenty_percent():
    values = np.arange(1, 1001)
    choice = resolve_absolute_threshold((values, np.ones(1000, int)), 0.2)
    assert choice.border == 801
    assert choice.achieved == pytest.approx(0.2)
    assert not choice.warning


def test_target_one_keeps_everything():
    values, counts = np.array([3, 9, 12]), np.array([5, 1, 2])
    assert resolve_absolute_threshold((values, counts), 1.0).border == 3
    hist = np.zeros(VRW_BINS + 1, int)
    hist[VRW_BINS] = 7
    assert resolve_relative_threshold(hist, 1.0).border == VRW_BINS


def test_single_weight_histogram_warns():
    choice = resolve_absolute_threshold((np.array([5]), np.array([100])), 0.05)
    assert choice.border == 5 and choice.achieved == 1.0 and choice.warning


def test_empty_histogram_rejected():
    with pytest.raises(DomainError):
        resolve_absolute_threshold((np.array([]), np.array([])), 0.2)


def test_relative_alpha_at_analytic_quantile():
    # every vertex sees ratios k/100 for k = 1..100, so the top 5% are ratios >= 0.96
    n = 50
    arcs = {(u, v): 100 * (1 + (u + v) % 100) for v in range(n) for u in range(v, v + 100)}
    g = graph_from_dict(n + 150, arcs)
    hist = vrw_histogram(g)
    choice = resolve_relative_threshold(hist, 0.05)
    assert abs(choice.border - 9600) <= 1
    assert choice.achieved == pytest.approx(0.05)


@given(st.dictionaries(st.integers(0, VRW_BINS), st.integers(1, 30), min_size=1, max_size=60),
       st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_alpha_monotone_in_target(sparse, t1, t2):
    hist = np.zeros(VRW_BINS + 1, int)
    hist[list(sparse)] = list(sparse.values())
    lo, hi = sorted((t1, t2))
    assert resolve_relative_threshold(hist, hi).border <= resolve_relative_threshold(hist, lo).border


@given(st.lists(st.integers(1, 50), min_size=1, max_size=40), st.floats(0.001, 1.0),
       st.floats(0.001, 1.0))
def test_absolute_threshold_monotone_and_optimal(counts, t1, t2):
    values = np.arange(1, len(counts) + 1) * 7
    hist = (values, np.array(counts))
    lo, hi = sorted((t1, t2))
    assert resolve_absolute_threshold(hist, hi).border <= resolve_absolute_threshold(hist, lo).border
    choice = resolve_absolute_threshold(hist, lo)
    total = sum(counts)
    errors = [abs(sum(c for v, c in zip(values, counts) if v >= t) / total - lo) for t in values]
    assert abs(choice.achieved - lo) == pytest.approx(min(errors))


def test_relative_rule_keeps_only_fifty():
    g = graph_from_dict(3, {(1, 0): 10, (2, 0): 50, (0, 1): 10, (0, 2): 50}, symmetric=True)
    spec = FilterSpec.with_alpha(0.5, target_fraction=0.5)
    (out,) = multi_filter(g, [spec])
    assert edge_dict(out) == {(2, 0): 50, (0, 1): 10, (0, 2): 50}
    assert not out.symmetric


def test_threshold_below_min_weight_is_identity():
    g = sym_graph(6, {(0, 1): 4, (2, 3): 9, (4, 4): 2})
    (out,) = multi_filter(g, [FilterSpec(ABSOLUTE, 1.0, threshold=1)])
    assert out.equals(g)


def test_unresolved_or_asymmetric_rejected():
    g = sym_graph(3, {(0, 1): 4})
    with pytest.raises(PreconditionError):
        multi_filter(g, [FilterSpec(ABSOLUTE, 0.2)])
    with pytest.raises(PreconditionError):
        multi_filter(g.with_kind(False), [FilterSpec(ABSOLUTE, 0.2, threshold=1)])


@given(st.integers(1, 25), sym_edges, st.lists(st.integers(1, 45), min_size=1, max_size=4),
       st.lists(st.integers(1, VRW_BINS), min_size=1, max_size=4), st.integers(1, 4))
def test_multi_filter_matches_direct_rule(n, edges, thresholds, bins, p):
    g = sym_graph(n, edges)
    specs = [FilterSpec(ABSOLUTE, 0.5, threshold=t) for t in thresholds]
    specs += [FilterSpec(RELATIVE, 0.5, alpha_bin=b) for b in bins]
    outs = multi_filter(g, specs, PartitionScheme.near_equal(n, min(n, p)), workers=2)
    parent = edge_dict(g)
    maxima = {}
    for (s, d), w in parent.items():
        maxima[d] = max(maxima.get(d, 0), w)
    for spec, out in zip(specs, outs):
        out.check()
        if spec.kind == ABSOLUTE:
            want = {e: w for e, w in parent.items() if w >= spec.threshold}
        else:
            want = {e: w for e, w in parent.items() if w * VRW_BINS >= spec.alpha_bin * maxima[e[1]]}
            # every non-isolated destination keeps its heaviest in-edge
            assert {d for (_, d) in want} == set(maxima)
        assert edge_dict(out) == want
        assert validate_filtered(g, out, spec).ok
    abs_outs = [edge_dict(o) for s, o in zip(specs, outs) if s.kind == ABSOLUTE]
    order = np.argsort(thresholds)
    for a, b in zip(order, order[1:]):
        assert set(abs_outs[b]) <= set(abs_outs[a])


def test_validate_filtered_catches_smuggled_edge():
    g = sym_graph(4, {(0, 1): 5, (1, 2): 20, (2, 3): 30})
    spec = FilterSpec(ABSOLUTE, 0.5, threshold=10)
    (out,) = multi_filter(g, [spec])
    assert validate_filtered(g, out, spec).ok
    smuggled = graph_from_dict(4, {**edge_dict(out), (0, 1): 5})
    rep = validate_filtered(g, smuggled, spec)
    assert not rep.ok and rep.first_triple == (0, 1, 5)
    (empty,) = multi_filter(g, [FilterSpec(ABSOLUTE, 0.5, threshold=99)])
    assert empty.edge_count == 0
    assert validate_filtered(g, empty, FilterSpec(ABSOLUTE, 0.5, threshold=99)).ok


def test_remove_zero_degrees_hand():
    g = sym_graph(3, {(0, 2): 7})
    out, rmap = remove_zero_degrees(g)
    assert rmap.forward[[0, 2]].tolist() == [0, 1]
    assert rmap.reverse.tolist() == [0, 2]
    assert edge_dict(out) == {(0, 1): 7, (1, 0): 7}
    with pytest.raises(DomainError):
        remove_zero_degrees(g.with_kind(False))


def test_remove_zero_degrees_identity():
    g = sym_graph(3, {(0, 1): 1, (1, 2): 2})
    out, rmap = remove_zero_degrees(g)
    assert rmap.is_identity() and out is g


@given(st.integers(1, 25), sym_edges)
def test_remove_zero_degrees_properties(n, edges):
    g = sym_graph(n, edges)
    out, rmap = remove_zero_degrees(g)
    assert out.edge_count == g.edge_count
    assert np.all(out.in_degrees() > 0)
    assert np.all(np.diff(rmap.reverse.astype(np.int64)) > 0)
    back = {(int(rmap.reverse[s]), int(rmap.reverse[d])): w for (s, d), w in edge_dict(out).items()}
    assert back == edge_dict(g)
    spec = FilterSpec(ABSOLUTE, 1.0, threshold=0)
    assert validate_filtered(g, out, spec, rmap).ok


def test_resolve_spec_records_manifest_fields():
    rng = np.random.default_rng(0)
    edges = {(int(a), int(b)): int(w) for a, b, w in
             zip(rng.integers(0, 300, 4000), rng.integers(0, 300, 4000), rng.integers(1, 5000, 4000))}
    g = sym_graph(300, edges)
    spec = resolve_spec(FilterSpec(ABSOLUTE, 0.2, label="MS200"), g, weight_histogram(g))
    fields = spec.manifest_fields()
    assert fields["filter_label"] == "MS200" and fields["filter_threshold"] == spec.threshold
    assert abs(spec.achieved_fraction - 0.2) <= 0.01 and fields["filter_warning"] == 0
    (out,) = multi_filter(g, [spec])
    assert out.edge_count / g.edge_count == pytest.approx(spec.achieved_fraction)
    assert np.all(vertex_max_weight(g) >= 0)
