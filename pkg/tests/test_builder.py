import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import (adjacency_build, dedup_oracle, edge_dict, edge_multiset, graph_from_dict,
                     lower_triangle_arcs, symmetrize_oracle, write_blocks)
from simgraph.builder import (BuildMetrics, coo_to_csc, dedup_max_weight, plan_groups, symmetrize,
                              symmetrize_edge_count, symmetrize_sorted, transpose, validate_csc,
                              validate_symmetric)
from simgraph.errors import CompletenessError, PlanningError, PreconditionError
from simgraph.graph import CscGraph, PartitionScheme, coo_block_name, read_csc


def build(tmp_path, n, triples, p=1, budget=1 << 30, workers=1):
    scheme = PartitionScheme.near_equal(n, p)
    src, dst, w = (np.array(x, np.int64) for x in zip(*triples)) if triples else ([], [], [])
    write_blocks(tmp_path, scheme, src, dst, w)
    return coo_to_csc(tmp_path, scheme, budget, workers), scheme


def test_hand_example(tmp_path):
    g, scheme = build(tmp_path, 3, [(0, 2, 5), (1, 2, 3), (0, 1, 7)])
    assert g.offsets.tolist() == [0, 0, 1, 3]
    assert list(zip(g.neighbors.tolist(), g.weights.tolist())) == [(0, 7), (0, 5), (1, 3)]
    assert validate_csc(g, tmp_path, scheme).ok


def test_no_triples(tmp_path):
    g, scheme = build(tmp_path, 4, [], p=2)
    assert g.offsets.tolist() == [0] * 5 and g.edge_count == 0
    report = validate_csc(g, tmp_path, scheme)
    assert report.ok and report.checked == 0


def test_missing_block_lists_it(tmp_path):
    scheme = PartitionScheme.near_equal(10, 3)
    write_blocks(tmp_path, scheme, [0], [9], [1])
    (tmp_path / coo_block_name(1, 2)).unlink()
    with pytest.raises(CompletenessError) as exc:
        coo_to_csc(tmp_path, scheme, 1 << 20)
    assert (1, 2) in exc.value.missing


def test_budget_too_small(tmp_path):
    scheme = PartitionScheme.near_equal(10, 2)
    write_blocks(tmp_path, scheme, [0, 1, 2], [3, 3, 3], [1, 1, 1])
    with pytest.raises(PlanningError):
        coo_to_csc(tmp_path, scheme, 8)


def test_plan_groups_partition_the_range():
    scheme = PartitionScheme.near_equal(100, 10)
    offsets = np.arange(101, dtype=np.uint64) * 3
    plan = plan_groups(offsets, scheme, 8 * 3 * 25)
    flat = [p for lo, hi in plan.groups for p in range(lo, hi)]
    assert flat == list(range(10))
    assert all(b <= plan.memory_budget_bytes for b in plan.group_bytes)


@pytest.mark.parametrize("seed", range(5))
def test_matches_adjacency_oracle_any_workers_and_budget(tmp_path, seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 2000))
    src, dst, w = lower_triangle_arcs(rng, n, int(rng.integers(0, 20000)), dup_max=3)
    scheme = PartitionScheme.near_equal(n, int(rng.integers(1, 12)))
    write_blocks(tmp_path, scheme, src, dst, w)
    oracle = adjacency_build(n, zip(src.tolist(), dst.tolist(), w.tolist()))
    m = BuildMetrics()
    big = coo_to_csc(tmp_path, scheme, 1 << 30, 1, metrics=m)
    assert big.equals(oracle)
    assert m.triples_scanned == len(src)
    tight = max(8 * int(np.max(np.bincount(scheme.partition_of(dst), minlength=scheme.partition_count)))
                if len(dst) else 8, 8)
    again = coo_to_csc(tmp_path, scheme, tight, 3, out_dir=tmp_path / "out")
    assert again.equals(oracle)
    assert read_csc(tmp_path / "out").equals(oracle)


def test_one_edge_mutation_caught(tmp_path):
    rng = np.random.default_rng(9)
    src, dst, w = lower_triangle_arcs(rng, 300, 2000, dup_max=2)
    scheme = PartitionScheme.near_equal(300, 4)
    write_blocks(tmp_path, scheme, src, dst, w)
    g = coo_to_csc(tmp_path, scheme, 1 << 20)
    for k in rng.integers(0, g.edge_count, 20).tolist():
        wts = g.weights.copy()
        wts[k] += 1
        bad = CscGraph(g.offsets, g.neighbors, wts)
        rep = validate_csc(bad, tmp_path, scheme)
        assert not rep.ok
        v = int(np.searchsorted(g.offsets, k, side="right") - 1)
        assert rep.first_vertex == v
    # a dropped edge shifts the degree tally
    off = g.offsets.copy()
    off[-1] -= 1
    short = CscGraph(off, g.neighbors[:-1], g.weights[:-1])
    assert not validate_csc(short, tmp_path, scheme).ok


def test_dedup_hand_slice():
    g = CscGraph([0, 0, 0, 0, 3], [3, 3, 3], [10, 25, 7])
    out, removed = dedup_max_weight(g)
    assert removed == 2
    assert out.neighbors.tolist() == [3] and out.weights.tolist() == [25]
    with pytest.raises(PreconditionError):
        dedup_max_weight(CscGraph([0, 2], [1, 0], [1, 1]))


@given(st.lists(st.tuples(st.integers(0, 15), st.integers(0, 15), st.integers(0, 99),
                          st.integers(1, 10)), max_size=60))
def test_dedup_keeps_max_and_is_idempotent(spec):
    triples = [(s, d, w + k) for s, d, w, reps in spec for k in range(reps)]
    g = adjacency_build(16, triples)
    out, removed = dedup_max_weight(g)
    assert edge_dict(out) == dedup_oracle(16, triples)
    assert out.edge_count == len(triples) - removed
    again, zero = dedup_max_weight(out)
    assert zero == 0 and again.equals(out)


def test_transpose_hand_example():
    t = transpose(CscGraph([0, 0, 1], [0], [9]))
    assert t.offsets.tolist() == [0, 1, 1]
    assert list(zip(t.neighbors.tolist(), t.weights.tolist())) == [(1, 9)]


@given(st.integers(1, 40), st.lists(st.tuples(st.integers(0, 39), st.integers(0, 39),
                                               st.integers(0, 9)), max_size=120),
       st.integers(1, 5), st.integers(1, 3))
def test_transpose_involution(n, arcs, p, workers):
    arcs = [(s % n, d % n, w) for s, d, w in arcs]
    g = adjacency_build(n, arcs)
    scheme = PartitionScheme.near_equal(n, min(p, n))
    t = transpose(g, scheme, workers)
    t.check()
    assert edge_multiset(t) == sorted((d, s, w) for s, d, w in arcs)
    assert transpose(t, scheme, workers).equals(g)


def test_symmetrize_single_edge_and_mutual_pair():
    s = symmetrize(CscGraph([0, 1, 1], [1], [4]))
    assert edge_dict(s) == {(1, 0): 4, (0, 1): 4}
    s = symmetrize(graph_from_dict(2, {(1, 0): 4, (0, 1): 9}))
    assert edge_dict(s) == {(1, 0): 9, (0, 1): 9}
    assert s.edge_count == 2


def test_symmetrize_rejects_duplicates():
    with pytest.raises(PreconditionError):
        symmetrize(CscGraph([0, 2], [0, 0], [1, 2]))


@given(st.integers(1, 30), st.dictionaries(st.tuples(st.integers(0, 29), st.integers(0, 29)),
                                           st.integers(0, 50), max_size=150),
       st.integers(1, 4))
def test_symmetrize_matches_set_union(n, edges, p):
    edges = {(s % n, d % n): w for (s, d), w in edges.items()}
    g = graph_from_dict(n, edges)
    s = symmetrize(g, PartitionScheme.near_equal(n, min(p, n)), workers=2)
    expected = symmetrize_oracle(edges)
    assert edge_dict(s) == expected
    assert s.edge_count == symmetrize_edge_count(g)["expected_symmetric_edges"]
    assert validate_symmetric(s, symmetrize_sorted(g)).ok
    assert all(expected[(d, src)] == w for (src, d), w in expected.items())


def test_validate_symmetric_mutation():
    g = graph_from_dict(5, {(0, 1): 3, (2, 4): 7, (3, 3): 1})
    s = symmetrize(g)
    assert validate_symmetric(s, s).ok
    wts = s.weights.copy()
    wts[-1] += 1
    rep = validate_symmetric(s, CscGraph(s.offsets, s.neighbors, wts, True))
    assert not rep.ok and rep.first_vertex == 4


def test_self_loop_emitted_once():
    g = graph_from_dict(2, {(1, 1): 5, (0, 1): 2})
    s = symmetrize(g)
    assert edge_dict(s) == {(1, 1): 5, (0, 1): 2, (1, 0): 2}
    assert edge_multiset(transpose(g)).count((1, 1, 5)) == 1
