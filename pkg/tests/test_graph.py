import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from simgraph.errors import DomainError, FormatError, TruncationError, ValidationError
from simgraph.graph import (CscGraph, PartitionScheme, RenumberMap, block_of, coo_block_count,
                            iter_coo_block, read_coo_block, read_csc, read_manifest, write_coo_block,
                            write_csc, write_manifest)


def test_coo_roundtrip_three_triples(tmp_path):
    p = tmp_path / "b.bin"
    write_coo_block(p, [0, 0, 1], [1, 2, 2], [98, 150, 200])
    rec = read_coo_block(p)
    assert [tuple(map(int, r)) for r in rec] == [(0, 1, 98), (0, 2, 150), (1, 2, 200)]
    assert p.read_bytes()[:8] == b"MSBCOO\x00\x01"


def test_coo_empty_block(tmp_path):
    p = tmp_path / "e.bin"
    write_coo_block(p, [], [], [])
    assert len(read_coo_block(p)) == 0
    assert list(iter_coo_block(p)) == []


def test_coo_truncated_body_reports_offset(tmp_path):
    p = tmp_path / "t.bin"
    write_coo_block(p, [0, 1, 2], [1, 2, 3], [5, 6, 7])
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(TruncationError) as exc:
        list(iter_coo_block(p, chunk_triples=2))
    assert exc.value.offset == 16 + 2 * 12 + 7


def test_coo_bad_magic(tmp_path):
    p = tmp_path / "m.bin"
    p.write_bytes(b"NOTMAGIC" + bytes(8))
    with pytest.raises(FormatError):
        coo_block_count(p)


def test_write_csc_hand_graph(tmp_path):
    g = CscGraph([0, 1, 1], [1], [5])
    write_csc(g, tmp_path / "g")
    back = read_csc(tmp_path / "g")
    assert back.offsets.tolist() == [0, 1, 1]
    assert list(zip(back.neighbors.tolist(), back.weights.tolist())) == [(1, 5)]


def test_write_csc_empty(tmp_path):
    write_csc(CscGraph.empty(0), tmp_path / "g")
    back = read_csc(tmp_path / "g")
    assert back.offsets.tolist() == [0] and back.edge_count == 0


def test_write_csc_rejects_invalid_naming_vertex(tmp_path):
    bad = CscGraph([0, 2, 2], [1, 0], [1, 1])  # unsorted slice of vertex 0
    with pytest.raises(ValidationError) as exc:
        write_csc(bad, tmp_path / "g")
    assert exc.value.vertex == 0
    asym = CscGraph([0, 1, 1], [1], [3], symmetric=True)
    with pytest.raises(ValidationError):
        write_csc(asym, tmp_path / "h")


def test_random_csc_reserialises_byte_identical(tmp_path):
    rng = np.random.default_rng(3)
    g = CscGraph.from_arcs(1000, rng.integers(0, 1000, 5000), rng.integers(0, 1000, 5000),
                           rng.integers(0, 2**32, 5000, dtype=np.uint64))
    write_csc(g, tmp_path / "a")
    write_csc(read_csc(tmp_path / "a"), tmp_path / "b")
    for name in ("offsets.bin", "edges.bin", "manifest.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert read_csc(tmp_path / "b").equals(g)


def test_manifest_tamper_detected(tmp_path):
    write_manifest(tmp_path / "m.txt", {"a": 1, "b": "x"})
    assert read_manifest(tmp_path / "m.txt") == {"a": "1", "b": "x"}
    text = (tmp_path / "m.txt").read_text().replace("a=1", "a=2")
    (tmp_path / "m.txt").write_text(text)
    with pytest.raises(FormatError):
        read_manifest(tmp_path / "m.txt")


def test_edges_file_tamper_detected(tmp_path):
    write_csc(CscGraph([0, 1, 1], [1], [5]), tmp_path / "g")
    e = tmp_path / "g" / "edges.bin"
    data = bytearray(e.read_bytes())
    data[-1] ^= 1
    e.write_bytes(bytes(data))
    with pytest.raises(FormatError):
        read_csc(tmp_path / "g")


def test_block_of_examples():
    s = PartitionScheme((0, 10, 20))
    assert block_of(3, 15, s) == (0, 1)
    assert block_of(15, 3, s) == (0, 1)
    assert block_of(7, 7, PartitionScheme.near_equal(10, 1)) == (0, 0)
    with pytest.raises(DomainError):
        block_of(20, 0, s)


def test_near_equal_ten_into_three():
    s = PartitionScheme.near_equal(10, 3)
    assert s.boundaries == (0, 4, 7, 10)
    assert s.sizes() == [4, 3, 3]


@given(st.integers(0, 5000), st.integers(1, 130))
def test_partition_cover_and_block_count(n, p):
    s = PartitionScheme.near_equal(n, p)
    assert sum(s.sizes()) == n
    assert max(s.sizes()) - min(s.sizes()) <= 1
    assert s.block_count == p * (p + 1) // 2 == len(s.blocks())
    if n:
        parts = s.partition_of(np.arange(n))
        assert np.all(np.diff(parts) >= 0)
        assert np.bincount(parts, minlength=p).tolist() == s.sizes()


def test_scheme_text_roundtrip(tmp_path):
    s = PartitionScheme((0, 3, 3, 9))
    s.save(tmp_path / "s.txt")
    assert PartitionScheme.load(tmp_path / "s.txt") == s
    with pytest.raises(DomainError):
        PartitionScheme((1, 2))


@given(st.lists(st.booleans(), max_size=300))
def test_renumber_bijection(mask):
    keep = np.array(mask, bool)
    m = RenumberMap.from_mask(keep)
    kept = np.flatnonzero(keep)
    assert m.reverse.tolist() == kept.tolist()
    assert np.all(m.reverse[m.forward[kept]] == kept)
    assert np.all(np.diff(m.forward[kept].astype(np.int64)) == 1) or len(kept) <= 1


def test_renumber_file_roundtrip(tmp_path):
    m = RenumberMap.from_mask(np.array([True, False, True, True, False]))
    m.write_reverse(tmp_path / "r.bin")
    back = RenumberMap.read_reverse(tmp_path / "r.bin", 5)
    assert back.forward.tolist() == m.forward.tolist()
    assert (tmp_path / "r.bin").read_bytes()[:8] == b"MSBREN\x00\x01"


def test_graph_arrays_are_read_only():
    g = CscGraph([0, 1], [0], [1])
    with pytest.raises(ValueError):
        g.weights[0] = 3
