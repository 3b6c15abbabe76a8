import numpy as np
import pytest

from hopret.index import (
    FlatIndex,
    HnswIndex,
    HnswParams,
    IndexFormatError,
    load_index,
    save_index,
)
from hopret.vecmath import dot_scores


def full_sort_oracle(vectors_f32, query, k):
    """Independent selection: full stable sort on (-score, ordinal)."""
    scores = np.einsum("ij,j->i", vectors_f32.astype(np.float64), np.asarray(query, float))
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return [(i, float(scores[i])) for i in order[:k]]


class TestFlatBuild:
    def test_basis_vectors(self):
        index = FlatIndex.build(np.eye(3))
        assert index.count == 3 and index.dimension == 3

    def test_nan_row_rejected_with_row_number(self):
        vectors = np.ones((4, 3))
        vectors[2, 1] = np.nan
        with pytest.raises(ValueError, match="row 2"):
            FlatIndex.build(vectors)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            FlatIndex.build(np.zeros((0, 3)))

    def test_ids_must_match_count(self):
        with pytest.raises(ValueError):
            FlatIndex.build(np.eye(2), ids=["only-one"])


class TestFlatSearch:
    def test_unit_basis(self):
        index = FlatIndex.build(np.eye(2))
        assert index.search(np.array([1.0, 0.0]), 1) == [(0, 1.0)]

    def test_analytic_ordering(self):
        index = FlatIndex.build(np.eye(2))
        got = index.search(np.array([0.6, 0.8]), 2)
        assert [h for h, _ in got] == [1, 0]
        assert got[0][1] == pytest.approx(0.8)

    def test_matches_full_sort_oracle(self):
        rng = np.random.default_rng(5)
        vectors = rng.standard_normal((200, 16))
        index = FlatIndex.build(vectors)
        for _ in range(20):
            query = rng.standard_normal(16)
            assert index.search(query, 7) == full_sort_oracle(index.vectors, query, 7)

    def test_duplicate_vectors_tie_break_by_ordinal(self):
        row = np.array([0.5, 0.5, 0.0])
        index = FlatIndex.build(np.stack([row, row, row, [1.0, 0, 0]]))
        got = index.search(np.array([1.0, 1.0, 0.0]), 4)
        assert [h for h, _ in got] == [0, 1, 2, 3]
        assert got[0][1] == got[1][1] == got[2][1]

    def test_k_larger_than_count(self):
        index = FlatIndex.build(np.eye(2))
        assert len(index.search(np.array([1.0, 0.0]), 10)) == 2

    def test_dimension_mismatch(self):
        index = FlatIndex.build(np.eye(3))
        with pytest.raises(ValueError, match="dimension"):
            index.search(np.zeros(4), 1)

    def test_k_validation(self):
        index = FlatIndex.build(np.eye(2))
        with pytest.raises(ValueError):
            index.search(np.zeros(2), 0)


class TestHnsw:
    def test_single_vector(self):
        flat = FlatIndex.build(np.array([[1.0, 2.0]]))
        index = HnswIndex.build(flat, HnswParams(seed=1))
        assert index.entry_point == 0
        assert index._graph[0][0] == []
        got = index.search(np.array([1.0, 0.0]), 1)
        assert got[0][0] == 0

    def test_seeded_determinism(self):
        rng = np.random.default_rng(2)
        flat = FlatIndex.build(rng.standard_normal((300, 16)))
        a = HnswIndex.build(flat, HnswParams(seed=7))
        b = HnswIndex.build(flat, HnswParams(seed=7))
        assert a._levels == b._levels
        assert a._graph == b._graph
        assert a.entry_point == b.entry_point

    def test_saturated_beam_equals_flat(self):
        rng = np.random.default_rng(3)
        flat = FlatIndex.build(rng.standard_normal((64, 8)))
        index = HnswIndex.build(flat, HnswParams(seed=4))
        for _ in range(10):
            query = rng.standard_normal(8)
            assert index.search(query, 5, ef_search=64) == flat.search(query, 5)

    def test_scores_are_true_inner_products(self, hnsw_10k, flat_10k):
        rng = np.random.default_rng(6)
        query = rng.standard_normal(64)
        exact = flat_10k.scores(query)
        for handle, score in hnsw_10k.search(query, 10):
            assert score == exact[handle]
            assert 0 <= handle < flat_10k.count

    def test_recall_at_10(self, hnsw_10k, flat_10k):
        rng = np.random.default_rng(7)
        hits = total = 0
        for _ in range(50):
            query = rng.standard_normal(64)
            exact = {h for h, _ in flat_10k.search(query, 10)}
            got = {h for h, _ in hnsw_10k.search(query, 10)}
            hits += len(exact & got)
            total += 10
        assert hits / total >= 0.95

    def test_recall_monotone_in_ef(self, hnsw_10k, flat_10k):
        rng = np.random.default_rng(8)
        queries = [rng.standard_normal(64) for _ in range(30)]
        recalls = []
        for ef in (16, 64, 256):
            hits = 0
            for query in queries:
                exact = {h for h, _ in flat_10k.search(query, 10)}
                got = {h for h, _ in hnsw_10k.search(query, 10, ef_search=ef)}
                hits += len(exact & got)
            recalls.append(hits / (10 * len(queries)))
        assert recalls[0] <= recalls[1] <= recalls[2]

    def test_ef_search_below_k_rejected(self, hnsw_10k):
        with pytest.raises(ValueError, match="ef_search"):
            hnsw_10k.search(np.zeros(64), 10, ef_search=5)

    def test_params_validated(self):
        flat = FlatIndex.build(np.eye(4))
        with pytest.raises(ValueError):
            HnswIndex.build(flat, HnswParams(m_links=1))
        with pytest.raises(ValueError):
            HnswIndex.build(flat, HnswParams(ef_construction=0))


class TestPersistence:
    def test_flat_round_trip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(9)
        index = FlatIndex.build(rng.standard_normal((500, 24)),
                                ids=[f"doc-{i}" for i in range(500)])
        path = tmp_path / "flat.idx"
        save_index(index, path)
        loaded = load_index(path)
        assert isinstance(loaded, FlatIndex)
        assert loaded.ids == index.ids
        for _ in range(50):
            query = rng.standard_normal(24)
            assert loaded.search(query, 9) == index.search(query, 9)

    def test_hnsw_round_trip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(10)
        flat = FlatIndex.build(rng.standard_normal((300, 16)))
        index = HnswIndex.build(flat, HnswParams(seed=3))
        path = tmp_path / "graph.idx"
        save_index(index, path)
        loaded = load_index(path)
        assert isinstance(loaded, HnswIndex)
        assert loaded._graph == index._graph
        assert loaded.entry_point == index.entry_point
        for _ in range(50):
            query = rng.standard_normal(16)
            assert loaded.search(query, 5) == index.search(query, 5)

    def test_corrupt_payload_byte_fails_checksum(self, tmp_path):
        index = FlatIndex.build(np.eye(8))
        path = tmp_path / "x.idx"
        save_index(index, path)
        data = bytearray(path.read_bytes())
        data[40] ^= 0xFF  # inside the vector payload
        path.write_bytes(bytes(data))
        with pytest.raises(IndexFormatError, match="checksum"):
            load_index(path)

    def test_wrong_magic(self, tmp_path):
        index = FlatIndex.build(np.eye(4))
        path = tmp_path / "x.idx"
        save_index(index, path)
        data = bytearray(path.read_bytes())
        data[:8] = b"NOTANIDX"
        path.write_bytes(bytes(data))
        with pytest.raises(IndexFormatError, match="magic"):
            load_index(path)

    def test_truncated_file(self, tmp_path):
        index = FlatIndex.build(np.eye(4))
        path = tmp_path / "x.idx"
        save_index(index, path)
        path.write_bytes(path.read_bytes()[:20])
        with pytest.raises(IndexFormatError):
            load_index(path)

    def test_unsupported_kind_rejected_on_save(self, tmp_path):
        with pytest.raises(TypeError):
            save_index(object(), tmp_path / "x.idx")
