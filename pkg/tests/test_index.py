import numpy as np
import pytest

from twinenc import ModelConfig, TwinModel
from twinenc.index import (
    METRIC_RAW,
    METRIC_UNIT,
    EmbeddingIndex,
    build_graph,
    encode_corpus,
    knn_approx,
    knn_exact,
    normalize_rows,
)


def _unit_vectors(rng, n, dim=16):
    v = rng.standard_normal((n, dim))
    return (v / np.linalg.norm(v, axis=1, keepdims=True)).astype(np.float32)


def _index(rng, n, dim=16):
    return EmbeddingIndex(ids=[f"k{i:04d}" for i in range(n)], vectors=_unit_vectors(rng, n, dim))


def _reachable(index):
    seen = {index.entry_point}
    stack = [index.entry_point]
    while stack:
        node = stack.pop()
        for v in index.graph[node]:
            if int(v) not in seen:
                seen.add(int(v))
                stack.append(int(v))
    return seen


class TestEmbeddingIndex:
    def test_non_unit_vector_rejected(self, rng):
        v = rng.standard_normal((4, 8)).astype(np.float32)
        with pytest.raises(ValueError, match="unit-norm"):
            EmbeddingIndex(ids=list("abcd"), vectors=v * 3)

    def test_duplicate_ids_rejected(self, rng):
        v = _unit_vectors(rng, 2, 8)
        with pytest.raises(ValueError, match="unique"):
            EmbeddingIndex(ids=["a", "a"], vectors=v)

    def test_raw_store_allows_any_norm(self, rng):
        v = rng.standard_normal((4, 8)) * 5
        idx = EmbeddingIndex(ids=list("abcd"), vectors=v, metric=METRIC_RAW)
        assert idx.metric == METRIC_RAW

    def test_raw_store_not_searchable(self, rng):
        v = rng.standard_normal((4, 8)) * 5
        idx = EmbeddingIndex(ids=list("abcd"), vectors=v, metric=METRIC_RAW)
        q = np.zeros(8); q[0] = 1.0
        with pytest.raises(ValueError):
            knn_exact(q, idx, 2)


class TestEncodeCorpus:
    def test_single_keyword(self, tiny_model):
        idx = encode_corpus(["red shoes"], tiny_model)
        assert len(idx) == 1
        assert abs(np.linalg.norm(idx.vectors[0].astype(np.float64)) - 1.0) < 1e-6

    def test_duplicate_text_identical_vectors(self, tiny_model):
        idx = encode_corpus(["red shoes", "red shoes"], tiny_model, ids=["a", "b"])
        np.testing.assert_array_equal(idx.vectors[0], idx.vectors[1])

    def test_reencoding_bit_identical(self, tiny_model):
        texts = ["red shoes", "blue hat", "green socks"]
        a = encode_corpus(texts, tiny_model)
        b = encode_corpus(texts, tiny_model)
        np.testing.assert_array_equal(a.vectors, b.vectors)

    def test_unencodable_keyword_skipped(self, tiny_model, caplog):
        idx = encode_corpus(["red shoes", "???", "blue hat"], tiny_model, ids=["a", "b", "c"])
        assert idx.ids == ["a", "c"]

    def test_empty_corpus_rejected(self, tiny_model):
        with pytest.raises(ValueError):
            encode_corpus([], tiny_model)
        with pytest.raises(ValueError):
            encode_corpus(["???"], tiny_model)

    def test_raw_store_keeps_raw_float64(self, tiny_model):
        raw = encode_corpus(["red shoes"], tiny_model, normalize=False)
        direct = tiny_model.encode_keywords(["red shoes"])
        assert raw.metric == METRIC_RAW
        np.testing.assert_array_equal(raw.vectors, direct)


class TestKnnExact:
    def test_self_retrieval(self, rng):
        idx = _index(rng, 20)
        results = knn_exact(idx.vectors[7].astype(np.float64), idx, 3)
        assert results[0].keyword_id == "k0007"
        assert results[0].rank == 1
        assert results[0].cosine_score == pytest.approx(1.0, abs=1e-6)

    def test_top_n_clamped(self, rng):
        idx = _index(rng, 5)
        q = idx.vectors[0].astype(np.float64)
        assert len(knn_exact(q, idx, 50)) == 5

    def test_empty_index_rejected(self):
        idx = EmbeddingIndex(ids=[], vectors=np.zeros((0, 8), dtype=np.float32))
        q = np.zeros(8); q[0] = 1.0
        with pytest.raises(ValueError):
            knn_exact(q, idx, 1)

    def test_cosine_equals_distance_ranking(self, rng):
        idx = _index(rng, 100)
        q = _unit_vectors(rng, 1)[0].astype(np.float64)
        results = knn_exact(q, idx, 5)
        vec = idx.vectors.astype(np.float64)
        dists = np.linalg.norm(vec - q, axis=1)
        by_dist = np.argsort(dists, kind="stable")[:5]
        assert [r.keyword_id for r in results] == [idx.ids[i] for i in by_dist]

    def test_storage_order_invariance(self, rng):
        vectors = _unit_vectors(rng, 50)
        ids = [f"k{i:04d}" for i in range(50)]
        idx1 = EmbeddingIndex(ids=ids, vectors=vectors)
        perm = rng.permutation(50)
        idx2 = EmbeddingIndex(ids=[ids[i] for i in perm], vectors=vectors[perm])
        q = _unit_vectors(rng, 1)[0].astype(np.float64)
        r1 = [(r.keyword_id, r.rank) for r in knn_exact(q, idx1, 10)]
        r2 = [(r.keyword_id, r.rank) for r in knn_exact(q, idx2, 10)]
        assert r1 == r2

    def test_duality_on_results(self, rng):
        idx = _index(rng, 40)
        q = _unit_vectors(rng, 1)[0].astype(np.float64)
        for r in knn_exact(q, idx, 10):
            k = idx.vectors[idx.ids.index(r.keyword_id)].astype(np.float64)
            k = k / np.linalg.norm(k)
            dist_sq = float(((q - k) ** 2).sum())
            assert abs(r.cosine_score - (1.0 - dist_sq / 2.0)) < 1e-6

    def test_non_unit_query_rejected(self, rng):
        idx = _index(rng, 5)
        with pytest.raises(ValueError, match="unit-norm"):
            knn_exact(np.ones(16), idx, 1)


class TestBuildGraph:
    def test_two_nodes_link_both_ways(self, rng):
        idx = _index(rng, 2)
        build_graph(idx, degree_bound=4, build_beam=8)
        assert list(idx.graph[0]) == [1]
        assert list(idx.graph[1]) == [0]

    def test_degree_bound_respected(self, rng):
        idx = _index(rng, 200)
        build_graph(idx, degree_bound=6, build_beam=24)
        assert max(len(g) for g in idx.graph) <= 6

    def test_every_node_reachable(self, rng):
        idx = _index(rng, 300)
        build_graph(idx, degree_bound=8, build_beam=32)
        assert len(_reachable(idx)) == 300

    def test_reachable_even_at_degree_one(self, rng):
        idx = _index(rng, 40)
        build_graph(idx, degree_bound=1, build_beam=8)
        assert len(_reachable(idx)) == 40

    def test_deterministic(self, rng):
        vectors = _unit_vectors(rng, 80)
        ids = [f"k{i:04d}" for i in range(80)]
        a = build_graph(EmbeddingIndex(ids=ids, vectors=vectors), 8, 16)
        b = build_graph(EmbeddingIndex(ids=ids, vectors=vectors.copy()), 8, 16)
        for ga, gb in zip(a.graph, b.graph):
            np.testing.assert_array_equal(ga, gb)

    def test_invalid_params(self, rng):
        idx = _index(rng, 5)
        with pytest.raises(ValueError):
            build_graph(idx, degree_bound=0)


class TestKnnApprox:
    def test_requires_graph(self, rng):
        idx = _index(rng, 10)
        with pytest.raises(ValueError, match="no graph"):
            knn_approx(idx.vectors[0].astype(np.float64), idx, 2)

    def test_beam_below_top_n_rejected(self, rng):
        idx = build_graph(_index(rng, 10), 4, 8)
        with pytest.raises(ValueError, match="search_beam"):
            knn_approx(idx.vectors[0].astype(np.float64), idx, 5, search_beam=3)

    def test_exhaustive_beam_matches_exact(self, rng):
        idx = build_graph(_index(rng, 60), 8, 32)
        q = _unit_vectors(rng, 1)[0].astype(np.float64)
        exact = [(r.keyword_id, round(r.cosine_score, 9)) for r in knn_exact(q, idx, 5)]
        approx = [(r.keyword_id, round(r.cosine_score, 9)) for r in knn_approx(q, idx, 5, search_beam=60)]
        assert exact == approx

    def test_self_query_found(self, rng):
        idx = build_graph(_index(rng, 120), 8, 32)
        hits = 0
        for i in range(40):
            r = knn_approx(idx.vectors[i].astype(np.float64), idx, 1, search_beam=16)
            hits += r[0].keyword_id == f"k{i:04d}"
        assert hits >= 39

    def test_distance_counter_counts(self, rng):
        idx = build_graph(_index(rng, 100), 8, 32)
        idx.counters.reset()
        knn_approx(_unit_vectors(rng, 1)[0].astype(np.float64), idx, 5, search_beam=16)
        assert 0 < idx.counters.distance_computations < 100

    def test_recall_on_desk_corpus(self, rng):
        idx = build_graph(_index(rng, 500, dim=32), 16, 64)
        recalls = []
        for _ in range(30):
            q = _unit_vectors(rng, 1, 32)[0].astype(np.float64)
            exact = {r.keyword_id for r in knn_exact(q, idx, 10)}
            approx = {r.keyword_id for r in knn_approx(q, idx, 10, search_beam=64)}
            recalls.append(len(exact & approx) / 10)
        assert np.mean(recalls) >= 0.9


class TestPersistence:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        idx = build_graph(_index(rng, 50), 8, 16)
        path = tmp_path / "index.bin"
        idx.save(path)
        loaded = EmbeddingIndex.load(path)
        np.testing.assert_array_equal(idx.vectors, loaded.vectors)
        assert idx.ids == loaded.ids
        assert loaded.degree_bound == 8 and loaded.build_beam == 16
        for a, b in zip(idx.graph, loaded.graph):
            np.testing.assert_array_equal(a, b)
        loaded.save(tmp_path / "again.bin")
        assert (tmp_path / "index.bin").read_bytes() == (tmp_path / "again.bin").read_bytes()

    def test_search_identical_after_reload(self, tmp_path, rng):
        idx = build_graph(_index(rng, 80), 8, 32)
        path = tmp_path / "index.bin"
        idx.save(path)
        loaded = EmbeddingIndex.load(path)
        q = _unit_vectors(rng, 1)[0].astype(np.float64)
        before = [(r.keyword_id, r.cosine_score) for r in knn_exact(q, idx, 10)]
        after = [(r.keyword_id, r.cosine_score) for r in knn_exact(q, loaded, 10)]
        assert before == after

    def test_raw_store_round_trip(self, tmp_path, rng):
        raw = EmbeddingIndex(ids=list("abc"), vectors=rng.standard_normal((3, 8)), metric=METRIC_RAW)
        path = tmp_path / "raw.bin"
        raw.save(path)
        loaded = EmbeddingIndex.load(path)
        assert loaded.metric == METRIC_RAW
        assert loaded.vectors.dtype == np.float64
        np.testing.assert_array_equal(raw.vectors, loaded.vectors)


class TestNormalizeRows:
    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            normalize_rows(np.zeros((2, 4)))

    def test_unit_output(self, rng):
        out = normalize_rows(rng.standard_normal((10, 8)))
        np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-12)
