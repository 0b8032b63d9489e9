import numpy as np
import pytest

import retrieval
from model import PJFNN, cosine_similarity
from retrieval import LatentIndex, recommend_jobs


def _vectors(n=30, dim=4, seed=0):
    rng = np.random.default_rng(seed)
    return [f"job{i:02d}" for i in range(n)], rng.normal(size=(n, dim)).astype(np.float32)


def test_numpy_search_sorted_by_cosine():
    ids, vectors = _vectors()
    index = LatentIndex(ids, vectors, use_faiss=False)
    query = np.array([1.0, 0.5, -0.2, 0.0], dtype=np.float32)
    hits = index.search(query, top_n=5)
    assert len(hits) == 5
    expected = sorted(((i, cosine_similarity(query, v)) for i, v in zip(ids, vectors)), key=lambda x: (-x[1], x[0]))
    assert hits == expected[:5]


@pytest.mark.skipif(not retrieval.FAISS_AVAILABLE, reason="faiss 未安装")
def test_faiss_matches_numpy():
    ids, vectors = _vectors(n=200, seed=1)
    query = np.random.default_rng(2).normal(size=4).astype(np.float32)
    assert LatentIndex(ids, vectors, use_faiss=True).search(query, 10) == LatentIndex(ids, vectors, use_faiss=False).search(query, 10)


def test_ties_break_by_id():
    vectors = np.array([[1.0, 0.0], [2.0, 0.0], [0.0, 1.0]], dtype=np.float32)
    index = LatentIndex(["b", "a", "c"], vectors, use_faiss=False)
    assert [i for i, _ in index.search(np.array([1.0, 0.0]), 3)] == ["a", "b", "c"]


def test_edge_cases():
    ids, vectors = _vectors(n=3)
    index = LatentIndex(ids, vectors, use_faiss=False)
    assert index.search(vectors[0], top_n=0) == []
    assert len(index.search(vectors[0], top_n=10)) == 3
    assert all(score == 0.0 for _, score in index.search(np.zeros(4), 3))
    empty = LatentIndex([], np.zeros((0, 4)), use_faiss=False)
    assert len(empty) == 0
    assert empty.search(vectors[0], 5) == []
    with pytest.raises(ValueError):
        LatentIndex(["a"], np.zeros((2, 4)))


def test_recommend_jobs_matches_model_scores(tiny_model_config, make_doc):
    model = PJFNN.create(tiny_model_config, 6, 4, seed=0)
    jobs = [make_doc(f"job{i}", "job", [6, 8], seed=i) for i in range(6)]
    resume = make_doc("r", "resume", [7, 9], seed=99)
    index = LatentIndex.build(model, jobs, use_faiss=False)
    hits = recommend_jobs(model, resume, index, top_n=3)
    scores = {j.id: model.score(j, resume) for j in jobs}
    best = sorted(scores.items(), key=lambda x: (-x[1], x[0]))[:3]
    assert [h[0] for h in hits] == [b[0] for b in best]
    for (_, got), (_, want) in zip(hits, best):
        assert got == pytest.approx(want, abs=1e-6)
