import logging

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from data import RawDocument
from embedding import Document, ItemMatrix
from errors import ContractError, DimensionError, EmptyDocumentError, NotFoundError
from model import (
    PJFNN,
    PJFNNScorer,
    cosine_matrix,
    cosine_similarity,
    encode_job,
    encode_resume,
    init_model_params,
    item_similarity_matrix,
    score,
)


@pytest.fixture
def model(tiny_model_config):
    return PJFNN.create(tiny_model_config, job_dim=6, resume_dim=4, seed=0)


def test_params_layout(model):
    weights = model.params.weights
    assert weights["job.conv1.kernels"].shape == (5, 6, 2)
    assert weights["job.conv2.kernels"].shape == (4, 5, 2)
    assert weights["resume.conv1.kernels"].shape == (3, 4, 2)
    assert weights["resume.conv2.kernels"].shape == (4, 3, 2)
    assert model.params.regularized_names() == sorted(n for n in weights if ".conv" in n)
    assert len(model.params.regularized_names()) == 8
    assert set(model.params.buffers) == {
        f"{side}.{bn}.{stat}" for side in ("job", "resume") for bn in ("bn1", "bn2") for stat in ("running_mean", "running_var")
    }


@pytest.mark.parametrize("length", [1, 3, 8, 40, 200])
def test_encode_item_output_length(model, length):
    item = ItemMatrix("job", np.random.default_rng(length).normal(size=(6, length)).astype(np.float32))
    assert model.encode_item(item).shape == (4,)


def test_encode_item_zero_input_gives_zero_latent(model):
    item = ItemMatrix("resume", np.zeros((4, 9), dtype=np.float32))
    assert_array_equal(model.encode_item(item).data, np.zeros(4))


def test_encode_item_deterministic_and_batch_independent(model, make_doc):
    job = make_doc("j", "job", [7, 12, 3], seed=1)
    matrices = [i.matrix for i in job.items]
    together = model.encode_items("job", matrices).data
    for n, m in enumerate(matrices):
        alone = model.encode_items("job", [m]).data[0]
        assert_array_equal(together[n], alone)
    assert_array_equal(model.encode_items("job", matrices).data, together)


def test_encode_item_rejects_wrong_dimension(model):
    with pytest.raises(DimensionError):
        model.encode_item(ItemMatrix("job", np.zeros((4, 9), dtype=np.float32)))


def test_encode_job_is_coordinatewise_max(model, make_doc):
    job = make_doc("j", "job", [6, 9, 11], seed=2)
    items = model.encode_items("job", [i.matrix for i in job.items]).data
    assert_array_equal(model.encode_job(job).data, items.max(axis=0))


def test_single_item_documents_equal_item_encoding(model, make_doc):
    job = make_doc("j", "job", [10], seed=3)
    resume = make_doc("r", "resume", [10], seed=3)
    assert_array_equal(model.encode_job(job).data, model.encode_item(job.items[0]).data)
    assert_allclose(model.encode_resume(resume).data, model.encode_item(resume.items[0]).data, rtol=1e-6)


def test_encode_resume_is_mean(model, make_doc):
    resume = make_doc("r", "resume", [6, 9, 11, 5], seed=4)
    items = model.encode_items("resume", [i.matrix for i in resume.items]).data
    assert_allclose(model.encode_resume(resume).data, items.mean(axis=0), rtol=1e-6)


def test_aggregations_permutation_invariant(model, make_doc):
    job = make_doc("j", "job", [6, 9, 11, 8], seed=5)
    resume = make_doc("r", "resume", [6, 9, 11, 8], seed=6)
    order = [2, 0, 3, 1]
    job_perm = Document(job.id, "job", job.category, job.year, [job.items[i] for i in order])
    resume_perm = Document(resume.id, "resume", resume.category, resume.year, [resume.items[i] for i in order])
    assert_array_equal(model.encode_job(job).data, model.encode_job(job_perm).data)
    assert_array_equal(model.encode_resume(resume).data, model.encode_resume(resume_perm).data)


def test_resume_duplicating_items_keeps_mean(model, make_doc):
    resume = make_doc("r", "resume", [6, 9], seed=7)
    doubled = Document("r", "resume", "T", 2013, resume.items + resume.items)
    assert_allclose(model.encode_resume(doubled).data, model.encode_resume(resume).data, rtol=1e-6, atol=1e-7)


def test_job_max_pool_dominance(model, make_doc):
    job = make_doc("j", "job", [6, 9], seed=8)
    extended = Document("j", "job", "T", 2013, job.items + [job.items[0]])
    assert_array_equal(model.encode_job(extended).data, model.encode_job(job).data)


def test_side_and_emptiness_contracts(model, make_doc):
    resume = make_doc("r", "resume", [6], seed=9)
    with pytest.raises(ContractError):
        model.encode_job(resume)
    with pytest.raises(EmptyDocumentError):
        model.encode_job(Document("j", "job", "T", 2013, []))


def test_cosine_similarity_examples():
    assert cosine_similarity(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == pytest.approx(1.0)
    assert cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 3.0])) == 0.0
    assert cosine_similarity(np.array([1.0, 0.0]), np.array([1.0, 1.0])) == pytest.approx(0.70710678)


def test_cosine_zero_vector_scores_zero_with_warning(caplog):
    with caplog.at_level(logging.WARNING, logger="PJFNN"):
        assert cosine_similarity(np.zeros(3), np.ones(3)) == 0.0
    assert any("范数为 0" in r.getMessage() for r in caplog.records)


def test_cosine_matrix_identical_rows():
    a = np.array([[1.0, 2.0, 3.0]])
    assert_allclose(cosine_matrix(a, a), [[1.0]])


def test_scores_bounded_and_matrix_shape(model, make_doc):
    rng = np.random.default_rng(10)
    for n in range(5):
        job = make_doc(f"j{n}", "job", list(rng.integers(1, 15, size=3)), seed=n)
        resume = make_doc(f"r{n}", "resume", list(rng.integers(1, 15, size=2)), seed=100 + n)
        s = model.score(job, resume)
        assert -1.0 <= s <= 1.0
        matrix = model.item_similarity_matrix(job, resume)
        assert matrix.shape == (3, 2)
        assert np.all(np.abs(matrix) <= 1.0)


def test_item_salience_sums_to_one(model, make_doc):
    job = make_doc("j", "job", [6, 9, 11], seed=11)
    salience = model.item_salience(job)
    assert salience.shape == (3,)
    assert salience.sum() == pytest.approx(1.0)


def test_functional_entry_points_match_model(model, make_doc):
    job = make_doc("j", "job", [6, 9], seed=12)
    resume = make_doc("r", "resume", [7], seed=13)
    params = model.params
    assert_array_equal(encode_job(job, params), model.encode_job(job).data)
    assert_array_equal(encode_resume(resume, params), model.encode_resume(resume).data)
    assert score(job, resume, params) == model.score(job, resume)
    assert_array_equal(item_similarity_matrix(job, resume, params), model.item_similarity_matrix(job, resume))


def test_train_mode_updates_running_stats(model, make_doc):
    job = make_doc("j", "job", [6, 9, 12], seed=14)
    before = model.params.buffers["job.bn1.running_mean"].copy()
    model.encode_documents([job], mode="train")
    assert not np.array_equal(model.params.buffers["job.bn1.running_mean"], before)
    assert_array_equal(model.params.buffers["resume.bn1.running_mean"], np.zeros(3))


def test_init_model_params_deterministic(tiny_model_config):
    a = init_model_params(tiny_model_config, 6, 4, seed=3)
    b = init_model_params(tiny_model_config, 6, 4, seed=3)
    for name in a.weights:
        assert_array_equal(a.weights[name], b.weights[name])


def _raw(doc_id, side, items):
    return RawDocument(id=doc_id, side=side, category="P", year=2014, items=items)


def test_scorer_matches_model_and_caches(model, job_table, resume_table):
    jobs = {"j0": _raw("j0", "job", [["j1", "j2", "j3"], ["j4"]]), "j1": _raw("j1", "job", [["j5", "j6", "j7", "j8"]])}
    resumes = {"r0": _raw("r0", "resume", [["r1", "r2"], ["r3", "r4", "r5"]])}
    scorer = PJFNNScorer(model, job_table, resume_table, jobs, resumes, threads=2)
    scores = scorer.score_pairs([("j0", "r0"), ("j1", "r0")])
    expected = [model.score(scorer.document("job", j), scorer.document("resume", "r0")) for j in ("j0", "j1")]
    assert_allclose(scores, expected)
    assert ("job", "j0") in scorer._cache
    with pytest.raises(NotFoundError):
        scorer.score_pairs([("missing", "r0")])
