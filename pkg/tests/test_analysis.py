import csv
import io

import numpy as np
import pytest
from numpy.testing import assert_allclose

from analysis import (
    dimension_keywords,
    export_representations,
    representation_rows,
    similarity_report,
    strongest_dimension,
)
from embedding import Document, ItemMatrix
from errors import UsageError
from model import PJFNN


@pytest.fixture
def model(tiny_model_config):
    return PJFNN.create(tiny_model_config, 6, 4, seed=3)


# ==================== 导出 ====================
def test_export_rows_per_document(model, make_doc):
    job = make_doc("j", "job", [6, 7, 9], seed=1)
    rows = representation_rows(model, [job])
    assert rows[0] == ["id", "side", "level", "item_index", "v0", "v1", "v2", "v3"]
    assert len(rows) == 1 + 4
    assert [r[2] for r in rows[1:]] == ["document", "item", "item", "item"]
    assert [r[3] for r in rows[2:]] == ["0", "1", "2"]
    assert all(len(r) == 4 + model.latent_dim for r in rows)


@pytest.mark.parametrize("side", ["job", "resume"])
def test_single_item_document_equals_item(model, make_doc, side):
    doc = make_doc("d", side, [8], seed=5)
    rows = representation_rows(model, [doc])
    assert rows[1][4:] == rows[2][4:]


def test_export_is_byte_stable(model, make_doc, tmp_path):
    docs = [make_doc("j1", "job", [6, 9], seed=1), make_doc("r1", "resume", [5, 5, 7], seed=2)]
    path = tmp_path / "reps.csv"
    text = export_representations(model, docs, str(path))
    assert export_representations(model, docs, threads=2) == text
    assert path.read_text(encoding="utf-8") == text
    parsed = list(csv.reader(io.StringIO(text)))
    assert len(parsed) == 1 + 3 + 4
    assert_allclose(
        [float(v) for v in parsed[1][4:]],
        model.encode_job(docs[0]).data,
        rtol=1e-6,
    )


def test_export_skips_unencodable_document(model, make_doc, caplog):
    bad = Document("bad", "job", "T", 2013, [ItemMatrix("job", np.ones((5, 6), dtype=np.float32))])
    docs = [make_doc("ok", "job", [6], seed=1), bad]
    rows = representation_rows(model, docs)
    assert {r[0] for r in rows[1:]} == {"ok"}
    assert "bad" in caplog.text


# ==================== 维度关键词 ====================
def _keyword_docs(make_doc, job_table):
    items = [
        [["j1", "j2", "j3", "j4", "j5"]],
        [["j1", "j1", "j2", "j6", "j7"]],
        [["j1", "j2", "j2", "j8", "j8"]],
        [["j9", "j9", "j9", "j9", "j9"]],
    ]
    return [make_doc(f"job{i}", "job", it, table=job_table) for i, it in enumerate(items)]


def test_keywords_from_top_quantile(model, make_doc, job_table):
    docs = _keyword_docs(make_doc, job_table)
    latents = np.zeros((4, model.latent_dim))
    latents[:, 0] = [0.1, 0.5, 0.9, -1.0]
    result = dimension_keywords(model, docs, 0, top_k=3, quantile=0.5, stop_tokens=(), latents=latents)
    assert result.n_selected == 2
    assert result.keywords == [("j1", 3), ("j2", 3), ("j8", 2)]
    assert "j1\t3" in result.to_text()


def test_keywords_stop_tokens_and_top_k(model, make_doc, job_table):
    docs = _keyword_docs(make_doc, job_table)
    latents = np.zeros((4, model.latent_dim))
    latents[:, 1] = [0.1, 0.5, 0.9, -1.0]
    result = dimension_keywords(model, docs, 1, top_k=1, quantile=0.5, stop_tokens=("j1",), latents=latents)
    assert result.keywords == [("j2", 3)]


def test_keywords_non_positive_dimension_selects_nothing(model, make_doc, job_table):
    docs = _keyword_docs(make_doc, job_table)
    latents = -np.ones((4, model.latent_dim))
    result = dimension_keywords(model, docs, 2, latents=latents)
    assert result.keywords == []
    assert result.n_selected == 0


def test_keywords_zero_threshold_keeps_only_active_documents(model, make_doc, job_table):
    docs = _keyword_docs(make_doc, job_table)
    latents = np.zeros((4, model.latent_dim))
    latents[:, 0] = [0.0, 0.0, 0.0, 0.7]
    result = dimension_keywords(model, docs, 0, top_k=3, quantile=0.5, stop_tokens=(), latents=latents)
    assert result.threshold == 0.0
    assert result.n_selected == 1
    assert result.keywords == [("j9", 5)]


def test_keywords_encodes_when_latents_missing(model, make_doc, job_table):
    docs = _keyword_docs(make_doc, job_table)
    result = dimension_keywords(model, docs, 3, top_k=20)
    assert len(result.keywords) <= 20
    assert result.side == "job"


def test_keywords_argument_checks(model, make_doc, job_table):
    docs = _keyword_docs(make_doc, job_table)
    with pytest.raises(UsageError):
        dimension_keywords(model, docs, model.latent_dim)
    with pytest.raises(UsageError):
        dimension_keywords(model, docs, 0, quantile=1.0)


def test_strongest_dimension():
    latents = np.array([[0.1, 0.9, 0.9], [0.3, 0.5, 0.5]])
    assert strongest_dimension(latents) == 1
    with pytest.raises(UsageError):
        strongest_dimension(np.zeros((0, 3)))


# ==================== 相似度报告 ====================
def test_similarity_report(model, make_doc, job_table, resume_table):
    job = make_doc("j", "job", [["j1", "j2", "j3", "j4", "j5"], ["j6", "j7", "j8", "j9", "j10", "j11"]], table=job_table)
    resume = make_doc("r", "resume", [["r1"] * 5, ["r2", "r3", "r4", "r5", "r6"], ["r7"] * 6], table=resume_table)
    report = similarity_report(model, job, resume, truncate=8)
    assert report.matrix.shape == (2, 3)
    assert np.all(np.abs(report.matrix) <= 1.0 + 1e-6)
    assert report.score == model.score(job, resume)
    assert report.salience.sum() == pytest.approx(1.0)
    assert all(len(text) <= 8 for text in report.job_items)
    text = report.to_text()
    assert "R1" in text and "E2" in text
