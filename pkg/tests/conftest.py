import os
import sys

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from config import ModelConfig, SynthConfig  # noqa: E402
from data import RawDocument, iter_token_sequences, synth_generate  # noqa: E402
from embedding import Document, EmbeddingTable, ItemMatrix, Vocabulary, build_vocab, embed_document  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: 端到端验收测试（分钟级），用 -m 'not slow' 跳过")


JOB_DIM = 6
RESUME_DIM = 4


@pytest.fixture
def tiny_model_config() -> ModelConfig:
    # 补齐长度 (2-1) + 2 + 2*2 = 7（conv2 输出 2 个位置）
    return ModelConfig(latent_dim=4, job_hidden=5, resume_hidden=3, kernel1=2, kernel2=2)


def random_table(side: str, dim: int, tokens, seed: int = 0) -> EmbeddingTable:
    vocab = Vocabulary(["<pad>"] + list(tokens), [0] + [1] * len(tokens))
    rng = np.random.default_rng(seed)
    vectors = rng.normal(size=(len(vocab), dim)).astype(np.float32)
    vectors[0] = 0.0
    return EmbeddingTable(side, vectors, vocab)


@pytest.fixture
def job_table() -> EmbeddingTable:
    return random_table("job", JOB_DIM, [f"j{i}" for i in range(12)], seed=1)


@pytest.fixture
def resume_table() -> EmbeddingTable:
    return random_table("resume", RESUME_DIM, [f"r{i}" for i in range(12)], seed=2)


@pytest.fixture
def make_doc():
    """make_doc(doc_id, side, items, table=None, seed=0)：items 为词列表（需 table）或条目长度列表（随机矩阵）"""
    def _make(doc_id, side, items, table=None, seed=0, category="T", year=2013):
        if table is not None:
            raw = RawDocument(id=doc_id, side=side, category=category, year=year, items=items)
            return embed_document(raw, table)
        dim = JOB_DIM if side == "job" else RESUME_DIM
        rng = np.random.default_rng(seed)
        matrices = [rng.normal(size=(dim, n)).astype(np.float32) for n in items]
        return Document(doc_id, side, category, year, [ItemMatrix(side, m) for m in matrices])

    return _make


@pytest.fixture
def tiny_synth_config() -> SynthConfig:
    return SynthConfig(
        n_topics=4,
        vocab_per_topic=8,
        n_jobs=20,
        n_resumes=30,
        n_applications=80,
        years=(2013, 2014),
        match_rule="overlap",
        seed=3,
    )


@pytest.fixture
def tiny_dataset(tiny_synth_config):
    return synth_generate(tiny_synth_config)


@pytest.fixture
def tiny_tables(tiny_dataset):
    """语料词表上的随机词向量（岗位 6 维、简历 4 维），不经过 Skip-gram 训练"""
    tables = []
    for side, dim, seed in (("job", JOB_DIM, 1), ("resume", RESUME_DIM, 2)):
        vocab = build_vocab(iter_token_sequences(tiny_dataset, side))
        tables.append(random_table(side, dim, vocab.id_to_token[1:], seed))
    return tuple(tables)
