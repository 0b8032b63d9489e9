"""
词表构建与 Skip-gram（负采样）词向量训练

岗位侧、简历侧各自维护词表和向量表（默认 256 / 64 维），训练后冻结，
双塔网络训练时只读不改。id 0 保留给未登录词 / 补齐位，其向量恒为 0。
"""
import zlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Literal, Sequence, Tuple

import numpy as np
from gensim.models import Word2Vec

from config import logger
from errors import EmptyCorpusError, InsufficientVocabularyError

Side = Literal["job", "resume"]
PAD_TOKEN = "<pad>"


# ==================== 数据类型 ====================
@dataclass
class ItemMatrix:
    """一个要求 / 经历条目：d × |S| 矩阵，第 j 列是第 j 个词的词向量"""
    side: Side
    matrix: np.ndarray
    tokens: Tuple[str, ...] = ()

    @property
    def length(self) -> int:
        return self.matrix.shape[1]


@dataclass
class Document:
    """岗位或简历：有序条目列表 + 元数据"""
    id: str
    side: Side
    category: str
    year: int
    items: List[ItemMatrix]

    @property
    def n_items(self) -> int:
        return len(self.items)


@dataclass
class Vocabulary:
    id_to_token: List[str]
    frequencies: List[int]
    min_count: int = 1
    token_to_id: Dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return self.token_to_id.get(token, 0) != 0

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, 0)

    def ids(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.token_to_id.get(t, 0) for t in tokens], dtype=np.int64)

    def to_dict(self) -> dict:
        return {"tokens": list(self.id_to_token), "frequencies": list(self.frequencies), "min_count": self.min_count}

    @classmethod
    def from_dict(cls, data: dict) -> "Vocabulary":
        return cls(list(data["tokens"]), [int(x) for x in data["frequencies"]], int(data["min_count"]))


@dataclass
class EmbeddingTable:
    side: Side
    vectors: np.ndarray  # [|V|, dim]，第 0 行全零
    vocab: Vocabulary

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


# ==================== 词表 ====================
def build_vocab(corpus: Iterable[Sequence[str]], min_count: int = 1) -> Vocabulary:
    """频次 ≥ min_count 的词入表，按频次降序、同频按字典序编号；其余词映射到 id 0"""
    counts: Counter = Counter()
    for tokens in corpus:
        counts.update(tokens)
    if not counts:
        raise EmptyCorpusError("语料为空，无法构建词表")
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary([PAD_TOKEN] + kept, [0] + [counts[t] for t in kept], min_count)


# ==================== Skip-gram ====================
def _stable_hash(text: str) -> int:
    """与进程无关的字符串哈希（内置 hash 随 PYTHONHASHSEED 变化）"""
    return zlib.crc32(text.encode("utf-8"))


def train_skipgram(
    corpus: Iterable[Sequence[str]],
    vocab: Vocabulary,
    dim: int,
    window: int = 5,
    negatives: int = 5,
    epochs: int = 5,
    lr: float = 0.025,
    seed: int = 0,
    side: Side = "job",
    batch_words: int = 10000,
) -> EmbeddingTable:
    """
    gensim Word2Vec（sg=1 + 负采样，噪声分布 unigram^0.75，学习率线性衰减到 lr·1e-4）
    gensim 词表直接取自 vocab 的词频，训练后按 vocab 的 id 顺序取回向量；单线程，结果由 seed 决定
    """
    if dim < 1 or window < 1:
        raise ValueError(f"dim 与 window 必须 ≥ 1: dim={dim}, window={window}")
    n_words = len(vocab) - 1
    if n_words < negatives + 1:
        raise InsufficientVocabularyError(f"词表仅 {n_words} 个词，负采样数 {negatives} 需要至少 {negatives + 1} 个")

    sentences = [[t for t in tokens if t in vocab] for tokens in corpus]
    sentences = [s for s in sentences if s]

    model = Word2Vec(
        vector_size=dim,
        window=window,
        min_count=1,
        sg=1,
        hs=0,
        negative=negatives,
        ns_exponent=0.75,
        sample=0,
        alpha=lr,
        min_alpha=lr * 1e-4,
        seed=seed,
        workers=1,
        epochs=epochs,
        hashfxn=_stable_hash,
        batch_words=batch_words,
    )
    model.build_vocab_from_freq(
        dict(zip(vocab.id_to_token[1:], vocab.frequencies[1:])),
        corpus_count=len(sentences),
    )
    if not any(len(s) > 1 for s in sentences):
        logger.warning(f"[{side}] 语料中没有可用的上下文词对，词向量保持随机初始化")
    else:
        model.train(sentences, total_examples=len(sentences), epochs=epochs)
        logger.info(f"[{side}] Skip-gram 训练完成：{epochs} 轮，句子数={len(sentences)}")

    rows = [model.wv.key_to_index[t] for t in vocab.id_to_token[1:]]
    vectors = np.zeros((len(vocab), dim), dtype=np.float32)
    vectors[1:] = model.wv.vectors[rows]
    return EmbeddingTable(side=side, vectors=vectors, vocab=vocab)


def embedding_quality(table: EmbeddingTable, groups: Sequence[Sequence[str]]) -> Tuple[float, float]:
    """
    词向量自检：返回 (组内平均余弦, 组间平均余弦)
    groups 为若干词组（如合成语料的主题词表），不在词表中的词忽略
    """
    vecs, labels = [], []
    for g, words in enumerate(groups):
        for w in words:
            i = table.vocab.lookup(w)
            if i:
                vecs.append(table.vectors[i])
                labels.append(g)
    if len(vecs) < 2:
        return 0.0, 0.0
    m = np.asarray(vecs, dtype=np.float64)
    m /= np.linalg.norm(m, axis=1, keepdims=True) + 1e-12
    sims = m @ m.T
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    off_diag = ~np.eye(len(labels), dtype=bool)
    intra = sims[same & off_diag]
    cross = sims[~same]
    return float(intra.mean()) if intra.size else 0.0, float(cross.mean()) if cross.size else 0.0


# ==================== 条目嵌入 ====================
def embed_item(tokens: Sequence[str], table: EmbeddingTable) -> ItemMatrix:
    """条目 -> d × |S| 矩阵；未登录词对应零列，重复词对应相同列"""
    ids = table.vocab.ids(tokens)
    return ItemMatrix(side=table.side, matrix=np.ascontiguousarray(table.vectors[ids].T), tokens=tuple(tokens))


def embed_document(raw, table: EmbeddingTable) -> Document:
    """RawDocument -> Document（逐条目查表）"""
    return Document(
        id=raw.id,
        side=table.side,
        category=raw.category,
        year=raw.year,
        items=[embed_item(tokens, table) for tokens in raw.items],
    )
