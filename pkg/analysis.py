"""
结果分析：潜在向量导出（供外部画热力图）、按维度提取高频关键词、条目级相似度报告
"""
import csv
import io
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from config import logger
from data import FILLER_TOKENS
from embedding import Document
from errors import PJFNNError, UsageError
from model import PJFNN


# ==================== 导出 ====================
def _fmt(values: Iterable[float]) -> List[str]:
    return [f"{float(v):.8g}" for v in values]


def _encode_rows(model: PJFNN, doc: Document) -> List[List[str]]:
    doc_vec = model.encode_documents([doc]).data[0]
    item_vecs = model.encode_items(doc.side, [i.matrix for i in doc.items]).data
    rows = [[doc.id, doc.side, "document", ""] + _fmt(doc_vec)]
    for n, vec in enumerate(item_vecs):
        rows.append([doc.id, doc.side, "item", str(n)] + _fmt(vec))
    return rows


def representation_rows(model: PJFNN, documents: Sequence[Document], threads: int = 1) -> List[List[str]]:
    """每个文档一行 document 行 + 每个条目一行 item 行；编码失败的文档告警后跳过"""
    def safe(doc: Document) -> List[List[str]]:
        try:
            return _encode_rows(model, doc)
        except PJFNNError as e:
            logger.warning(f"文档 {doc.id} 编码失败，导出时跳过: {e}")
            return []

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(safe, documents))
    else:
        blocks = [safe(d) for d in documents]
    header = ["id", "side", "level", "item_index"] + [f"v{k}" for k in range(model.latent_dim)]
    return [header] + [row for block in blocks for row in block]


def export_representations(model: PJFNN, documents: Sequence[Document], path: Optional[str] = None, threads: int = 1) -> str:
    """写出 CSV（UTF-8、逗号分隔、带表头）并返回文本；相同输入逐字节一致"""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    rows = representation_rows(model, documents, threads)
    writer.writerows(rows)
    text = buffer.getvalue()
    if path:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        logger.info(f"潜在向量已导出: {path}（{len(rows) - 1} 行）")
    return text


# ==================== 维度关键词 ====================
@dataclass
class DimensionKeywords:
    dim: int
    side: str
    keywords: List[Tuple[str, int]]
    threshold: float
    n_selected: int

    def to_text(self) -> str:
        lines = [f"维度 {self.dim}（{self.side}）阈值 {self.threshold:.6g}，入选文档 {self.n_selected}"]
        lines += [f"{token}\t{freq}" for token, freq in self.keywords]
        return "\n".join(lines) + "\n"


def document_latents(model: PJFNN, documents: Sequence[Document], threads: int = 1) -> np.ndarray:
    if not documents:
        return np.zeros((0, model.latent_dim), dtype=np.float32)
    def encode(doc: Document) -> np.ndarray:
        return model.encode_documents([doc]).data[0]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return np.stack(list(pool.map(encode, documents)))
    return np.stack([encode(d) for d in documents])


def dimension_keywords(
    model: PJFNN,
    documents: Sequence[Document],
    dim: int,
    top_k: int = 10,
    quantile: float = 0.9,
    stop_tokens: Iterable[str] = FILLER_TOKENS,
    latents: Optional[np.ndarray] = None,
) -> DimensionKeywords:
    """
    取该维度取值不低于同侧文档 quantile 分位数（且大于 0）的文档，统计其中词频，
    去掉停用词后按频次降序、同频按字典序取前 top_k
    """
    if not 0 <= dim < model.latent_dim:
        raise UsageError(f"维度 {dim} 超出范围 [0, {model.latent_dim})")
    if not 0.0 < quantile < 1.0:
        raise UsageError(f"quantile 必须在 (0, 1) 内，实际 {quantile}")
    side = documents[0].side if documents else "job"
    if not documents:
        return DimensionKeywords(dim, side, [], float("nan"), 0)
    if latents is None:
        latents = document_latents(model, documents)
    values = np.asarray(latents, dtype=np.float64)[:, dim]
    threshold = float(np.quantile(values, quantile))
    selected = np.flatnonzero((values >= threshold) & (values > 0))

    stop = set(stop_tokens)
    counts: Counter = Counter()
    for i in selected:
        for item in documents[i].items:
            counts.update(t for t in item.tokens if t not in stop)
    keywords = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:max(top_k, 0)]
    return DimensionKeywords(dim, side, keywords, threshold, int(selected.size))


def strongest_dimension(latents: np.ndarray) -> int:
    """一组文档平均激活最高的维度（并列取下标最小者）"""
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 2 or latents.shape[0] == 0:
        raise UsageError("strongest_dimension 需要至少一个文档的潜在向量")
    return int(latents.mean(axis=0).argmax())


# ==================== 相似度报告 ====================
def _truncate(tokens: Sequence[str], width: int) -> str:
    text = " ".join(tokens)
    return text if len(text) <= width else text[:max(width - 3, 0)] + "..."


@dataclass
class SimilarityReport:
    job_id: str
    resume_id: str
    score: float
    matrix: np.ndarray
    salience: np.ndarray
    job_items: List[str]
    resume_items: List[str]

    def to_text(self) -> str:
        lines = [f"岗位 {self.job_id} × 简历 {self.resume_id}    匹配分 {self.score:.6f}", "", "经历条目:"]
        lines += [f"  E{b}: {text}" for b, text in enumerate(self.resume_items)]
        lines.append("")
        lines.append("要求条目".ljust(36) + "主导度".rjust(8) + "".join(f"{'E' + str(b):>9}" for b in range(len(self.resume_items))))
        for a, text in enumerate(self.job_items):
            label = f"R{a}: {text}"
            cells = "".join(f"{v:>9.4f}" for v in self.matrix[a])
            lines.append(label.ljust(36)[:36] + f"{self.salience[a]:>8.3f}" + cells)
        return "\n".join(lines) + "\n"


def similarity_report(model: PJFNN, job: Document, resume: Document, truncate: int = 30) -> SimilarityReport:
    """条目相似度矩阵 + 文档级匹配分 + 要求条目主导度"""
    return SimilarityReport(
        job_id=job.id,
        resume_id=resume.id,
        score=model.score(job, resume),
        matrix=model.item_similarity_matrix(job, resume),
        salience=model.item_salience(job),
        job_items=[_truncate(i.tokens, truncate) for i in job.items],
        resume_items=[_truncate(i.tokens, truncate) for i in resume.items],
    )
