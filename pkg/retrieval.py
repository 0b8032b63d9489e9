"""
岗位推荐：把编码后的岗位潜在向量建成内积索引，为一份简历召回最匹配的岗位
"""
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config import logger
from embedding import Document
from model import PJFNN, cosine_similarity

# 尝试导入faiss，如果失败则使用numpy替代
try:
    import faiss
    FAISS_AVAILABLE = True
except ImportError:
    FAISS_AVAILABLE = False
    logger.warning("FAISS不可用，将使用numpy进行向量检索")


def _normalize(vectors: np.ndarray) -> np.ndarray:
    vectors = np.asarray(vectors, dtype=np.float32)
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    return np.divide(vectors, norms, out=np.zeros_like(vectors), where=norms > 0)


class LatentIndex:
    """岗位潜在向量索引：单位化后内积即余弦；faiss 只负责召回候选，最终分数用 numpy 精确重算"""

    def __init__(self, ids: Sequence[str], vectors: np.ndarray, use_faiss: Optional[bool] = None):
        self.ids = list(ids)
        self.vectors = np.asarray(vectors, dtype=np.float32)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.ids):
            raise ValueError(f"索引 id 数 {len(self.ids)} 与向量形状 {self.vectors.shape} 不一致")
        self.use_faiss = FAISS_AVAILABLE if use_faiss is None else (use_faiss and FAISS_AVAILABLE)
        self.index = None
        if self.use_faiss and self.ids:
            self.index = faiss.IndexFlatIP(self.vectors.shape[1])
            self.index.add(_normalize(self.vectors))

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def build(cls, model: PJFNN, jobs: Sequence[Document], use_faiss: Optional[bool] = None) -> "LatentIndex":
        if not jobs:
            return cls([], np.zeros((0, model.latent_dim), dtype=np.float32), use_faiss)
        vectors = np.stack([model.encode_documents([doc]).data[0] for doc in jobs])
        logger.info(f"岗位索引构建完成: {len(jobs)} 个岗位，维度 {vectors.shape[1]}，faiss={bool(use_faiss if use_faiss is not None else FAISS_AVAILABLE)}")
        return cls([doc.id for doc in jobs], vectors, use_faiss)

    def _candidates(self, query: np.ndarray, top_n: int) -> np.ndarray:
        n = len(self.ids)
        if self.index is None:
            return np.arange(n)
        k = min(n, max(4 * top_n, top_n + 16))
        _, indices = self.index.search(_normalize(query[None, :]), k)
        return np.array([i for i in indices[0] if 0 <= i < n], dtype=np.int64)

    def search(self, query: np.ndarray, top_n: int = 10) -> List[Tuple[str, float]]:
        """返回 (job_id, 余弦)，按余弦降序、同分按 id 升序"""
        if top_n <= 0 or not self.ids:
            return []
        query = np.asarray(query, dtype=np.float32)
        if not np.any(query):
            logger.warning("查询向量为零向量（退化编码），所有岗位得分记为 0")
        scored = [(self.ids[i], cosine_similarity(query, self.vectors[i]) if np.any(query) else 0.0)
                  for i in self._candidates(query, top_n)]
        scored.sort(key=lambda x: (-x[1], x[0]))
        return scored[:top_n]


def recommend_jobs(model: PJFNN, resume: Document, index: LatentIndex, top_n: int = 10) -> List[Tuple[str, float]]:
    query = model.encode_resume(resume).data
    return index.search(query, top_n)
