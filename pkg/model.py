"""
PJFNN 双塔匹配网络

岗位塔、简历塔结构相同、参数独立：每个条目经过
  conv1d → batchnorm → relu → maxpool(2, 2) → conv1d → batchnorm → relu → 全局最大池化
得到长度 l 的条目向量；岗位侧对条目向量逐维取最大，简历侧取平均，最后用余弦相似度打分。

eval 模式下逐条目单独编码，同一条目的潜在向量与它在批中的位置无关（逐位一致）；
train 模式下一批条目补齐后一起前向，批归一化使用批统计量并更新 running 统计。
"""
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from base_classes import BaseScorer
from config import ModelConfig, logger
from embedding import Document, EmbeddingTable, ItemMatrix, embed_document
from errors import ContractError, DimensionError, EmptyDocumentError, NotFoundError
from nn_layers import (
    BatchNormParams,
    Conv1dParams,
    LayerSpec,
    Mode,
    batchnorm,
    conv1d,
    conv_lengths,
    global_maxpool,
    init_params,
    maxpool1d,
    min_input_length,
    pad_item,
    pool_lengths,
    relu,
    segment_max,
    segment_mean,
)
from tensor_core import Tensor, get_default_dtype, tsqrt, tsum

SIDES = ("job", "resume")
COSINE_EPS = 1e-12


# ==================== 参数 ====================
@dataclass
class ModelParams:
    """
    weights: 可学习参数，名如 job.conv1.kernels / resume.bn2.gamma
    buffers: 批归一化 running 统计，名如 job.bn1.running_mean
    """
    config: ModelConfig
    job_dim: int
    resume_dim: int
    weights: Dict[str, np.ndarray]
    buffers: Dict[str, np.ndarray]

    def input_dim(self, side: str) -> int:
        return self.job_dim if side == "job" else self.resume_dim

    def regularized_names(self) -> List[str]:
        """参与 L2 正则的参数：只有卷积核与卷积偏置"""
        return sorted(n for n in self.weights if ".conv" in n)

    def copy(self) -> "ModelParams":
        return ModelParams(
            config=self.config,
            job_dim=self.job_dim,
            resume_dim=self.resume_dim,
            weights={k: v.copy() for k, v in self.weights.items()},
            buffers={k: v.copy() for k, v in self.buffers.items()},
        )


def layer_specs(config: ModelConfig, job_dim: int, resume_dim: int) -> Dict[str, LayerSpec]:
    specs: Dict[str, LayerSpec] = {}
    for side, d_in, hidden in (("job", job_dim, config.job_hidden), ("resume", resume_dim, config.resume_hidden)):
        specs[f"{side}.conv1"] = LayerSpec("conv1d", d_in, hidden, config.kernel1)
        specs[f"{side}.bn1"] = LayerSpec("batchnorm", c_out=hidden)
        specs[f"{side}.conv2"] = LayerSpec("conv1d", hidden, config.latent_dim, config.kernel2)
        specs[f"{side}.bn2"] = LayerSpec("batchnorm", c_out=config.latent_dim)
    return specs


def init_model_params(config: ModelConfig, job_dim: int, resume_dim: int, seed: int = 0) -> ModelParams:
    specs = layer_specs(config, job_dim, resume_dim)
    buffers: Dict[str, np.ndarray] = {}
    for name, spec in specs.items():
        if spec.kind == "batchnorm":
            buffers[f"{name}.running_mean"] = np.zeros(spec.c_out, dtype=np.float32)
            buffers[f"{name}.running_var"] = np.ones(spec.c_out, dtype=np.float32)
    return ModelParams(config, job_dim, resume_dim, init_params(specs, seed), buffers)


# ==================== 余弦 ====================
def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """两个潜在向量的余弦相似度；任一为零向量时记为 0 并告警"""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        logger.warning("潜在向量范数为 0（退化编码），匹配分记为 0")
        return 0.0
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """[n, l] × [m, l] -> [n, m] 两两余弦，零向量所在行 / 列为 0"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        logger.warning("存在范数为 0 的条目向量（退化编码），对应相似度记为 0")
    denom = np.outer(na, nb)
    sims = np.divide(a @ b.T, denom, out=np.zeros_like(denom), where=denom > 0)
    return np.clip(sims, -1.0, 1.0)


def cosine_rows(u: Tensor, v: Tensor) -> Tensor:
    """逐行余弦 [P, l] × [P, l] -> [P]，分母开方内加 1e-12 使零向量处梯度有限"""
    dot = tsum(u * v, axis=1)
    norm_u = tsqrt(tsum(u * u, axis=1) + COSINE_EPS)
    norm_v = tsqrt(tsum(v * v, axis=1) + COSINE_EPS)
    return dot / (norm_u * norm_v)


# ==================== 网络 ====================
class PJFNN:
    def __init__(self, params: ModelParams):
        self.params = params
        cfg = params.config
        # train 模式下 bn2 每个条目至少 2 个位置；eval 用同一长度，两种模式输入一致
        self.min_item_length = min_input_length(cfg.kernel1, cfg.kernel2, cfg.pool_size, cfg.pool_stride, min_positions=2)

    @classmethod
    def create(cls, config: ModelConfig, job_dim: int, resume_dim: int, seed: int = 0) -> "PJFNN":
        return cls(init_model_params(config, job_dim, resume_dim, seed))

    @property
    def latent_dim(self) -> int:
        return self.params.config.latent_dim

    def tensors(self) -> Dict[str, Tensor]:
        return {name: Tensor(arr, name=name) for name, arr in self.params.weights.items()}

    def _bn(self, prefix: str, weights: Mapping[str, Tensor]) -> BatchNormParams:
        cfg = self.params.config
        return BatchNormParams(
            gamma=weights[f"{prefix}.gamma"],
            beta=weights[f"{prefix}.beta"],
            running_mean=self.params.buffers[f"{prefix}.running_mean"],
            running_var=self.params.buffers[f"{prefix}.running_var"],
            epsilon=cfg.bn_eps,
            momentum=cfg.bn_momentum,
        )

    def _tower(self, side: str, x: Tensor, lengths: Optional[np.ndarray], mode: Mode, weights: Mapping[str, Tensor]) -> Tensor:
        cfg = self.params.config
        conv1 = Conv1dParams(weights[f"{side}.conv1.kernels"], weights[f"{side}.conv1.bias"])
        conv2 = Conv1dParams(weights[f"{side}.conv2.kernels"], weights[f"{side}.conv2.bias"])
        bn1, bn2 = self._bn(f"{side}.bn1", weights), self._bn(f"{side}.bn2", weights)

        h = conv1d(x, conv1, lengths)
        lengths = None if lengths is None else conv_lengths(lengths, conv1.k)
        h = relu(batchnorm(h, bn1, mode, lengths))
        h = maxpool1d(h, cfg.pool_size, cfg.pool_stride, lengths)
        lengths = None if lengths is None else pool_lengths(lengths, cfg.pool_size, cfg.pool_stride)
        h = conv1d(h, conv2, lengths)
        lengths = None if lengths is None else conv_lengths(lengths, conv2.k)
        h = relu(batchnorm(h, bn2, mode, lengths))
        out = global_maxpool(h, lengths)

        if mode == "train":
            for prefix, bn in ((f"{side}.bn1", bn1), (f"{side}.bn2", bn2)):
                self.params.buffers[f"{prefix}.running_mean"] = bn.running_mean
                self.params.buffers[f"{prefix}.running_var"] = bn.running_var
        return out

    # ---------- 条目编码 ----------
    def encode_items(
        self,
        side: str,
        matrices: Sequence[np.ndarray],
        mode: Mode = "eval",
        weights: Optional[Mapping[str, Tensor]] = None,
    ) -> Tensor:
        """
        一组同侧条目 -> [N, l]
        短于最小可用长度的条目右侧补零；eval 模式逐条目前向（仅推理，不记录梯度）
        """
        if side not in SIDES:
            raise ContractError(f"未知的文档侧: {side}")
        if not matrices:
            raise EmptyDocumentError("没有可编码的条目")
        dim = self.params.input_dim(side)
        weights = self.tensors() if weights is None else weights
        padded = []
        for m in matrices:
            if m.ndim != 2 or m.shape[0] != dim:
                raise DimensionError(f"{side} 侧条目形状 {m.shape} 与网络输入维度 {dim} 不一致")
            padded.append(pad_item(m, self.min_item_length))

        if mode == "eval":
            rows = [self._tower(side, Tensor(p), None, "eval", weights).data for p in padded]
            return Tensor(np.stack(rows))

        lengths = np.array([p.shape[1] for p in padded], dtype=np.int64)
        batch = np.zeros((len(padded), dim, int(lengths.max())), dtype=get_default_dtype())
        for i, p in enumerate(padded):
            batch[i, :, :p.shape[1]] = p
        return self._tower(side, Tensor(batch), lengths, mode, weights)

    def encode_item(self, item: ItemMatrix, mode: Mode = "eval", weights: Optional[Mapping[str, Tensor]] = None) -> Tensor:
        out = self.encode_items(item.side, [item.matrix], mode, weights)
        return out.reshape(self.latent_dim)

    # ---------- 文档编码 ----------
    def encode_documents(
        self,
        docs: Sequence[Document],
        mode: Mode = "eval",
        weights: Optional[Mapping[str, Tensor]] = None,
    ) -> Tensor:
        """同侧文档批量编码 -> [n_docs, l]：所有条目一次编码，再按文档聚合（岗位取最大，简历取平均）"""
        if not docs:
            raise ContractError("encode_documents 需要至少一个文档")
        side = docs[0].side
        matrices, segments = [], []
        for s, doc in enumerate(docs):
            if doc.side != side:
                raise ContractError(f"文档 {doc.id} 属于 {doc.side} 侧，与批内 {side} 侧不一致")
            if not doc.items:
                raise EmptyDocumentError(f"文档 {doc.id} 没有任何条目")
            for item in doc.items:
                matrices.append(item.matrix)
                segments.append(s)
        items = self.encode_items(side, matrices, mode, weights)
        aggregate = segment_max if side == "job" else segment_mean
        return aggregate(items, segments, len(docs))

    def _encode_side(self, doc: Document, side: str, mode: Mode, weights) -> Tensor:
        if doc.side != side:
            raise ContractError(f"文档 {doc.id} 属于 {doc.side} 侧，不能用 {side} 塔编码")
        return self.encode_documents([doc], mode, weights).reshape(self.latent_dim)

    def encode_job(self, job: Document, mode: Mode = "eval", weights: Optional[Mapping[str, Tensor]] = None) -> Tensor:
        return self._encode_side(job, "job", mode, weights)

    def encode_resume(self, resume: Document, mode: Mode = "eval", weights: Optional[Mapping[str, Tensor]] = None) -> Tensor:
        return self._encode_side(resume, "resume", mode, weights)

    # ---------- 打分 ----------
    def score(self, job: Document, resume: Document) -> float:
        return cosine_similarity(self.encode_job(job).data, self.encode_resume(resume).data)

    def item_similarity_matrix(self, job: Document, resume: Document) -> np.ndarray:
        """[n_j, n_r]：要求条目 a 与经历条目 b 的潜在向量余弦"""
        a = self.encode_items("job", [i.matrix for i in job.items]).data
        b = self.encode_items("resume", [i.matrix for i in resume.items]).data
        return cosine_matrix(a, b)

    def item_salience(self, job: Document) -> np.ndarray:
        """每个要求条目在岗位级最大池化中胜出的维度占比（并列归最靠前条目），各条目之和为 1"""
        items = self.encode_items("job", [i.matrix for i in job.items]).data
        winners = items.argmax(axis=0)
        return np.bincount(winners, minlength=len(job.items)) / float(items.shape[1])


# ==================== 函数式入口 ====================
def encode_item(item: ItemMatrix, params: ModelParams, mode: Mode = "eval") -> np.ndarray:
    return PJFNN(params).encode_item(item, mode).data


def encode_job(job: Document, params: ModelParams, mode: Mode = "eval") -> np.ndarray:
    return PJFNN(params).encode_job(job, mode).data


def encode_resume(resume: Document, params: ModelParams, mode: Mode = "eval") -> np.ndarray:
    return PJFNN(params).encode_resume(resume, mode).data


def score(job: Document, resume: Document, params: ModelParams) -> float:
    return PJFNN(params).score(job, resume)


def item_similarity_matrix(job: Document, resume: Document, params: ModelParams) -> np.ndarray:
    return PJFNN(params).item_similarity_matrix(job, resume)


# ==================== 打分器 ====================
class PJFNNScorer(BaseScorer):
    """
    面向语料的打分器：按 id 查原始文档，查表嵌入后编码，文档潜在向量缓存复用
    threads > 1 时用线程池并发编码（eval 模式只读参数）
    """

    name = "pjfnn"

    def __init__(
        self,
        model: PJFNN,
        job_table: EmbeddingTable,
        resume_table: EmbeddingTable,
        jobs: Mapping[str, object],
        resumes: Mapping[str, object],
        threads: int = 1,
    ):
        self.model = model
        self.tables = {"job": job_table, "resume": resume_table}
        self.documents = {"job": jobs, "resume": resumes}
        self.threads = max(1, int(threads))
        self._cache: Dict[Tuple[str, str], np.ndarray] = {}
        self._lock = threading.Lock()

    def document(self, side: str, doc_id: str) -> Document:
        raw = self.documents[side].get(doc_id)
        if raw is None:
            raise NotFoundError(f"未找到 {side} 文档: {doc_id}")
        return embed_document(raw, self.tables[side])

    def latent(self, side: str, doc_id: str) -> np.ndarray:
        key = (side, doc_id)
        with self._lock:
            cached = self._cache.get(key)
        if cached is not None:
            return cached
        vec = self.model.encode_documents([self.document(side, doc_id)]).data[0]
        with self._lock:
            self._cache[key] = vec
        return vec

    def latents(self, side: str, ids: Sequence[str]) -> np.ndarray:
        ids = list(ids)
        pending = sorted({i for i in ids if (side, i) not in self._cache})
        if self.threads > 1 and len(pending) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                list(pool.map(lambda i: self.latent(side, i), pending))
        if not ids:
            return np.zeros((0, self.model.latent_dim), dtype=np.float32)
        return np.stack([self.latent(side, i) for i in ids])

    def score_pairs(self, pairs: Sequence[tuple]) -> np.ndarray:
        pairs = list(pairs)
        if not pairs:
            return np.zeros(0)
        jobs = self.latents("job", [p[0] for p in pairs])
        resumes = self.latents("resume", [p[1] for p in pairs])
        return np.array([cosine_similarity(u, v) for u, v in zip(jobs, resumes)])
