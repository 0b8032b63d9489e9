"""
训练：对比损失、Adam 优化、小批量训练循环

损失 = Σ_正样本 −cos(v_j, v_r) + Σ_负样本 cos(v_j, v_r) + λ·Σθ²，θ 只含卷积核与卷积偏置。
每个 epoch 的随机性来自 SeedSequence([seed, epoch])，同一配置与 seed 的训练结果逐位一致。
"""
import json
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from checkpoint import Checkpoint
from config import ModelConfig, TrainConfig, logger
from data import ApplicationRecord, Dataset
from embedding import Document, EmbeddingTable, embed_document
from errors import ContractError, DataError, NumericError, UndefinedMetricError
from model import PJFNN, cosine_rows
from strategies import build_strategy
from tensor_core import GradTape, Tensor, backward, take, tsum

Pair = Tuple[Document, Document]


# ==================== 距离与损失 ====================
def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    """负余弦相似度，取值 [-1, 1]；零向量没有方向，距离无定义"""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise UndefinedMetricError("零向量的余弦距离无定义")
    return float(-np.clip(u @ v / (nu * nv), -1.0, 1.0))


def contrastive_loss(
    pos_jobs: Tensor,
    pos_resumes: Tensor,
    neg_jobs: Optional[Tensor] = None,
    neg_resumes: Optional[Tensor] = None,
    regularized: Sequence[Tensor] = (),
    lam: float = 0.0,
) -> Tensor:
    """潜在向量层面的损失：[P, l] 正样本对，[N, l] 负样本对"""
    loss = -tsum(cosine_rows(pos_jobs, pos_resumes))
    if neg_jobs is not None and neg_jobs.shape[0] > 0:
        loss = loss + tsum(cosine_rows(neg_jobs, neg_resumes))
    if lam > 0 and regularized:
        penalty = tsum(regularized[0] * regularized[0])
        for theta in regularized[1:]:
            penalty = penalty + tsum(theta * theta)
        loss = loss + penalty * lam
    return loss


def objective(
    model: PJFNN,
    pos: Sequence[Pair],
    neg: Sequence[Pair],
    lam: float,
    mode: str = "train",
    weights: Optional[Mapping[str, Tensor]] = None,
) -> Tensor:
    """
    一个小批量的损失。批内所有岗位（简历）的条目一次性前向，
    批归一化在 train 模式下统计的是整批条目
    """
    if not pos:
        raise ContractError("objective 需要至少一个正样本对")
    weights = model.tensors() if weights is None else weights
    pairs = list(pos) + list(neg)

    def unique(side_index: int) -> Tuple[List[Document], List[int]]:
        docs: List[Document] = []
        index: Dict[str, int] = {}
        rows = []
        for pair in pairs:
            doc = pair[side_index]
            if doc.id not in index:
                index[doc.id] = len(docs)
                docs.append(doc)
            rows.append(index[doc.id])
        return docs, rows

    job_docs, job_rows = unique(0)
    resume_docs, resume_rows = unique(1)
    job_latent = model.encode_documents(job_docs, mode, weights)
    resume_latent = model.encode_documents(resume_docs, mode, weights)

    n_pos = len(pos)
    pos_j, pos_r = take(job_latent, job_rows[:n_pos]), take(resume_latent, resume_rows[:n_pos])
    neg_j = neg_r = None
    if neg:
        neg_j, neg_r = take(job_latent, job_rows[n_pos:]), take(resume_latent, resume_rows[n_pos:])
    regularized = [weights[n] for n in model.params.regularized_names()]
    return contrastive_loss(pos_j, pos_r, neg_j, neg_r, regularized, lam)


# ==================== Adam ====================
@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """带偏差修正的 Adam 更新，返回新参数与新状态（输入不被修改）"""
    if set(params) != set(grads):
        missing = sorted(set(params) ^ set(grads))
        raise ContractError(f"梯度与参数的键不一致: {missing}")
    t = state.t + 1
    b1, b2 = config.beta1, config.beta2
    correction1, correction2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for name in sorted(params):
        p, g = params[name], np.asarray(grads[name], dtype=params[name].dtype)
        if g.shape != p.shape:
            raise ContractError(f"参数 {name} 形状 {p.shape} 与梯度形状 {g.shape} 不一致")
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        step = config.lr * (m / correction1) / (np.sqrt(v / correction2) + config.eps)
        new_params[name] = (p - step).astype(p.dtype)
        new_m[name], new_v[name] = m.astype(p.dtype), v.astype(p.dtype)
    return new_params, AdamState(new_m, new_v, t)


# ==================== 训练循环 ====================
@dataclass
class EpochLog:
    epoch: int
    loss: float
    batches: int
    negatives: int

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "loss": self.loss, "batches": self.batches, "negatives": self.negatives}


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    losses: List[EpochLog]
    initial_weights: Dict[str, np.ndarray] = field(repr=False)

    def write_loss_log(self, path: str) -> None:
        write_loss_log(self.losses, path)


def write_loss_log(losses: Sequence[EpochLog], path: str) -> None:
    """每个 epoch 一行 JSON"""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for entry in losses:
            f.write(json.dumps(entry.to_dict(), sort_keys=True) + "\n")


class _DocumentCache:
    def __init__(self, dataset: Dataset, job_table: EmbeddingTable, resume_table: EmbeddingTable):
        self.dataset = dataset
        self.tables = {"job": job_table, "resume": resume_table}
        self._docs: Dict[Tuple[str, str], Document] = {}

    def get(self, side: str, doc_id: str) -> Document:
        key = (side, doc_id)
        if key not in self._docs:
            self._docs[key] = embed_document(self.dataset.documents(side)[doc_id], self.tables[side])
        return self._docs[key]

    def pairs(self, records: Sequence[ApplicationRecord]) -> List[Pair]:
        return [(self.get("job", r.job_id), self.get("resume", r.resume_id)) for r in records]


def train(
    dataset: Dataset,
    job_table: EmbeddingTable,
    resume_table: EmbeddingTable,
    config: TrainConfig,
    model_config: Optional[ModelConfig] = None,
    run_config: Optional[dict] = None,
    exclude_pairs: Optional[Sequence[Tuple[str, str]]] = None,
) -> TrainResult:
    """
    在 dataset（训练划分）上训练 PJFNN
    :param exclude_pairs: synthetic 负采样时额外排除的 (job_id, resume_id)，默认只排除训练集内的成功对
    """
    positives = dataset.positives()
    if not positives:
        raise DataError("训练集中没有成功申请记录，无法训练")
    model_config = model_config or ModelConfig()
    model = PJFNN.create(model_config, job_table.dim, resume_table.dim, seed=config.seed)
    initial_weights = {k: v.copy() for k, v in model.params.weights.items()}

    exclude = {p.pair for p in positives} | set(exclude_pairs or ())
    strategy = build_strategy(config.negative_mode, dataset.job_ids(), dataset.failures(), exclude)
    cache = _DocumentCache(dataset, job_table, resume_table)
    state = AdamState.zeros_like(model.params.weights)
    n_batches = max(1, math.ceil(len(positives) / config.batch_size))
    negatives: List[ApplicationRecord] = []
    losses: List[EpochLog] = []

    logger.info(
        f"开始训练: 正样本 {len(positives)}，负采样 {config.negative_mode} × {config.negatives_per_positive}，"
        f"epochs={config.epochs}，每轮 {n_batches} 个批次"
    )
    for epoch in range(config.epochs):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, epoch]))
        if epoch == 0 or config.resample_negatives:
            negatives = strategy.sample(positives, config.negatives_per_positive, rng)
        pos_batches = np.array_split(rng.permutation(len(positives)), n_batches)
        neg_batches = np.array_split(rng.permutation(len(negatives)), n_batches)

        batch_losses = []
        for b, (pos_idx, neg_idx) in enumerate(zip(pos_batches, neg_batches)):
            if pos_idx.size == 0:
                continue
            pos = cache.pairs([positives[i] for i in pos_idx])
            neg = cache.pairs([negatives[i] for i in neg_idx])
            with GradTape() as tape:
                weights = {n: tape.watch(Tensor(a), n) for n, a in model.params.weights.items()}
                loss = objective(model, pos, neg, config.lam, "train", weights)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(f"损失出现非有限值: epoch={epoch + 1}, batch={b + 1}, loss={value}")
            grads = backward(loss, tape)
            model.params.weights, state = adam_step(model.params.weights, grads, state, config)
            batch_losses.append(value)
            if config.log_every and (b + 1) % config.log_every == 0:
                logger.info(f"epoch {epoch + 1} batch {b + 1}/{n_batches} loss={value:.6f}")

        mean_loss = float(np.mean(batch_losses)) if batch_losses else 0.0
        losses.append(EpochLog(epoch + 1, mean_loss, len(batch_losses), len(negatives)))
        logger.info(f"epoch {epoch + 1}/{config.epochs} 平均损失={mean_loss:.6f}，批次={len(batch_losses)}，负样本={len(negatives)}")

    run_config = run_config if run_config is not None else {
        "model": model_config.model_dump(mode="json"),
        "train": config.model_dump(mode="json", by_alias=True),
    }
    checkpoint = Checkpoint(config=run_config, job_table=job_table, resume_table=resume_table, params=model.params)
    return TrainResult(checkpoint=checkpoint, losses=losses, initial_weights=initial_weights)
