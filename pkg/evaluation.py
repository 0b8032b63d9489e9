"""
评估：AUC、按整体 / 年份 / 岗位类别分组评估、均值词向量 + 逻辑回归基线
"""
import json
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import SGDClassifier
from sklearn.pipeline import Pipeline
from sklearn.preprocessing import StandardScaler

from base_classes import BaseScorer
from checkpoint import Checkpoint
from config import logger
from data import ApplicationRecord, Dataset
from embedding import EmbeddingTable
from errors import ContractError, DataError, UndefinedMetricError
from model import PJFNNScorer
from strategies import sample_negatives

Grouping = Literal["overall", "year", "category"]
GROUPINGS = ("overall", "year", "category")


# ==================== AUC ====================
def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann–Whitney 形式：随机正样本得分高于随机负样本的概率，并列记 1/2"""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ContractError(f"scores 与 labels 长度不一致: {scores.shape} vs {labels.shape}")
    positive = labels == 1
    n_pos = int(positive.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(f"AUC 需要正负两类样本，实际正 {n_pos} / 负 {n_neg}")
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    upper = np.cumsum(counts)
    avg_rank = upper - (counts - 1) / 2.0
    ranks = avg_rank[inverse]
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# ==================== 报告 ====================
@dataclass
class EvalRow:
    key: str
    auc: Optional[float]
    n_records: int
    n_positive: int
    n_negative: int
    skipped: bool = False

    def to_dict(self) -> dict:
        return {
            "key": self.key,
            "auc": self.auc,
            "n_records": self.n_records,
            "n_positive": self.n_positive,
            "n_negative": self.n_negative,
            "skipped": self.skipped,
        }


@dataclass
class EvalReport:
    grouping: str
    model: str
    rows: List[EvalRow]
    scores: List[float] = field(default_factory=list, repr=False)
    labels: List[int] = field(default_factory=list, repr=False)
    keys: List[str] = field(default_factory=list, repr=False)

    def row(self, key: str) -> EvalRow:
        for r in self.rows:
            if r.key == key:
                return r
        raise KeyError(key)

    @property
    def overall_auc(self) -> Optional[float]:
        """整体 AUC（不论分组方式，都按全部记录计算）"""
        try:
            return auc(self.scores, self.labels)
        except UndefinedMetricError:
            return None

    def to_json(self) -> dict:
        return {
            "grouping": self.grouping,
            "model": self.model,
            "rows": [r.to_dict() for r in self.rows],
            "scores": [float(s) for s in self.scores],
            "labels": [int(x) for x in self.labels],
            "keys": list(self.keys),
        }

    def to_text(self) -> str:
        lines = [f"模型: {self.model}    分组: {self.grouping}", f"{'key':<12}{'AUC':>10}{'记录数':>8}{'正':>8}{'负':>8}"]
        for r in self.rows:
            value = "skipped" if r.skipped else f"{r.auc:.5f}"
            lines.append(f"{r.key:<12}{value:>10}{r.n_records:>8}{r.n_positive:>8}{r.n_negative:>8}")
        return "\n".join(lines) + "\n"

    def write(self, json_path: Optional[str] = None, text_path: Optional[str] = None) -> None:
        if json_path:
            with open(json_path, "w", encoding="utf-8", newline="\n") as f:
                json.dump(self.to_json(), f, sort_keys=True, ensure_ascii=False, indent=2)
                f.write("\n")
        if text_path:
            with open(text_path, "w", encoding="utf-8", newline="\n") as f:
                f.write(self.to_text())


def _group_key(record: ApplicationRecord, dataset: Dataset, grouping: str) -> str:
    if grouping == "overall":
        return "overall"
    if grouping == "year":
        return str(record.year)
    return dataset.jobs[record.job_id].category


def build_report(
    scores: Sequence[float],
    records: Sequence[ApplicationRecord],
    dataset: Dataset,
    grouping: str,
    model_name: str,
) -> EvalReport:
    if grouping not in GROUPINGS:
        raise ContractError(f"未知的分组方式: {grouping}")
    labels = [1 if r.is_positive else 0 for r in records]
    keys = [_group_key(r, dataset, grouping) for r in records]
    members: Dict[str, List[int]] = {}
    for i, k in enumerate(keys):
        members.setdefault(k, []).append(i)

    rows = []
    for key in sorted(members):
        idx = members[key]
        group_scores = [scores[i] for i in idx]
        group_labels = [labels[i] for i in idx]
        n_pos = sum(group_labels)
        n_neg = len(idx) - n_pos
        if n_pos == 0 or n_neg == 0:
            logger.warning(f"[{model_name}] 分组 {key} 只有单一类别（正 {n_pos} / 负 {n_neg}），跳过")
            rows.append(EvalRow(key, None, len(idx), n_pos, n_neg, skipped=True))
            continue
        value = auc(group_scores, group_labels)
        logger.info(f"[{model_name}] {grouping}={key} AUC={value:.5f}（{len(idx)} 条）")
        rows.append(EvalRow(key, value, len(idx), n_pos, n_neg))
    return EvalReport(grouping, model_name, rows, [float(s) for s in scores], labels, keys)


# ==================== 评估 ====================
def build_eval_records(
    split: Dataset,
    regime: str = "synthetic",
    all_job_ids: Optional[Sequence[str]] = None,
    seed: int = 0,
    exclude_pairs: Optional[Sequence[Tuple[str, str]]] = None,
) -> List[ApplicationRecord]:
    """评估用记录：划分内的成功申请 + 同等数量的负样本（synthetic 换岗位 / real 抽失败记录）"""
    positives = split.positives()
    if not positives:
        raise DataError("评估划分中没有成功申请记录")
    negatives = sample_negatives(
        positives,
        all_job_ids if all_job_ids is not None else split.job_ids(),
        split.failures(),
        regime,
        ratio=1.0,
        seed=seed,
        exclude_pairs=exclude_pairs,
    )
    return positives + negatives


def evaluate(
    scorer: BaseScorer,
    dataset: Dataset,
    records: Optional[Sequence[ApplicationRecord]] = None,
    grouping: str = "overall",
) -> EvalReport:
    """用 scorer 给每条记录打分，按分组计算 AUC；records 缺省为划分内全部申请记录"""
    records = list(dataset.applications if records is None else records)
    if not records:
        raise DataError("评估划分为空")
    scores = scorer.score_pairs([r.pair for r in records])
    return build_report(scores, records, dataset, grouping, scorer.name)


def evaluate_checkpoint(
    checkpoint: Checkpoint,
    dataset: Dataset,
    records: Optional[Sequence[ApplicationRecord]] = None,
    grouping: str = "overall",
    threads: int = 1,
) -> EvalReport:
    scorer = PJFNNScorer(
        checkpoint.model(), checkpoint.job_table, checkpoint.resume_table, dataset.jobs, dataset.resumes, threads=threads
    )
    return evaluate(scorer, dataset, records, grouping)


# ==================== 均值词向量基线 ====================
def mean_word_vector(items: Sequence[Sequence[str]], table: EmbeddingTable) -> np.ndarray:
    """文档内全部已登录词向量的平均；没有已登录词时为零向量"""
    ids = np.concatenate([table.vocab.ids(tokens) for tokens in items]) if items else np.zeros(0, dtype=np.int64)
    ids = ids[ids != 0]
    if ids.size == 0:
        return np.zeros(table.dim, dtype=np.float64)
    return table.vectors[ids].astype(np.float64).mean(axis=0)


def fit_logistic(
    features: np.ndarray,
    labels: np.ndarray,
    l2: float = 1e-4,
    epochs: int = 200,
    lr: float = 0.1,
    seed: int = 0,
) -> Pipeline:
    """特征标准化 + 对数损失 SGD（L2 正则 l2，固定学习率 lr，最多 epochs 轮），同一 seed 结果一致"""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or x.shape[0] != y.shape[0] or x.shape[0] == 0:
        raise ContractError(f"特征 {x.shape} 与标签 {y.shape} 不匹配")
    if np.unique(y).size < 2:
        raise ContractError("逻辑回归训练需要正负两类样本")
    model = Pipeline([
        ("scale", StandardScaler()),
        ("clf", SGDClassifier(
            loss="log_loss", penalty="l2", alpha=l2, max_iter=epochs,
            learning_rate="constant", eta0=lr, random_state=seed,
        )),
    ])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=ConvergenceWarning)
        model.fit(x, y)
    return model


def predict_logistic(model: Pipeline, features: np.ndarray) -> np.ndarray:
    """正类概率"""
    return model.predict_proba(np.asarray(features, dtype=np.float64))[:, 1]


class MeanVectorBaseline(BaseScorer):
    """岗位均值词向量（job_dim）与简历均值词向量（resume_dim）拼接后做逻辑回归"""

    name = "meanvec-lr"

    def __init__(self, dataset: Dataset, job_table: EmbeddingTable, resume_table: EmbeddingTable):
        self.dataset = dataset
        self.tables = {"job": job_table, "resume": resume_table}
        self.classifier: Optional[Pipeline] = None
        self._cache: Dict[Tuple[str, str], np.ndarray] = {}

    def _doc_vector(self, side: str, doc_id: str) -> np.ndarray:
        key = (side, doc_id)
        if key not in self._cache:
            self._cache[key] = mean_word_vector(self.dataset.documents(side)[doc_id].items, self.tables[side])
        return self._cache[key]

    def features(self, pairs: Sequence[tuple]) -> np.ndarray:
        return np.stack([np.concatenate([self._doc_vector("job", j), self._doc_vector("resume", r)]) for j, r in pairs])

    def fit(self, records: Sequence[ApplicationRecord], l2: float = 1e-4, epochs: int = 200, lr: float = 0.1, seed: int = 0):
        labels = np.array([1 if r.is_positive else 0 for r in records])
        self.classifier = fit_logistic(self.features([r.pair for r in records]), labels, l2, epochs, lr, seed)
        return self

    def score_pairs(self, pairs: Sequence[tuple]) -> np.ndarray:
        if self.classifier is None:
            raise ContractError("基线模型尚未训练")
        pairs = list(pairs)
        if not pairs:
            return np.zeros(0)
        return predict_logistic(self.classifier, self.features(pairs))


def baseline_meanvec(
    train_split: Dataset,
    test_split: Dataset,
    job_table: EmbeddingTable,
    resume_table: EmbeddingTable,
    l2: float = 1e-4,
    epochs: int = 200,
    lr: float = 0.1,
    seed: int = 0,
    regime: str = "synthetic",
    test_records: Optional[Sequence[ApplicationRecord]] = None,
    grouping: str = "overall",
) -> EvalReport:
    """
    训练记录：训练划分的成功申请 + 同一负采样方式生成的负样本
    test_records 缺省时按同样方式从测试划分构造，传入时与 PJFNN 共用同一批评估记录
    """
    all_jobs = sorted(train_split.jobs)
    train_records = build_eval_records(train_split, regime, all_jobs, seed)
    if test_records is None:
        test_records = build_eval_records(test_split, regime, all_jobs, seed + 1)
    baseline = MeanVectorBaseline(train_split, job_table, resume_table).fit(train_records, l2, epochs, lr, seed)
    return evaluate(baseline, test_split, test_records, grouping)
