"""
负样本采样策略
  synthetic: 保留成功申请的简历，随机换一个不同的岗位（不会与任何已知成功对重合）
  real:      直接从失败申请记录中均匀抽取
"""
from typing import Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from base_classes import BaseNegativeStrategy
from config import logger
from data import ApplicationRecord
from errors import SamplingError


def negative_count(n_positives: int, ratio: float) -> int:
    return int(round(ratio * n_positives))


class SyntheticNegativeStrategy(BaseNegativeStrategy):
    mode = "synthetic"

    def __init__(self, job_ids: Sequence[str], exclude_pairs: Optional[Iterable[Tuple[str, str]]] = None):
        self.job_ids = sorted(set(job_ids))
        if len(self.job_ids) < 2:
            raise SamplingError(f"synthetic 模式至少需要 2 个不同岗位，实际 {len(self.job_ids)}")
        self.exclude: Set[Tuple[str, str]] = set(exclude_pairs or ())

    def _replacement(self, positive: ApplicationRecord, exclude: Set[Tuple[str, str]], rng: np.random.Generator) -> str:
        n = len(self.job_ids)
        for _ in range(32):
            job = self.job_ids[int(rng.integers(n))]
            if job != positive.job_id and (job, positive.resume_id) not in exclude:
                return job
        candidates = [j for j in self.job_ids if j != positive.job_id and (j, positive.resume_id) not in exclude]
        if not candidates:
            raise SamplingError(f"synthetic 模式下简历 {positive.resume_id} 找不到可替换的岗位")
        return candidates[int(rng.integers(len(candidates)))]

    def sample(self, positives: Sequence[ApplicationRecord], ratio: float, rng: np.random.Generator) -> List[ApplicationRecord]:
        if not positives:
            raise SamplingError("synthetic 模式需要至少一条成功申请")
        exclude = self.exclude | {p.pair for p in positives}
        n = negative_count(len(positives), ratio)
        rounds = -(-n // len(positives))
        order = np.concatenate([rng.permutation(len(positives)) for _ in range(rounds)])[:n] if n else []
        out = []
        for i in order:
            base = positives[int(i)]
            job = self._replacement(base, exclude, rng)
            out.append(ApplicationRecord(job_id=job, resume_id=base.resume_id, label="failure", year=base.year))
        return out


class RealNegativeStrategy(BaseNegativeStrategy):
    mode = "real"

    def __init__(self, failures: Sequence[ApplicationRecord]):
        self.failures = list(failures)
        if not self.failures:
            raise SamplingError("real 模式需要至少一条失败申请记录")

    def sample(self, positives: Sequence[ApplicationRecord], ratio: float, rng: np.random.Generator) -> List[ApplicationRecord]:
        n = negative_count(len(positives), ratio)
        pool = len(self.failures)
        if n > pool:
            logger.warning(f"失败记录仅 {pool} 条，少于所需负样本 {n}，改为有放回抽样")
            picks = rng.integers(pool, size=n)
        else:
            picks = rng.choice(pool, size=n, replace=False)
        return [self.failures[int(i)] for i in picks]


NEGATIVE_MODE_MAP = {
    "synthetic": SyntheticNegativeStrategy,
    "real": RealNegativeStrategy,
}


def build_strategy(
    mode: str,
    job_ids: Sequence[str] = (),
    failures: Sequence[ApplicationRecord] = (),
    exclude_pairs: Optional[Iterable[Tuple[str, str]]] = None,
) -> BaseNegativeStrategy:
    if mode not in NEGATIVE_MODE_MAP:
        raise SamplingError(f"未知的负采样模式: {mode}")
    if mode == "synthetic":
        return SyntheticNegativeStrategy(job_ids, exclude_pairs)
    return RealNegativeStrategy(failures)


def sample_negatives(
    positives: Sequence[ApplicationRecord],
    jobs: Sequence[str],
    failures: Sequence[ApplicationRecord],
    mode: str,
    ratio: float = 1.0,
    seed: int = 0,
    exclude_pairs: Optional[Iterable[Tuple[str, str]]] = None,
) -> List[ApplicationRecord]:
    """按模式生成负样本；同一 seed 结果一致，正样本集合不受影响"""
    if ratio <= 0:
        raise SamplingError(f"{mode} 模式的负样本比例必须 > 0，实际 {ratio}")
    strategy = build_strategy(mode, jobs, failures, exclude_pairs)
    return strategy.sample(positives, ratio, np.random.default_rng(seed))
