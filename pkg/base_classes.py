from abc import ABC, abstractmethod
from typing import List, Sequence

import numpy as np


class BaseScorer(ABC):
    """岗位-简历匹配打分器：分数越高越匹配"""

    name: str = "scorer"

    @abstractmethod
    def score_pairs(self, pairs: Sequence[tuple]) -> np.ndarray:
        """pairs 为 (job_id, resume_id) 序列，返回同长度的分数数组"""
        pass


class BaseNegativeStrategy(ABC):
    mode: str = ""

    @abstractmethod
    def sample(self, positives: Sequence, ratio: float, rng: np.random.Generator) -> List:
        pass
