"""
马尔可夫链模型模块
记录下来的状态序列及其运行元数据
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List

import numpy as np

from src.models.config import ChainConfig
from src.models.errors import DataError
from src.models.state import ModelState

CHAIN_VERSION = 1


@dataclass
class ChainRecord:
    """一条记录：迭代号 + 当时的状态"""
    iteration: int
    state: ModelState

    def to_dict(self) -> Dict[str, Any]:
        return {"iter": self.iteration, **self.state.to_dict()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ChainRecord":
        return cls(iteration=int(data["iter"]), state=ModelState.from_dict(data))


@dataclass
class Chain:
    """
    抽稀后的状态序列（包含预烧期记录）

    iteration <= burn_in 的记录属于预烧期
    """
    config: ChainConfig
    dataset_digest: str
    records: List[ChainRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n_users(self) -> int:
        return int(self.records[0].state.assignments.shape[0]) if self.records else 0

    def retained(self) -> List[ChainRecord]:
        """预烧期之后的记录"""
        return [r for r in self.records if r.iteration > self.config.burn_in]

    def require_retained(self) -> List[ChainRecord]:
        """
        Raises:
            DataError: 预烧期后没有记录
        """
        kept = self.retained()
        if not kept:
            raise DataError("empty post-burn-in chain")
        return kept

    def trace(self, name: str, retained_only: bool = False) -> np.ndarray:
        """
        提取标量轨迹

        Args:
            name: s_y / alpha / n_clusters / mu0_f / r0_f / w0_f / beta0_f / beta0_a /
                  b_mean / mu0_a[j]
            retained_only: 只取预烧期之后

        Returns:
            与记录一一对应的数组
        """
        records = self.retained() if retained_only else self.records
        return np.array([_scalar(r.state, name) for r in records], dtype=float)

    def iterations(self, retained_only: bool = False) -> np.ndarray:
        records = self.retained() if retained_only else self.records
        return np.array([r.iteration for r in records], dtype=np.int64)


def _scalar(state: ModelState, name: str) -> float:
    if name == "s_y":
        return state.noise_precision
    if name == "alpha":
        return state.alpha
    if name == "n_clusters":
        return float(state.n_active)
    if name == "b_mean":
        return float(state.coefficients.mean())
    if name == "mu0_f":
        return state.behavior_hypers.mu0
    if name == "r0_f":
        return state.behavior_hypers.r0
    if name == "w0_f":
        return state.behavior_hypers.w0
    if name == "beta0_f":
        return state.behavior_hypers.beta0
    if name == "beta0_a":
        return state.feature_hypers.beta0
    if name.startswith("mu0_a[") and name.endswith("]"):
        return float(state.feature_hypers.mu0[int(name[6:-1])])
    raise KeyError(f"unknown trace variable: {name}")
