"""
模型状态模块
一次Gibbs快照：簇分配、两个视图的簇参数、用户系数、噪声精度、超参数与α
"""
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Dict, List, Optional

import numpy as np
from scipy import linalg

from src.models.errors import NotSPDError


def cholesky_lower(matrix: np.ndarray, what: str = "precision") -> np.ndarray:
    """
    对称化后做Cholesky分解

    Args:
        matrix: 对称正定矩阵
        what: 出错时报告的矩阵名称

    Returns:
        下三角因子L，matrix = L·Lᵀ

    Raises:
        NotSPDError: 矩阵不是对称正定的
    """
    sym = 0.5 * (matrix + matrix.T)
    try:
        return linalg.cholesky(sym, lower=True)
    except (linalg.LinAlgError, ValueError) as e:
        raise NotSPDError(what) from e


@dataclass(frozen=True, eq=False)
class FeatureClusterParams:
    """
    特征视图的簇参数：均值μ与精度矩阵S

    factor 是采样时得到的下三角因子（S = F·Fᵀ）；S接近奇异时
    重新分解可能失败，因此有因子时一律使用因子
    """
    mean: np.ndarray                        # D维
    precision: np.ndarray                   # D×D，对称半正定
    factor: Optional[np.ndarray] = None     # D×D 下三角，对角线为正

    @cached_property
    def chol(self) -> np.ndarray:
        """精度矩阵的下三角Cholesky因子"""
        if self.factor is not None:
            return self.factor
        return cholesky_lower(self.precision, "feature cluster precision")

    @cached_property
    def half_logdet(self) -> float:
        """½·ln|S|"""
        return float(np.sum(np.log(np.diag(self.chol))))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mu_a": self.mean.tolist(),
            "S_a": self.precision.tolist(),
            "L_a": self.chol.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FeatureClusterParams":
        factor = data.get("L_a")
        return cls(
            mean=np.asarray(data["mu_a"], dtype=float),
            precision=np.asarray(data["S_a"], dtype=float),
            factor=None if factor is None else np.asarray(factor, dtype=float),
        )


@dataclass(frozen=True)
class BehaviorClusterParams:
    """行为视图的簇参数：一维高斯的均值与精度"""
    mean: float
    precision: float        # > 0

    def __post_init__(self) -> None:
        if not self.precision > 0:
            raise NotSPDError("behavior cluster precision")


@dataclass(frozen=True, eq=False)
class FeatureHypers:
    """特征视图所有簇共享的超参数"""
    mu0: np.ndarray         # μ_0，D维
    R0: np.ndarray          # R_0，D×D
    W0: np.ndarray          # W_0，D×D
    beta0: float            # β_0 > D-1

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mu0": self.mu0.tolist(),
            "R0": self.R0.tolist(),
            "W0": self.W0.tolist(),
            "beta0": self.beta0,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FeatureHypers":
        return cls(
            mu0=np.asarray(data["mu0"], dtype=float),
            R0=np.asarray(data["R0"], dtype=float),
            W0=np.asarray(data["W0"], dtype=float),
            beta0=float(data["beta0"]),
        )


@dataclass(frozen=True)
class BehaviorHypers:
    """行为视图所有簇共享的超参数"""
    mu0: float
    r0: float               # > 0
    w0: float               # > 0
    beta0: float            # > 0

    def to_dict(self) -> Dict[str, Any]:
        return {"mu0": self.mu0, "r0": self.r0, "w0": self.w0, "beta0": self.beta0}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BehaviorHypers":
        return cls(**{k: float(data[k]) for k in ("mu0", "r0", "w0", "beta0")})


@dataclass
class ModelState:
    """
    Gibbs采样的一个状态

    assignments 使用 0..c-1 的簇下标，序列化时写成 1..c 的标签。
    feature_params 与 behavior_params 按簇下标对齐。
    """
    assignments: np.ndarray                             # z，U维整数
    feature_params: List[FeatureClusterParams]
    behavior_params: List[BehaviorClusterParams]
    coefficients: np.ndarray                            # b，U维
    noise_precision: float                              # s_y
    feature_hypers: FeatureHypers
    behavior_hypers: BehaviorHypers
    alpha: float
    counts: np.ndarray = field(init=False, repr=False)  # 每个簇的人数

    def __post_init__(self) -> None:
        self.assignments = np.asarray(self.assignments, dtype=np.int64)
        self.counts = np.bincount(self.assignments, minlength=len(self.feature_params))

    @property
    def n_clusters(self) -> int:
        return len(self.feature_params)

    @property
    def n_active(self) -> int:
        """非空簇个数"""
        return int(np.count_nonzero(self.counts))

    @property
    def labels(self) -> np.ndarray:
        """1..c 的簇标签"""
        return self.assignments + 1

    def copy(self) -> "ModelState":
        """浅拷贝（参数对象不可变，只复制数组与列表）"""
        return replace(
            self,
            assignments=self.assignments.copy(),
            feature_params=list(self.feature_params),
            behavior_params=list(self.behavior_params),
            coefficients=self.coefficients.copy(),
        )

    def members(self, k: int) -> np.ndarray:
        """簇k的成员下标"""
        return np.flatnonzero(self.assignments == k)

    def compact(self) -> None:
        """删除空簇并把标签压缩为 0..c-1（保持原有顺序）"""
        keep = np.flatnonzero(self.counts > 0)
        if keep.size == self.n_clusters:
            return
        remap = np.full(self.n_clusters, -1, dtype=np.int64)
        remap[keep] = np.arange(keep.size)
        self.assignments = remap[self.assignments]
        self.feature_params = [self.feature_params[k] for k in keep]
        self.behavior_params = [self.behavior_params[k] for k in keep]
        self.counts = self.counts[keep]

    def validate(self, allow_empty: bool = False) -> None:
        """
        检查状态不变量

        Args:
            allow_empty: 固定K模型允许空簇

        Raises:
            ValueError: 不变量被破坏
        """
        c = self.n_clusters
        if len(self.behavior_params) != c:
            raise ValueError(
                f"params misaligned: {c} feature clusters vs {len(self.behavior_params)} behavior"
            )
        if self.assignments.size and (self.assignments.min() < 0 or self.assignments.max() >= c):
            raise ValueError("assignment refers to an inactive cluster")
        counts = np.bincount(self.assignments, minlength=c)
        if not np.array_equal(counts, self.counts):
            raise ValueError("cluster counts out of sync with assignments")
        if not allow_empty and np.any(counts == 0):
            raise ValueError("empty active cluster")
        if not (self.noise_precision > 0 and self.alpha > 0):
            raise ValueError("noise precision and alpha must be positive")

    def to_dict(self) -> Dict[str, Any]:
        """链文件中一条记录的主体"""
        return {
            "z": self.labels.tolist(),
            "b": self.coefficients.tolist(),
            "s_y": self.noise_precision,
            "alpha": self.alpha,
            "clusters": [
                {**fp.to_dict(), "mu_f": bp.mean, "s_f": bp.precision}
                for fp, bp in zip(self.feature_params, self.behavior_params)
            ],
            "hypers": {
                "feature": self.feature_hypers.to_dict(),
                "behavior": self.behavior_hypers.to_dict(),
            },
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelState":
        clusters = data["clusters"]
        return cls(
            assignments=np.asarray(data["z"], dtype=np.int64) - 1,
            feature_params=[FeatureClusterParams.from_dict(c) for c in clusters],
            behavior_params=[
                BehaviorClusterParams(mean=float(c["mu_f"]), precision=float(c["s_f"]))
                for c in clusters
            ],
            coefficients=np.asarray(data["b"], dtype=float),
            noise_precision=float(data["s_y"]),
            feature_hypers=FeatureHypers.from_dict(data["hypers"]["feature"]),
            behavior_hypers=BehaviorHypers.from_dict(data["hypers"]["behavior"]),
            alpha=float(data["alpha"]),
        )
