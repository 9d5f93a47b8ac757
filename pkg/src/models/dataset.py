"""
数据集模型模块
观测数据（用户特征、参与矩阵、帖子长度）的定义、校验、经验矩与CSV读写
"""
import hashlib
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from scipy import linalg

from src.models.errors import DataError
from src.utils.logger import get_logger

logger = get_logger(__name__)

FEATURES_FILE = "features.csv"
PARTICIPATION_FILE = "participation.csv"
LENGTHS_FILE = "lengths.csv"
LABELS_FILE = "labels.csv"


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    观测数据

    features 为 U×D 用户特征矩阵，participation 为 U×T 的0/1参与矩阵
    （P[u][t]=1 表示用户u出现在帖子t的前m条回复中），lengths 为T个帖子的长度
    """
    features: np.ndarray        # U×D
    participation: np.ndarray   # U×T
    lengths: np.ndarray         # T

    @property
    def n_users(self) -> int:
        return int(self.features.shape[0])

    @property
    def n_dims(self) -> int:
        return int(self.features.shape[1])

    @property
    def n_threads(self) -> int:
        return int(self.participation.shape[1])

    @cached_property
    def gram(self) -> np.ndarray:
        """P·Pᵀ（U×U），系数后验精度的数据项"""
        return self.participation @ self.participation.T

    @cached_property
    def weighted_lengths(self) -> np.ndarray:
        """P·y（U维）"""
        return self.participation @ self.lengths

    def with_threads(self, participation: np.ndarray, lengths: np.ndarray) -> "Dataset":
        """同一批用户、新的一组帖子（测试集）"""
        return validate_dataset(Dataset(self.features, participation, lengths))


@dataclass(frozen=True, eq=False)
class DataMoments:
    """用于确定超先验中心的数据统计量"""
    feat_mean: np.ndarray       # μ_a，D维
    feat_cov: np.ndarray        # Σ_a，D×D
    coef_mle: np.ndarray        # b̂，U维
    coef_mle_mean: float        # μ_b̂
    coef_mle_var: float         # σ_b̂²
    length_var: float           # σ_0²

    @cached_property
    def feat_precision(self) -> np.ndarray:
        """Λ_a = Σ_a⁻¹"""
        return linalg.inv(self.feat_cov)


def validate_dataset(d: Dataset) -> Dataset:
    """
    校验数据集

    Args:
        d: 待校验数据集

    Returns:
        原样返回的数据集

    Raises:
        DataError: 维度不一致、非0/1参与值或非有限值，错误中给出出错位置
    """
    a, p, y = d.features, d.participation, d.lengths

    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise DataError(f"features must be a non-empty U×D matrix, got shape {a.shape}")
    if p.ndim != 2:
        raise DataError(f"participation must be a U×T matrix, got shape {p.shape}")
    if y.ndim != 1:
        raise DataError(f"lengths must be a vector, got shape {y.shape}")

    if p.shape[0] != a.shape[0]:
        raise DataError(
            f"dimension mismatch: participation has {p.shape[0]} rows, features has {a.shape[0]}",
            index=("rows", p.shape[0]),
        )
    if p.shape[1] != y.shape[0]:
        raise DataError(
            f"dimension mismatch: participation has {p.shape[1]} columns, lengths has {y.shape[0]}",
            index=("columns", p.shape[1]),
        )

    bad = np.argwhere(~np.isfinite(a))
    if bad.size:
        u, j = (int(x) for x in bad[0])
        raise DataError(f"non-finite feature value at user {u}, dimension {j}", index=(u, j))

    bad = np.argwhere(~np.isfinite(y))
    if bad.size:
        t = int(bad[0][0])
        raise DataError(f"non-finite length at thread {t}", index=t)

    bad = np.argwhere((p != 0) & (p != 1))
    if bad.size:
        u, t = (int(x) for x in bad[0])
        raise DataError(
            f"non-binary participation entry {p[u, t]!r} at user {u}, thread {t}", index=(u, t)
        )

    return d


def make_dataset(features, participation, lengths) -> Dataset:
    """从任意数组构造并校验数据集"""
    a = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(lengths, dtype=float).reshape(-1)
    p = np.asarray(participation, dtype=float)
    if p.size == 0:
        p = p.reshape(a.shape[0], 0)
    return validate_dataset(Dataset(a, p, y))


def _feature_moments(d: Dataset):
    """特征的样本均值与样本协方差（至少两个用户）"""
    feat_mean = d.features.mean(axis=0)
    feat_cov = np.atleast_2d(np.cov(d.features, rowvar=False, ddof=1))
    zero = np.flatnonzero(np.diag(feat_cov) <= 0.0)
    if zero.size:
        raise DataError(f"degenerate feature dimension {int(zero[0])}", index=int(zero[0]))
    return feat_mean, feat_cov


def _ridge_coefficients(d: Dataset, ridge_lambda: float) -> np.ndarray:
    system = d.gram + ridge_lambda * np.eye(d.n_users)
    return linalg.solve(system, d.weighted_lengths, assume_a="pos")


def _length_variance(d: Dataset) -> float:
    length_var = float(np.var(d.lengths, ddof=1))
    if length_var <= 0.0:
        raise DataError("degenerate thread lengths: zero variance")
    return length_var


def empirical_moments(d: Dataset, ridge_lambda: float = 0.01) -> DataMoments:
    """
    计算数据驱动的超先验中心

    b̂ = (P·Pᵀ + λI)⁻¹·P·y 是以 Pᵀ 为设计矩阵的岭回归解

    Args:
        d: 已校验的数据集
        ridge_lambda: 岭回归参数λ

    Returns:
        DataMoments

    Raises:
        DataError: 没有帖子、用户不足或某一维方差为零
    """
    if ridge_lambda <= 0:
        raise DataError(f"ridge lambda must be positive, got {ridge_lambda}")
    if d.n_threads == 0:
        raise DataError("no threads: coefficient MLE undefined")
    if d.n_threads < 2:
        raise DataError("need at least two threads to estimate the length variance")
    if d.n_users < 2:
        raise DataError("need at least two users to estimate feature covariance")

    feat_mean, feat_cov = _feature_moments(d)
    coef_mle = _ridge_coefficients(d, ridge_lambda)
    coef_var = float(np.var(coef_mle, ddof=1))
    if coef_var <= 0.0:
        raise DataError("degenerate coefficient estimates: zero variance")
    length_var = _length_variance(d)

    return DataMoments(
        feat_mean=feat_mean,
        feat_cov=feat_cov,
        coef_mle=coef_mle,
        coef_mle_mean=float(coef_mle.mean()),
        coef_mle_var=coef_var,
        length_var=length_var,
    )


def chain_moments(d: Dataset, ridge_lambda: float = 0.01) -> DataMoments:
    """
    链初始化与超先验用的统计量

    T ≥ 2 且 U ≥ 2 时即 empirical_moments。帖子不足两个时行为视图没有可用的矩，
    改用单位值（μ_b̂=0，σ_b̂²=σ_0²=1，b̂为岭回归解，T=0时全为0），
    此时链就是行为视图的先验采样器；只有一个用户时特征协方差取单位阵。

    Raises:
        DataError: λ非正，或至少两个用户时某一特征维方差为零
    """
    if ridge_lambda <= 0:
        raise DataError(f"ridge lambda must be positive, got {ridge_lambda}")
    if d.n_threads >= 2 and d.n_users >= 2:
        return empirical_moments(d, ridge_lambda)

    logger.warning(
        f"T={d.n_threads}, U={d.n_users}: 数据不足以估计全部经验矩，缺失部分取单位值"
    )
    if d.n_users >= 2:
        feat_mean, feat_cov = _feature_moments(d)
    else:
        feat_mean, feat_cov = d.features.mean(axis=0), np.eye(d.n_dims)

    if d.n_threads >= 2:
        coef_mle = _ridge_coefficients(d, ridge_lambda)
        coef_var = float(np.var(coef_mle, ddof=1)) if d.n_users >= 2 else 0.0
        return DataMoments(
            feat_mean=feat_mean,
            feat_cov=feat_cov,
            coef_mle=coef_mle,
            coef_mle_mean=float(coef_mle.mean()),
            coef_mle_var=coef_var if coef_var > 0.0 else 1.0,
            length_var=_length_variance(d),
        )
    return DataMoments(
        feat_mean=feat_mean,
        feat_cov=feat_cov,
        coef_mle=_ridge_coefficients(d, ridge_lambda),
        coef_mle_mean=0.0,
        coef_mle_var=1.0,
        length_var=1.0,
    )


def dataset_digest(d: Dataset) -> str:
    """
    数据集内容指纹（sha256）

    维度与三个数组的规范字节共同参与哈希
    """
    hasher = hashlib.sha256()
    hasher.update(f"{d.n_users}x{d.n_dims}x{d.n_threads}".encode())
    for arr in (d.features, d.participation, d.lengths):
        hasher.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return hasher.hexdigest()


# ==================== CSV 读写 ====================

def save_dataset(directory: Path, d: Dataset) -> None:
    """把数据集写成 features.csv / participation.csv / lengths.csv"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    pd.DataFrame(d.features, columns=[f"f{j + 1}" for j in range(d.n_dims)]).to_csv(
        directory / FEATURES_FILE, index=False, float_format="%.17g"
    )
    if d.n_threads:
        pd.DataFrame(
            d.participation.astype(int), columns=[f"t{t + 1}" for t in range(d.n_threads)]
        ).to_csv(directory / PARTICIPATION_FILE, index=False)
    else:
        (directory / PARTICIPATION_FILE).write_text("", encoding="utf-8")
    pd.DataFrame({"y": d.lengths}).to_csv(
        directory / LENGTHS_FILE, index=False, float_format="%.17g"
    )


def _read_csv(path: Path) -> pd.DataFrame:
    if not path.exists():
        raise DataError(f"missing dataset file: {path}", index=path.name)
    if path.stat().st_size == 0:
        return pd.DataFrame()
    try:
        return pd.read_csv(path, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"cannot parse {path.name}: {e}", index=path.name) from e


def load_dataset(directory: Path) -> Dataset:
    """
    从目录读取数据集

    Args:
        directory: 包含三个CSV文件的目录

    Returns:
        校验后的Dataset

    Raises:
        DataError: 文件缺失、无法解析或数据不合法
    """
    directory = Path(directory)
    features = _read_csv(directory / FEATURES_FILE).to_numpy(dtype=float)
    lengths_frame = _read_csv(directory / LENGTHS_FILE)
    lengths = lengths_frame["y"].to_numpy(dtype=float) if "y" in lengths_frame else np.empty(0)
    participation = _read_csv(directory / PARTICIPATION_FILE).to_numpy(dtype=float)
    if participation.size == 0:
        participation = np.zeros((features.shape[0], 0))

    d = validate_dataset(Dataset(features, participation, lengths))
    logger.debug(f"已加载数据集 {directory}: U={d.n_users}, D={d.n_dims}, T={d.n_threads}")
    return d


def save_labels(path: Path, labels: np.ndarray) -> None:
    """写出真实标签 labels.csv（列名 z）"""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({"z": np.asarray(labels, dtype=int)}).to_csv(path, index=False)


def load_labels(path: Path, n_users: Optional[int] = None) -> np.ndarray:
    """读取 labels.csv"""
    frame = _read_csv(Path(path))
    if "z" not in frame:
        raise DataError(f"{Path(path).name} has no column 'z'", index=Path(path).name)
    labels = frame["z"].to_numpy(dtype=int)
    if n_users is not None and labels.shape[0] != n_users:
        raise DataError(
            f"labels length {labels.shape[0]} does not match {n_users} users", index="z"
        )
    return labels
