"""
预测模块
新帖子长度的后验预测分布（样本混合）与测试集负对数似然
"""
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from src.core.distributions import log_normal_pdf
from src.models.chain import Chain
from src.models.errors import DataError

PREDICTIONS_FILE = "predictions.csv"


@dataclass(frozen=True, eq=False)
class PredictiveSummary:
    """每个测试帖子的预测均值、50%/95%可信区间与负对数似然"""
    mean: np.ndarray
    lo50: np.ndarray
    hi50: np.ndarray
    lo95: np.ndarray
    hi95: np.ndarray
    nll_per_thread: Optional[np.ndarray] = None  # 提供 y_test 时才有
    y_true: Optional[np.ndarray] = None

    @property
    def n_threads(self) -> int:
        return int(self.mean.shape[0])

    @property
    def nll_total(self) -> Optional[float]:
        if self.nll_per_thread is None:
            return None
        return float(self.nll_per_thread.sum())

    def to_frame(self) -> pd.DataFrame:
        """predictions.csv 的表格形式"""
        n = self.n_threads
        missing = np.full(n, np.nan)
        return pd.DataFrame(
            {
                "thread_id": np.arange(1, n + 1),
                "y_true": self.y_true if self.y_true is not None else missing,
                "mean": self.mean,
                "lo50": self.lo50,
                "hi50": self.hi50,
                "lo95": self.lo95,
                "hi95": self.hi95,
                "nll": self.nll_per_thread if self.nll_per_thread is not None else missing,
            }
        )

    def save(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.10g")


def _components(chain: Chain, p_test: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    各后验样本在各测试帖子上的预测分量

    Returns:
        (N×T* 的均值 p_tᵀb⁽ⁱ⁾, N 维精度 s_y⁽ⁱ⁾)
    """
    records = chain.require_retained()
    p_test = np.asarray(p_test, dtype=float)
    if p_test.ndim != 2:
        raise DataError(f"test participation must be a matrix, got shape {p_test.shape}")
    if p_test.shape[0] != chain.n_users:
        raise DataError(
            f"test participation has {p_test.shape[0]} rows but the chain has {chain.n_users} users",
            index=("rows", p_test.shape[0]),
        )
    coefs = np.stack([r.state.coefficients for r in records])
    precisions = np.array([r.state.noise_precision for r in records])
    return coefs @ p_test, precisions


def _thread_nll(means: np.ndarray, precisions: np.ndarray, y: np.ndarray) -> np.ndarray:
    """-ln[(1/N)·Σ_i N(y_t | m_it, 1/s_i)]，按帖子给出"""
    log_dens = log_normal_pdf(y[None, :], means, precisions[:, None])
    return -(logsumexp(log_dens, axis=0) - math.log(means.shape[0]))


def predict_lengths(
    chain: Chain,
    p_test: np.ndarray,
    rng: np.random.Generator,
    y_test: Optional[np.ndarray] = None,
) -> PredictiveSummary:
    """
    帖子长度的后验预测

    每个保留样本、每个测试帖子各抽一个 y 用于区间估计；均值与NLL按混合分布精确计算。

    Args:
        chain: 链（预烧期后至少一条记录）
        p_test: U×T* 测试参与矩阵
        rng: 随机数生成器
        y_test: 测试帖子的真实长度（可选）

    Returns:
        PredictiveSummary

    Raises:
        DataError: 预烧期后为空或维度不匹配
    """
    means, precisions = _components(chain, p_test)
    draws = means + rng.standard_normal(means.shape) / np.sqrt(precisions)[:, None]
    lo95, lo50, hi50, hi95 = np.quantile(draws, [0.025, 0.25, 0.75, 0.975], axis=0)

    nll = None
    y_true = None
    if y_test is not None:
        y_true = _check_lengths(y_test, means.shape[1])
        nll = _thread_nll(means, precisions, y_true)

    return PredictiveSummary(
        mean=means.mean(axis=0),
        lo50=lo50,
        hi50=hi50,
        lo95=lo95,
        hi95=hi95,
        nll_per_thread=nll,
        y_true=y_true,
    )


def negative_loglik(chain: Chain, p_test: np.ndarray, y_test: np.ndarray) -> float:
    """
    测试集负对数似然 -Σ_t ln[(1/N)·Σ_i N(y*_t | p_tᵀb⁽ⁱ⁾, 1/s_y⁽ⁱ⁾)]

    Raises:
        DataError: 预烧期后为空、维度不匹配或 y_test 长度不对
    """
    means, precisions = _components(chain, p_test)
    y = _check_lengths(y_test, means.shape[1])
    return float(_thread_nll(means, precisions, y).sum())


def _check_lengths(y_test: np.ndarray, n_threads: int) -> np.ndarray:
    y = np.asarray(y_test, dtype=float).reshape(-1)
    if y.shape[0] != n_threads:
        raise DataError(
            f"y_test has {y.shape[0]} entries but P_test has {n_threads} columns",
            index=("columns", y.shape[0]),
        )
    return y
