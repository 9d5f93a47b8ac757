"""
聚类汇总模块
两两后验共簇概率矩阵、Dahl最小二乘聚类、调整兰德指数以及结果文件写出
"""
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd
from sklearn.metrics import adjusted_rand_score

from src.models.chain import Chain
from src.models.errors import DataError
from src.utils.logger import get_logger

logger = get_logger(__name__)

# 稠密U×U矩阵的用户数上限
MAX_PAIRWISE_USERS = 2000

PAIRWISE_FILE = "pairwise.csv"
CLUSTERING_FILE = "clustering.csv"
METRICS_FILE = "metrics.json"


@dataclass(frozen=True, eq=False)
class PairwiseMatrix:
    """
    π̂：每对用户在保留样本中同簇的比例

    以整数计数保存，保证对称且对角线严格为1
    """
    counts: np.ndarray      # U×U 同簇次数
    n_samples: int

    @property
    def probs(self) -> np.ndarray:
        return self.counts / self.n_samples

    @property
    def n_users(self) -> int:
        return int(self.counts.shape[0])


def _co_membership(z: np.ndarray) -> np.ndarray:
    """δ_ij(z) = 1[z_i = z_j]"""
    return (z[:, None] == z[None, :]).astype(np.int64)


def pairwise_matrix(chain: Chain) -> PairwiseMatrix:
    """
    统计保留样本的两两共簇概率

    Raises:
        DataError: 预烧期后为空，或用户数超过稠密矩阵上限
    """
    records = chain.require_retained()
    n_users = chain.n_users
    if n_users > MAX_PAIRWISE_USERS:
        raise DataError(
            f"pairwise matrix for {n_users} users exceeds the dense limit of {MAX_PAIRWISE_USERS}",
            index=n_users,
        )
    counts = np.zeros((n_users, n_users), dtype=np.int64)
    for r in records:
        counts += _co_membership(r.state.assignments)
    return PairwiseMatrix(counts=counts, n_samples=len(records))


def clustering_loss(z: np.ndarray, pm: PairwiseMatrix) -> float:
    """Σ_ij (δ_ij(z) - π̂_ij)²"""
    diff = _co_membership(np.asarray(z)) - pm.probs
    return float(np.sum(diff * diff))


def dahl_clustering(chain: Chain, pm: Optional[PairwiseMatrix] = None) -> np.ndarray:
    """
    Dahl最小二乘聚类：取与 π̂ 平方误差最小的保留样本

    Args:
        chain: 链
        pm: 已算好的 π̂，None时现算

    Returns:
        1..c 的簇标签；损失相同时取最早的样本
    """
    records = chain.require_retained()
    if pm is None:
        pm = pairwise_matrix(chain)
    # 整数形式的损失 Σ(N·δ - counts)²，避免浮点误差影响并列判断
    n = pm.n_samples
    best_loss: Optional[int] = None
    best = records[0]
    for r in records:
        diff = n * _co_membership(r.state.assignments) - pm.counts
        loss = int(np.sum(diff * diff))
        if best_loss is None or loss < best_loss:
            best_loss, best = loss, r
    logger.debug(f"Dahl聚类选中第 {best.iteration} 次迭代, c={best.state.n_active}")
    return best.state.labels.copy()


def adjusted_rand_index(z_true, z_est) -> float:
    """
    调整兰德指数

    Raises:
        DataError: 两组标签长度不同
    """
    a = np.asarray(z_true).reshape(-1)
    b = np.asarray(z_est).reshape(-1)
    if a.shape[0] != b.shape[0]:
        raise DataError(
            f"label length mismatch: {a.shape[0]} vs {b.shape[0]}", index=("length", b.shape[0])
        )
    return float(adjusted_rand_score(a, b))


def posterior_mode_clusters(chain: Chain) -> int:
    """保留样本中出现最多的非空簇数（并列取较小值）"""
    counts = np.array([r.state.n_active for r in chain.require_retained()])
    values, freq = np.unique(counts, return_counts=True)
    return int(values[np.argmax(freq)])


# ==================== 写出 ====================

def save_pairwise(path: Path, pm: PairwiseMatrix) -> None:
    """稠密矩阵，行列按用户顺序"""
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(pm.probs).to_csv(path, index=False, header=False, float_format="%.10g")


def save_clustering(path: Path, labels: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({"user_id": np.arange(1, len(labels) + 1), "label": labels}).to_csv(
        path, index=False
    )


def save_metrics(path: Path, metrics: Dict[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(metrics, f, indent=2, sort_keys=True)


def summarize_chain(
    chain: Chain,
    out_dir: Path,
    z_true: Optional[np.ndarray] = None,
    nll: Optional[float] = None,
) -> Dict[str, Any]:
    """
    写出 pairwise.csv、clustering.csv 与 metrics.json

    Args:
        chain: 链
        out_dir: 输出目录
        z_true: 真实标签（可选，用于ARI）
        nll: 测试集负对数似然（可选）

    Returns:
        metrics 字典 {ari, nll, n_clusters_posterior_mode}
    """
    pm = pairwise_matrix(chain)
    labels = dahl_clustering(chain, pm)
    save_pairwise(out_dir / PAIRWISE_FILE, pm)
    save_clustering(out_dir / CLUSTERING_FILE, labels)

    metrics: Dict[str, Any] = {
        "ari": adjusted_rand_index(z_true, labels) if z_true is not None else None,
        "nll": nll,
        "n_clusters_posterior_mode": posterior_mode_clusters(chain),
        "n_clusters_estimate": int(np.unique(labels).size),
    }
    save_metrics(out_dir / METRICS_FILE, metrics)
    return metrics


def load_pairwise(path: Path) -> np.ndarray:
    """读回 pairwise.csv"""
    return pd.read_csv(path, header=None, float_precision="round_trip").to_numpy(dtype=float)
