"""
诊断模块
自相关时间、有效样本量、Geweke收敛检验、簇数直方图与轨迹导出
"""
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from src.models.chain import Chain
from src.models.errors import DataError
from src.utils.logger import get_logger

logger = get_logger(__name__)

MAX_LAG = 1000
GEWEKE_MIN_LENGTH = 100
# Bartlett窗宽占片段长度的比例
BARTLETT_WIDTH_FRAC = 0.1

DIAGNOSTICS_FILE = "diagnostics.json"
TRACES_FILE = "traces.csv"
TRACE_COLUMNS = ["s_y", "alpha", "mu0_f", "beta0_a", "beta0_f"]


def _as_series(series, min_length: int = 2) -> np.ndarray:
    x = np.asarray(series, dtype=float).reshape(-1)
    if x.shape[0] < min_length:
        raise DataError(f"series too short: {x.shape[0]} < {min_length}", index=x.shape[0])
    if not np.all(np.isfinite(x)):
        raise DataError("series contains non-finite values")
    if np.ptp(x) == 0.0:
        raise DataError("zero variance")
    return x


def autocorrelation(series) -> np.ndarray:
    """
    样本自相关 ρ_0..ρ_{n-1}（FFT计算，除以n·γ_0）

    Raises:
        DataError: 序列过短或方差为零
    """
    x = _as_series(series)
    n = x.shape[0]
    xc = x - x.mean()
    f = np.fft.rfft(xc, n=2 * n)
    acov = np.fft.irfft(f * np.conj(f), n=2 * n)[:n]
    return acov / acov[0]


def autocorrelation_time(
    series,
    max_lag: int = MAX_LAG,
    noise_band: Optional[float] = 2.0,
) -> float:
    """
    积分自相关时间 τ = 1 + 2·Σ|ρ_n|

    求和上限为 min(max_lag, N-1)；noise_band 不为None时，
    在 |ρ_n| 第一次落入 ±noise_band/√N 的滞后处截断（该滞后不计入）。

    Args:
        series: 标量序列
        max_lag: 最大滞后
        noise_band: 白噪声带宽（以 1/√N 为单位），None表示不截断

    Returns:
        τ ≥ 1
    """
    rho = autocorrelation(series)
    n = rho.shape[0]
    lag_limit = min(max_lag, n - 1)
    abs_rho = np.abs(rho[1 : lag_limit + 1])
    if noise_band is not None:
        inside = np.flatnonzero(abs_rho < noise_band / math.sqrt(n))
        if inside.size:
            abs_rho = abs_rho[: inside[0]]
    return float(1.0 + 2.0 * abs_rho.sum())


def effective_sample_size(series, burn_in: int = 0, **tau_kwargs) -> float:
    """
    有效样本量 (N - burn_in)/τ，τ 在预烧期之后的片段上计算

    Args:
        series: 完整序列
        burn_in: 丢弃的前缀长度（按序列元素计）
    """
    post = np.asarray(series, dtype=float).reshape(-1)[burn_in:]
    if post.shape[0] < 2:
        raise DataError(f"need at least 2 post-burn-in values, got {post.shape[0]}")
    return float(post.shape[0] / autocorrelation_time(post, **tau_kwargs))


def spectral_variance_of_mean(segment: np.ndarray) -> float:
    """
    片段均值的方差：零频谱密度/长度，Bartlett窗宽为 0.1·长度
    """
    n = segment.shape[0]
    width = max(1, int(BARTLETT_WIDTH_FRAC * n))
    xc = segment - segment.mean()
    f = np.fft.rfft(xc, n=2 * n)
    acov = np.fft.irfft(f * np.conj(f), n=2 * n)[: width + 1] / n
    weights = 1.0 - np.arange(1, width + 1) / (width + 1.0)
    s0 = acov[0] + 2.0 * float(np.dot(weights, acov[1:]))
    return max(s0, 0.0) / n


def geweke_z(series, frac_a: float = 0.1, frac_b: float = 0.5) -> float:
    """
    Geweke收敛检验 z = (均值_A - 均值_B)/√(s_A² + s_B²)

    A 为开头 frac_a，B 为末尾 frac_b

    Raises:
        DataError: 序列短于100，片段比例不合法，或方差为零
    """
    x = _as_series(series, GEWEKE_MIN_LENGTH)
    if not (0 < frac_a < 1 and 0 < frac_b < 1 and frac_a + frac_b <= 1):
        raise DataError(f"invalid segment fractions {frac_a}, {frac_b}")
    n = x.shape[0]
    a = x[: max(2, int(frac_a * n))]
    b = x[n - max(2, int(frac_b * n)) :]
    var = spectral_variance_of_mean(a) + spectral_variance_of_mean(b)
    if var <= 0.0:
        raise DataError("zero variance")
    return float((a.mean() - b.mean()) / math.sqrt(var))


# ==================== 簇数 ====================

@dataclass(frozen=True, eq=False)
class ClusterCountSummary:
    """非空簇数的后验频率，以及按大小排名的簇占用人数均值/标准差"""
    histogram: Dict[int, float]
    occupancy_mean: np.ndarray      # 第r大的簇的平均人数
    occupancy_std: np.ndarray

    @property
    def mode(self) -> int:
        return min(self.histogram, key=lambda c: (-self.histogram[c], c))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "histogram": {str(c): f for c, f in sorted(self.histogram.items())},
            "mode": self.mode,
            "occupancy_mean": self.occupancy_mean.tolist(),
            "occupancy_std": self.occupancy_std.tolist(),
        }


def cluster_count_histogram(chain: Chain) -> ClusterCountSummary:
    """
    统计保留样本中非空簇数的分布与占用情况

    Raises:
        DataError: 预烧期后为空
    """
    records = chain.require_retained()
    sizes: List[np.ndarray] = [
        np.sort(r.state.counts[r.state.counts > 0])[::-1] for r in records
    ]
    n = len(records)
    values, freq = np.unique([s.shape[0] for s in sizes], return_counts=True)
    histogram = {int(c): float(k) / n for c, k in zip(values, freq)}

    width = max(s.shape[0] for s in sizes)
    table = np.zeros((n, width))
    for i, s in enumerate(sizes):
        table[i, : s.shape[0]] = s
    return ClusterCountSummary(
        histogram=histogram,
        occupancy_mean=table.mean(axis=0),
        occupancy_std=table.std(axis=0),
    )


# ==================== 整链诊断 ====================

def monitored_variables(chain: Chain) -> List[str]:
    """s_y、α、μ_0^(f)、μ_0^(a) 各分量与用户系数均值"""
    dim = int(chain.records[0].state.feature_hypers.mu0.shape[0]) if chain.records else 0
    return ["s_y", "alpha", "mu0_f"] + [f"mu0_a[{j}]" for j in range(dim)] + ["b_mean"]


def diagnose_variable(series: np.ndarray, burn_in: int) -> Dict[str, Optional[float]]:
    """单个变量的 τ、ESS 与 Geweke z；无法计算的项为None"""
    post = series[burn_in:]
    result: Dict[str, Optional[float]] = {"tau": None, "ess": None, "geweke_z": None}
    try:
        tau = autocorrelation_time(post)
    except DataError as e:
        result["error"] = str(e)
        return result
    result["tau"] = tau
    result["ess"] = post.shape[0] / tau
    try:
        result["geweke_z"] = geweke_z(post)
    except DataError as e:
        result["error"] = str(e)
    return result


def diagnose_chain(chain: Chain) -> Dict[str, Any]:
    """
    整链诊断

    Returns:
        {变量名: {tau, ess, geweke_z}, "cluster_counts": {...}}
    """
    n_burn = len(chain) - len(chain.require_retained())
    report: Dict[str, Any] = {}
    for name in monitored_variables(chain):
        entry = diagnose_variable(chain.trace(name), n_burn)
        if "error" in entry:
            logger.warning(f"{name}: {entry['error']}")
        report[name] = entry
    report["cluster_counts"] = cluster_count_histogram(chain).to_dict()
    return report


def save_diagnostics(path: Path, report: Dict[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)


def trace_frame(chain: Chain) -> pd.DataFrame:
    """traces.csv：每条记录一行"""
    data: Dict[str, Any] = {
        "iteration": chain.iterations(),
        "c": chain.trace("n_clusters").astype(np.int64),
    }
    for name in TRACE_COLUMNS:
        data[name] = chain.trace(name)
    return pd.DataFrame(data)


def save_traces(path: Path, chain: Chain) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    trace_frame(chain).to_csv(path, index=False, float_format="%.10g")
