"""
随机分布模块
模型用到的Gamma / Wishart / 正态分布的采样与对数密度

Gamma与Wishart一律使用模型自身的参数化：
    G(α, β) 密度 ∝ x^(α/2-1)·exp(-x/(2β))，均值 αβ
    W(υ, W) 期望 υW
到numpy/scipy标准参数化的换算只在本模块中进行。
"""
from dataclasses import dataclass
from typing import Dict, Iterable, Tuple

import numpy as np
from scipy import linalg, stats
from scipy.special import digamma, gammaln

from src.models.state import cholesky_lower

LOG_2PI = float(np.log(2.0 * np.pi))
TINY = float(np.finfo(float).tiny)

# 渐近级数的起用点：x >= 20 时截断误差低于双精度
ASYMPTOTIC_FROM = 20.0

# 每条链派生出的独立随机数流
STREAM_NAMES: Tuple[str, ...] = (
    "init",
    "feature",
    "behavior",
    "coefficients",
    "noise",
    "assignment",
    "alpha",
)


@dataclass(frozen=True)
class ShapeScaleGamma:
    """G(α, β)：shape_like=α，scale_like=β"""
    shape_like: float
    scale_like: float

    def __post_init__(self) -> None:
        if not (self.shape_like > 0 and self.scale_like > 0):
            raise ValueError(
                f"Gamma parameters must be positive, got α={self.shape_like}, β={self.scale_like}"
            )

    @property
    def shape(self) -> float:
        """标准Gamma的形状参数"""
        return 0.5 * self.shape_like

    @property
    def scale(self) -> float:
        """标准Gamma的尺度参数"""
        return 2.0 * self.scale_like

    @property
    def mean(self) -> float:
        return self.shape_like * self.scale_like

    def frozen(self):
        """对应的 scipy.stats 分布"""
        return stats.gamma(a=self.shape, scale=self.scale)

    def log_pdf(self, x):
        return self.frozen().logpdf(x)


@dataclass(frozen=True, eq=False)
class ScaledWishart:
    """W(υ, W)：dof=υ，scale=W"""
    dof: float
    scale: np.ndarray

    def __post_init__(self) -> None:
        dim = self.scale.shape[0]
        if self.scale.shape != (dim, dim):
            raise ValueError(f"Wishart scale must be square, got {self.scale.shape}")
        if not self.dof > dim - 1:
            raise ValueError(f"Wishart dof must exceed dim-1={dim - 1}, got {self.dof}")

    @property
    def dim(self) -> int:
        return int(self.scale.shape[0])

    def log_pdf(self, x: np.ndarray) -> float:
        return float(stats.wishart(df=self.dof, scale=self.scale).logpdf(x))


def sample_gamma(g: ShapeScaleGamma, rng: np.random.Generator) -> float:
    """
    从 G(α, β) 采样

    等价于 Gamma(shape=α/2, scale=2β)；极小形状参数下下溢为0的结果截断到最小正数
    """
    draw = float(rng.gamma(shape=g.shape, scale=g.scale))
    return max(draw, TINY)


def sample_wishart_factor(w: ScaledWishart, rng: np.random.Generator) -> np.ndarray:
    """
    Bartlett分解采样 W(υ, W)，返回样本的下三角Cholesky因子 L·A

    L为W的Cholesky因子，A下三角：
    A_ii = sqrt(χ²(υ-i))，i=0..d-1，对角线以下为标准正态。
    两个下三角矩阵之积仍是下三角，因此 X = (L·A)(L·A)ᵀ 无需再分解；
    υ接近d-1时X可能在数值上奇异，但因子的对角线始终为正。

    Args:
        w: Wishart分布
        rng: 随机数生成器

    Returns:
        下三角矩阵F，样本 X = F·Fᵀ
    """
    d = w.dim
    chol = cholesky_lower(w.scale, "Wishart scale")
    bartlett = np.zeros((d, d))
    chi = np.sqrt(rng.chisquare(w.dof - np.arange(d)))
    bartlett[np.diag_indices(d)] = np.maximum(chi, TINY)
    lower = np.tril_indices(d, -1)
    bartlett[lower] = rng.standard_normal(len(lower[0]))
    return np.tril(chol @ bartlett)


def wishart_from_factor(factor: np.ndarray) -> np.ndarray:
    """F·Fᵀ，严格对称"""
    draw = factor @ factor.T
    return 0.5 * (draw + draw.T)


def sample_wishart(w: ScaledWishart, rng: np.random.Generator) -> np.ndarray:
    """
    Bartlett分解采样 W(υ, W)

    Returns:
        对称半正定矩阵（υ远大于d-1时正定）
    """
    return wishart_from_factor(sample_wishart_factor(w, rng))


def sample_mvn_precision(
    mean: np.ndarray,
    precision: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    从 N(mean, precision⁻¹) 采样

    Λ = L·Lᵀ，x = mean + L⁻ᵀ·ε，不显式求逆

    Raises:
        NotSPDError: 精度矩阵不是对称正定的
    """
    mean = np.asarray(mean, dtype=float)
    chol = cholesky_lower(np.atleast_2d(precision), "precision")
    eps = rng.standard_normal(mean.shape[0])
    return mean + linalg.solve_triangular(chol.T, eps, lower=False)


def sample_mvn_canonical(
    precision: np.ndarray,
    shift: np.ndarray,
    rng: np.random.Generator,
    what: str = "precision",
) -> np.ndarray:
    """
    从信息形式 N(Λ⁻¹·h, Λ⁻¹) 采样，只做一次Cholesky

    Args:
        precision: Λ
        shift: h = Λ·μ
        rng: 随机数生成器
        what: 出错时报告的矩阵名称
    """
    chol = cholesky_lower(precision, what)
    mean = linalg.cho_solve((chol, True), shift)
    eps = rng.standard_normal(mean.shape[0])
    return mean + linalg.solve_triangular(chol.T, eps, lower=False)


def sample_normal_precision(mean: float, precision: float, rng: np.random.Generator) -> float:
    """一维 N(mean, 1/precision)"""
    if not precision > 0:
        raise ValueError(f"precision must be positive, got {precision}")
    return float(mean + rng.standard_normal() / np.sqrt(precision))


def log_normal_pdf(x, mean, precision):
    """一维正态对数密度（含归一化常数），支持数组广播"""
    precision = np.asarray(precision, dtype=float)
    if np.any(precision <= 0):
        raise ValueError("precision must be positive")
    diff = np.asarray(x, dtype=float) - mean
    return 0.5 * (np.log(precision) - LOG_2PI - precision * diff * diff)


def log_mvn_pdf(x: np.ndarray, mean: np.ndarray, precision: np.ndarray) -> float:
    """
    多元正态对数密度（含归一化常数）

    x 可以是 D 维向量或 n×D 矩阵（按行计算）
    """
    chol = cholesky_lower(np.atleast_2d(precision), "precision")
    return log_mvn_pdf_chol(np.asarray(x, dtype=float), np.asarray(mean, dtype=float), chol)


def log_mvn_pdf_chol(x: np.ndarray, mean: np.ndarray, chol: np.ndarray):
    d = chol.shape[0]
    # ‖Lᵀ(x-μ)‖² 是马氏距离
    proj = (x - mean) @ chol
    quad = np.sum(proj * proj, axis=-1)
    half_logdet = np.sum(np.log(np.diag(chol)))
    return half_logdet - 0.5 * d * LOG_2PI - 0.5 * quad


# ==================== 特殊函数 ====================

def stirling_remainder(x):
    """
    lnΓ(x) - (x-½)·ln x + x

    β_0 的条件密度里 lnΓ 与 x·ln x 成对出现，大x时直接相减会丢失全部有效位，
    因此大x改用Stirling级数
    """
    x = np.asarray(x, dtype=float)
    with np.errstate(all="ignore"):
        inv = 1.0 / x
        inv2 = inv * inv
        series = 0.5 * LOG_2PI + inv * (
            1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0))
        )
        direct = gammaln(x) - (x - 0.5) * np.log(x) + x
    return np.where(x >= ASYMPTOTIC_FROM, series, direct)


def log_minus_digamma(x):
    """ln x - ψ(x)，大x时用渐近级数"""
    x = np.asarray(x, dtype=float)
    with np.errstate(all="ignore"):
        inv = 1.0 / x
        inv2 = inv * inv
        series = 0.5 * inv + inv2 * (
            1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 / 240.0))
        )
        direct = np.log(x) - digamma(x)
    return np.where(x >= ASYMPTOTIC_FROM, series, direct)


class RngStreams:
    """
    一条链的全部随机数流

    根种子经 SeedSequence 派生出互相独立的命名流，每个变量组使用自己的流，
    状态可导出/恢复以支持断点续跑
    """

    def __init__(self, seed: int, names: Iterable[str] = STREAM_NAMES):
        self.seed = int(seed)
        self.names = tuple(names)
        children = np.random.SeedSequence(self.seed).spawn(len(self.names))
        self._streams: Dict[str, np.random.Generator] = {
            name: np.random.Generator(np.random.PCG64(child))
            for name, child in zip(self.names, children)
        }

    def __getitem__(self, name: str) -> np.random.Generator:
        return self._streams[name]

    def __getattr__(self, name: str) -> np.random.Generator:
        streams = self.__dict__.get("_streams", {})
        if name in streams:
            return streams[name]
        raise AttributeError(name)

    def get_state(self) -> Dict[str, dict]:
        """导出各流的比特生成器状态（可JSON序列化）"""
        return {name: gen.bit_generator.state for name, gen in self._streams.items()}

    def set_state(self, state: Dict[str, dict]) -> None:
        """恢复各流状态"""
        for name, gen in self._streams.items():
            gen.bit_generator.state = state[name]
