"""
特征视图模块
特征视图簇参数与共享超参数的条件采样、β_0的ARS目标、特征似然
"""
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from src.core.ars import sample_log_concave
from src.core.distributions import (
    ShapeScaleGamma,
    ScaledWishart,
    log_minus_digamma,
    log_mvn_pdf_chol,
    sample_gamma,
    sample_mvn_canonical,
    sample_wishart,
    sample_wishart_factor,
    stirling_remainder,
    wishart_from_factor,
)
from src.models.dataset import DataMoments
from src.models.errors import ARSError, NotSPDError, NumericalError
from src.models.state import FeatureClusterParams, FeatureHypers, cholesky_lower
from src.utils.logger import get_logger

logger = get_logger(__name__)

LN2 = math.log(2.0)


def inv_spd(matrix: np.ndarray, error: str) -> np.ndarray:
    """对称正定矩阵求逆，失败时抛出带说明的数值错误"""
    try:
        chol = cholesky_lower(matrix, error)
    except NotSPDError as e:
        raise NumericalError(error) from e
    inv = linalg.cho_solve((chol, True), np.eye(matrix.shape[0]))
    return 0.5 * (inv + inv.T)


# ==================== 簇参数 ====================

def feature_precision_posterior(
    members: np.ndarray,
    mean: np.ndarray,
    h: FeatureHypers,
) -> ScaledWishart:
    """
    S_k 的条件后验 W(β_0+n_k, [β_0·W_0 + Σ(a_u-μ_k)(a_u-μ_k)ᵀ]⁻¹)
    """
    dev = members - mean
    scatter = dev.T @ dev
    scale = inv_spd(h.beta0 * h.W0 + scatter, "singular scatter")
    return ScaledWishart(dof=h.beta0 + members.shape[0], scale=scale)


def feature_mean_posterior(
    members: np.ndarray,
    precision: np.ndarray,
    h: FeatureHypers,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    μ_k 的条件后验

    Returns:
        (μ′, Λ′)，Λ′ = R_0 + n_k·S_k，μ′ = Λ′⁻¹(R_0·μ_0 + S_k·Σa_u)
    """
    post_prec = h.R0 + members.shape[0] * precision
    shift = h.R0 @ h.mu0 + precision @ members.sum(axis=0)
    chol = cholesky_lower(post_prec, "cluster mean precision")
    return linalg.cho_solve((chol, True), shift), post_prec


def sample_feature_cluster_params(
    members: np.ndarray,
    h: FeatureHypers,
    rng: np.random.Generator,
    current: Optional[FeatureClusterParams] = None,
) -> FeatureClusterParams:
    """
    对一个簇做一次子扫描：先在旧均值下采S，再在新S下采μ

    Args:
        members: n_k×D 成员特征（可以为空）
        h: 特征超参数
        rng: 随机数生成器
        current: 当前簇参数，提供旧均值；为None时用成员均值（空簇用μ_0）

    Returns:
        新的簇参数；空簇时即为先验采样
    """
    members = np.asarray(members, dtype=float).reshape(-1, h.mu0.shape[0])
    if current is not None:
        old_mean = current.mean
    elif members.shape[0]:
        old_mean = members.mean(axis=0)
    else:
        old_mean = h.mu0

    factor = sample_wishart_factor(feature_precision_posterior(members, old_mean, h), rng)
    precision = wishart_from_factor(factor)

    post_prec = h.R0 + members.shape[0] * precision
    shift = h.R0 @ h.mu0 + precision @ members.sum(axis=0)
    mean = sample_mvn_canonical(post_prec, shift, rng, "cluster mean precision")
    return FeatureClusterParams(mean=mean, precision=precision, factor=factor)


def feature_loglik(a: np.ndarray, p: FeatureClusterParams):
    """log N(a | μ_k, S_k⁻¹)，a可以是单个向量或按行的矩阵"""
    return log_mvn_pdf_chol(np.asarray(a, dtype=float), p.mean, p.chol)


# ==================== 共享超参数 ====================

@dataclass(frozen=True)
class FeatureBetaPosterior:
    """
    y = ln β_0 的条件对数密度（未归一化）

    ln p(y) = y - K·Σ_{d=1..D} lnΓ((β+d-D)/2) - D/(2(β-D+1)) - (3/2)·ln(β-D+1)
              + (K·D·β/2)·(y - ln2) + (β/2)·Σ_k (ln|S_k| + ln|W| - tr(S_k·W))

    记 x = β/2、x_d = x - c_d、c_d = (D-d)/2，展开 lnΓ(x_d) = (x_d-½)ln x_d - x_d + g(x_d)
    后 x·ln x 项全部抵消：
    ln p(y) = y + K·(Σc_d + D/2)·ln x - K·Σ(x_d-½)·ln(1 - c_d/x) - K·Σc_d - K·Σg(x_d)
              - D/(2ε) - (3/2)·ln ε + x·Σ_k (D + ln|S_k·W| - tr(S_k·W))，ε = β-D+1
    """
    n_clusters: int
    dim: int
    spread: float   # Σ_k (D + ln|S_k W| - tr(S_k W)) ≤ 0

    @classmethod
    def from_params(
        cls,
        precisions: Sequence[np.ndarray],
        w0: np.ndarray,
        half_logdets: Optional[Sequence[float]] = None,
    ) -> "FeatureBetaPosterior":
        """
        Args:
            precisions: 各簇精度矩阵S_k
            w0: W_0
            half_logdets: 各簇的 ½·ln|S_k|（由Cholesky因子给出）；
                为None时对S_k重新计算，S_k接近奇异时应当传入
        """
        dim = int(w0.shape[0])
        _, logdet_w = np.linalg.slogdet(w0)
        if half_logdets is None:
            half_logdets = [0.5 * np.linalg.slogdet(s)[1] for s in precisions]
        spread = 0.0
        for s, half in zip(precisions, half_logdets):
            spread += dim + 2.0 * half + logdet_w - float(np.sum(s * w0))
        return cls(n_clusters=len(precisions), dim=dim, spread=spread)

    @property
    def lower(self) -> float:
        """β > D-1 对应的 y 下界"""
        return math.log(self.dim - 1) if self.dim > 1 else -math.inf

    @property
    def _offsets(self) -> np.ndarray:
        """c_d = (D-d)/2，d = 1..D"""
        return np.arange(self.dim - 1, -1, -1) / 2.0

    def _terms(self, y: float):
        """(x, ε)，越界时返回None"""
        with np.errstate(over="ignore"):
            x = float(np.exp(y - LN2))
        excess = 2.0 * x - self.dim + 1.0
        if not (0.0 < x < math.inf and excess > 0.0):
            return None
        return x, excess

    def log_pdf(self, y: float) -> float:
        terms = self._terms(y)
        if terms is None:
            return -math.inf
        x, excess = terms
        k, d = self.n_clusters, self.dim
        c = self._offsets
        xd = x - c
        return float(
            y
            + k * (np.sum(c) + 0.5 * d) * (y - LN2)
            - k * np.sum((xd - 0.5) * np.log1p(-c / x))
            - k * np.sum(c)
            - k * np.sum(stirling_remainder(xd))
            - d / (2.0 * excess)
            - 1.5 * math.log(excess)
            + x * self.spread
        )

    def dlog_pdf(self, y: float) -> float:
        terms = self._terms(y)
        if terms is None:
            return -math.inf if y > max(self.lower, 0.0) else math.inf
        x, excess = terms
        k, d = self.n_clusters, self.dim
        c = self._offsets
        beta = 2.0 * x
        return float(
            1.0
            - k * x * np.sum(np.log1p(-c / x))
            + k * x * np.sum(log_minus_digamma(x - c))
            + d * beta / (2.0 * excess * excess)
            - 1.5 * beta / excess
            + x * self.spread
        )


# β_0 的ARS结果恰好落在 D-1 上（exp舍入）时的最多重抽次数
MAX_BETA_REDRAWS = 100


def sample_feature_beta(
    precisions: Sequence[np.ndarray],
    w0: np.ndarray,
    beta_old: float,
    rng: np.random.Generator,
    half_logdets: Optional[Sequence[float]] = None,
) -> float:
    """
    ARS 采样 β_0，以上一次的 ln β_0 为热启动中心，结果严格大于 D-1

    Raises:
        ARSError: 重抽多次仍未越过 D-1
    """
    post = FeatureBetaPosterior.from_params(precisions, w0, half_logdets)
    floor = float(post.dim - 1)
    center = math.log(max(beta_old, math.nextafter(floor, math.inf)))
    for _ in range(MAX_BETA_REDRAWS):
        y = sample_log_concave(post.log_pdf, post.dlog_pdf, center, rng, lower=post.lower)
        beta = math.exp(y)
        if beta > floor:
            return beta
    raise ARSError("too many rejections")


def sample_feature_hypers(
    params: Sequence[FeatureClusterParams],
    m: DataMoments,
    h: FeatureHypers,
    rng: np.random.Generator,
) -> FeatureHypers:
    """
    依次采样 μ_0, R_0, W_0, β_0

    Args:
        params: 所有活跃簇的特征参数（至少一个）
        m: 数据统计量
        h: 当前超参数
        rng: 随机数生成器

    Returns:
        新的特征超参数
    """
    k = len(params)
    if k == 0:
        raise ValueError("need at least one active cluster")
    d = m.feat_mean.shape[0]
    lam_a = m.feat_precision
    means = np.array([p.mean for p in params])

    # μ_0
    post_prec = lam_a + k * h.R0
    shift = lam_a @ m.feat_mean + h.R0 @ means.sum(axis=0)
    mu0 = sample_mvn_canonical(post_prec, shift, rng, "mu0 precision")

    # R_0
    dev = means - mu0
    r_scale = inv_spd(d * m.feat_cov + dev.T @ dev, "singular R0 scale")
    R0 = sample_wishart(ScaledWishart(dof=d + k, scale=r_scale), rng)

    # W_0
    s_sum = np.sum([p.precision for p in params], axis=0)
    w_scale = inv_spd(d * lam_a + h.beta0 * s_sum, "singular W0 scale")
    W0 = sample_wishart(ScaledWishart(dof=d + k * h.beta0, scale=w_scale), rng)

    # β_0
    beta0 = sample_feature_beta(
        [p.precision for p in params], W0, h.beta0, rng, [p.half_logdet for p in params]
    )

    return FeatureHypers(mu0=mu0, R0=R0, W0=W0, beta0=beta0)


def sample_feature_hypers_prior(m: DataMoments, rng: np.random.Generator) -> FeatureHypers:
    """
    从超先验采样（链初始化用）

    μ_0 ~ N(μ_a, Σ_a)，R_0 ~ W(D, (D·Σ_a)⁻¹)，W_0 ~ W(D, Σ_a/D)，1/(β_0-D+1) ~ G(1, 1/D)
    """
    d = m.feat_mean.shape[0]
    mu0 = sample_mvn_canonical(m.feat_precision, m.feat_precision @ m.feat_mean, rng)
    R0 = sample_wishart(ScaledWishart(dof=d, scale=m.feat_precision / d), rng)
    W0 = sample_wishart(ScaledWishart(dof=d, scale=m.feat_cov / d), rng)
    inv_excess = sample_gamma(ShapeScaleGamma(1.0, 1.0 / d), rng)
    beta0 = d - 1.0 + 1.0 / inv_excess
    return FeatureHypers(mu0=mu0, R0=R0, W0=W0, beta0=beta0)
