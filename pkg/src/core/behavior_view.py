"""
行为视图模块
用户潜在系数b、行为视图簇参数与超参数、回归噪声精度的条件采样，以及β_0的ARS目标
"""
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from src.core.ars import sample_log_concave
from src.core.distributions import (
    ShapeScaleGamma,
    log_minus_digamma,
    log_normal_pdf,
    sample_gamma,
    sample_normal_precision,
    stirling_remainder,
)
from src.models.dataset import DataMoments, Dataset
from src.models.state import BehaviorClusterParams, BehaviorHypers, ModelState, cholesky_lower

LN2 = math.log(2.0)


# ==================== 用户系数 ====================

@dataclass(frozen=True, eq=False)
class CoefficientPosteriorPieces:
    """b 的联合条件后验 N(μ′, Λ′⁻¹)"""
    precision: np.ndarray   # Λ′，U×U
    shift: np.ndarray       # Λ′·μ′

    @property
    def mean(self) -> np.ndarray:
        chol = cholesky_lower(self.precision, "coefficient precision")
        return linalg.cho_solve((chol, True), self.shift)


def coefficient_posterior(state: ModelState, d: Dataset) -> CoefficientPosteriorPieces:
    """
    Λ′ = diag(s_{z_u}) + s_y·P·Pᵀ，Λ′·μ′ = diag(s_{z_u})·μ_{z} + s_y·P·y
    """
    cluster_prec = np.array([p.precision for p in state.behavior_params])[state.assignments]
    cluster_mean = np.array([p.mean for p in state.behavior_params])[state.assignments]
    precision = state.noise_precision * d.gram
    precision[np.diag_indices_from(precision)] += cluster_prec
    shift = cluster_prec * cluster_mean + state.noise_precision * d.weighted_lengths
    return CoefficientPosteriorPieces(precision=precision, shift=shift)


def sample_coefficients(state: ModelState, d: Dataset, rng: np.random.Generator) -> np.ndarray:
    """
    一次Cholesky联合采样全部用户系数

    Raises:
        NotSPDError: Λ′ 分解失败
    """
    pieces = coefficient_posterior(state, d)
    chol = cholesky_lower(pieces.precision, "coefficient precision")
    mean = linalg.cho_solve((chol, True), pieces.shift)
    eps = rng.standard_normal(mean.shape[0])
    return mean + linalg.solve_triangular(chol.T, eps, lower=False)


# ==================== 簇参数 ====================

def behavior_precision_posterior(
    member_coefs: np.ndarray,
    mean: float,
    h: BehaviorHypers,
) -> ShapeScaleGamma:
    """s_k ~ G(β_0+n_k, [β_0·w_0 + Σ(b_u-μ_k)²]⁻¹)"""
    dev = member_coefs - mean
    return ShapeScaleGamma(
        shape_like=h.beta0 + member_coefs.shape[0],
        scale_like=1.0 / (h.beta0 * h.w0 + float(dev @ dev)),
    )


def behavior_mean_posterior(member_coefs: np.ndarray, precision: float, h: BehaviorHypers):
    """
    Returns:
        (μ′, Λ′)，Λ′ = r_0 + n_k·s_k，μ′ = (r_0·μ_0 + s_k·Σb_u)/Λ′
    """
    post_prec = h.r0 + member_coefs.shape[0] * precision
    return (h.r0 * h.mu0 + precision * float(member_coefs.sum())) / post_prec, post_prec


def sample_behavior_cluster_params(
    member_coefs: np.ndarray,
    h: BehaviorHypers,
    rng: np.random.Generator,
    current: Optional[BehaviorClusterParams] = None,
) -> BehaviorClusterParams:
    """
    先在旧均值下采精度，再在新精度下采均值；空簇即为先验采样
    """
    member_coefs = np.asarray(member_coefs, dtype=float).reshape(-1)
    if current is not None:
        old_mean = current.mean
    elif member_coefs.size:
        old_mean = float(member_coefs.mean())
    else:
        old_mean = h.mu0

    precision = sample_gamma(behavior_precision_posterior(member_coefs, old_mean, h), rng)
    mean, post_prec = behavior_mean_posterior(member_coefs, precision, h)
    return BehaviorClusterParams(
        mean=sample_normal_precision(mean, post_prec, rng), precision=precision
    )


def behavior_loglik(b, p: BehaviorClusterParams):
    """log N(b_u | μ_k, 1/s_k)"""
    return log_normal_pdf(b, p.mean, p.precision)


# ==================== 共享超参数 ====================

@dataclass(frozen=True)
class BehaviorBetaPosterior:
    """
    y = ln β_0 的条件对数密度（未归一化）

    ln p(y) = y - K·lnΓ(β/2) - 1/(2β) + ((K·β-3)/2)·(y - ln2) + (β/2)·Σ_k(ln(s_k·w) - s_k·w)

    记 x = β/2，用 lnΓ(x) = (x-½)ln x - x + g(x) 消去相互抵消的大项后
    ln p(y) = y - e^{-y}/2 + (K/2 - 3/2)·ln x - K·g(x) + x·Σ_k(1 + ln(s_k·w) - s_k·w)
    """
    n_clusters: int
    spread: float   # Σ_k (1 + ln(s_k w) - s_k w) ≤ 0

    @classmethod
    def from_params(cls, precisions: Sequence[float], w0: float) -> "BehaviorBetaPosterior":
        dev = np.asarray(precisions, dtype=float) * w0 - 1.0
        return cls(n_clusters=len(dev), spread=float(np.sum(np.log1p(dev) - dev)))

    def _scales(self, y: float) -> Tuple[float, float]:
        """(x, e^{-y}/2)；越出浮点范围的部分为0或inf"""
        with np.errstate(over="ignore"):
            return float(np.exp(y - LN2)), float(0.5 * np.exp(-y))

    def log_pdf(self, y: float) -> float:
        x, half_inv = self._scales(y)
        if not (0.0 < x < math.inf and half_inv < math.inf):
            return -math.inf
        k = self.n_clusters
        return float(
            y
            - half_inv
            + (0.5 * k - 1.5) * (y - LN2)
            - k * stirling_remainder(x)
            + x * self.spread
        )

    def dlog_pdf(self, y: float) -> float:
        x, half_inv = self._scales(y)
        if not (x > 0.0 and half_inv < math.inf):
            return math.inf
        if x == math.inf:
            return -math.inf
        k = self.n_clusters
        return float(1.0 + half_inv - 1.5 + k * x * log_minus_digamma(x) + x * self.spread)


def sample_behavior_beta(
    precisions: Sequence[float],
    w0: float,
    beta_old: float,
    rng: np.random.Generator,
) -> float:
    """ARS 采样 β_0（无界定义域）"""
    post = BehaviorBetaPosterior.from_params(precisions, w0)
    return math.exp(sample_log_concave(post.log_pdf, post.dlog_pdf, math.log(beta_old), rng))


def sample_behavior_hypers(
    params: Sequence[BehaviorClusterParams],
    m: DataMoments,
    h: BehaviorHypers,
    rng: np.random.Generator,
) -> BehaviorHypers:
    """
    依次采样 μ_0, r_0, w_0, β_0

    μ_0 ~ N(精度 σ_b̂⁻²+K·r_0)，r_0 ~ G(1+K, [σ_b̂⁻² + Σ(μ_k-μ_0)²]⁻¹)，
    w_0 ~ G(1+K·β_0, [σ_b̂⁻² + β_0·Σs_k]⁻¹)
    """
    k = len(params)
    if k == 0:
        raise ValueError("need at least one active cluster")
    inv_var = 1.0 / m.coef_mle_var
    means = np.array([p.mean for p in params])
    precs = np.array([p.precision for p in params])

    post_prec = inv_var + k * h.r0
    mu0 = sample_normal_precision(
        (inv_var * m.coef_mle_mean + h.r0 * float(means.sum())) / post_prec, post_prec, rng
    )

    dev = means - mu0
    r0 = sample_gamma(ShapeScaleGamma(1.0 + k, 1.0 / (inv_var + float(dev @ dev))), rng)

    w0 = sample_gamma(
        ShapeScaleGamma(1.0 + k * h.beta0, 1.0 / (inv_var + h.beta0 * float(precs.sum()))), rng
    )

    beta0 = sample_behavior_beta(precs, w0, h.beta0, rng)
    return BehaviorHypers(mu0=mu0, r0=r0, w0=w0, beta0=beta0)


def sample_behavior_hypers_prior(m: DataMoments, rng: np.random.Generator) -> BehaviorHypers:
    """
    从超先验采样（链初始化用）

    μ_0 ~ N(μ_b̂, σ_b̂²)，r_0 ~ G(1, σ_b̂⁻²)，w_0 ~ G(1, σ_b̂²)，1/β_0 ~ G(1, 1)
    """
    var = m.coef_mle_var
    mu0 = sample_normal_precision(m.coef_mle_mean, 1.0 / var, rng)
    r0 = sample_gamma(ShapeScaleGamma(1.0, 1.0 / var), rng)
    w0 = sample_gamma(ShapeScaleGamma(1.0, var), rng)
    beta0 = 1.0 / sample_gamma(ShapeScaleGamma(1.0, 1.0), rng)
    return BehaviorHypers(mu0=mu0, r0=r0, w0=w0, beta0=beta0)


# ==================== 回归噪声 ====================

def noise_precision_posterior(d: Dataset, b: np.ndarray, m: DataMoments) -> ShapeScaleGamma:
    """s_y ~ G(1+T, [σ_0² + Σ_t(y_t - p_tᵀb)²]⁻¹)"""
    resid = d.lengths - d.participation.T @ b
    return ShapeScaleGamma(1.0 + d.n_threads, 1.0 / (m.length_var + float(resid @ resid)))


def sample_noise_precision(
    d: Dataset,
    b: np.ndarray,
    m: DataMoments,
    rng: np.random.Generator,
) -> float:
    """采样回归噪声精度 s_y"""
    return sample_gamma(noise_precision_posterior(d, b, m), rng)
