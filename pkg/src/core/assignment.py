"""
簇分配模块
CRP / 有限Dirichlet先验、双视图似然打分、Neal辅助空簇与α重采样
"""
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from src.core.ars import sample_log_concave
from src.core.behavior_view import behavior_loglik, sample_behavior_cluster_params
from src.core.feature_view import feature_loglik, sample_feature_cluster_params
from src.models.config import AssignmentConfig
from src.models.dataset import Dataset
from src.models.state import BehaviorClusterParams, FeatureClusterParams, ModelState


# ==================== 先验 ====================

def crp_log_prior(counts_without_u: Sequence[int], alpha: float, k: Optional[int]) -> float:
    """
    CRP 未归一化对数权重

    Args:
        counts_without_u: 去掉用户u后各簇人数
        alpha: 集中参数
        k: 候选簇下标（从0开始），None 表示新簇

    Returns:
        ln n_k 或 ln α
    """
    if k is None:
        return math.log(alpha)
    n = counts_without_u[k]
    return math.log(n) if n > 0 else -math.inf


def crp_log_weights(counts_without_u: Sequence[int], alpha: float) -> np.ndarray:
    """所有已有簇加上一个新簇的CRP对数权重"""
    return np.array(
        [crp_log_prior(counts_without_u, alpha, k) for k in range(len(counts_without_u))]
        + [crp_log_prior(counts_without_u, alpha, None)]
    )


def finite_log_prior(counts_without_u: Sequence[int], alpha: float, K: int, k: int) -> float:
    """
    有限K簇的Dirichlet先验：ln((α/K + n_-k)/(α + U - 1))

    Args:
        k: 簇下标（从0开始，必须小于K）

    Raises:
        ValueError: k 超出 K 个簇
    """
    if not 0 <= k < K:
        raise ValueError(f"cluster index {k} out of range for K={K}")
    others = float(np.sum(counts_without_u))
    return math.log(alpha / K + counts_without_u[k]) - math.log(alpha + others)


def _draw_categorical(log_weights: np.ndarray, rng: np.random.Generator) -> int:
    """log-sum-exp 归一化后按类别分布采样"""
    probs = np.exp(log_weights - logsumexp(log_weights))
    return int(rng.choice(len(probs), p=probs / probs.sum()))


# ==================== 单个用户 ====================

def _view_logliks(
    a_u: np.ndarray,
    b_u: float,
    feature_params: Sequence[FeatureClusterParams],
    behavior_params: Sequence[BehaviorClusterParams],
    cfg: AssignmentConfig,
) -> np.ndarray:
    """两个视图加权后的对数似然之和"""
    fw = cfg.effective_feature_weight
    bw = cfg.behavior_weight
    total = np.zeros(len(behavior_params))
    if fw > 0:
        total += fw * np.array([feature_loglik(a_u, p) for p in feature_params])
    if bw > 0:
        total += bw * np.array([float(behavior_loglik(b_u, p)) for p in behavior_params])
    return total


def _draw_auxiliary(
    state: ModelState,
    d: Dataset,
    n: int,
    rng: np.random.Generator,
) -> Tuple[List[FeatureClusterParams], List[BehaviorClusterParams]]:
    """从基分布采样n对辅助簇参数"""
    empty_a = np.empty((0, d.n_dims))
    empty_b = np.empty(0)
    feats = [sample_feature_cluster_params(empty_a, state.feature_hypers, rng) for _ in range(n)]
    behs = [sample_behavior_cluster_params(empty_b, state.behavior_hypers, rng) for _ in range(n)]
    return feats, behs


def _resample_dp(u: int, state: ModelState, d: Dataset, cfg: AssignmentConfig, rng) -> None:
    """Neal算法8：已有簇按 n_k 打分，m 个辅助簇各按 α/m 打分"""
    old = int(state.assignments[u])
    singleton = state.counts[old] == 0
    m = cfg.m_aux

    active = [k for k in range(state.n_clusters) if state.counts[k] > 0]
    aux_f: List[FeatureClusterParams] = []
    aux_b: List[BehaviorClusterParams] = []
    if singleton:
        # 单独成簇时，原簇参数作为第一个辅助簇
        aux_f.append(state.feature_params[old])
        aux_b.append(state.behavior_params[old])
    fresh_f, fresh_b = _draw_auxiliary(state, d, m - len(aux_f), rng)
    aux_f += fresh_f
    aux_b += fresh_b

    cand_f = [state.feature_params[k] for k in active] + aux_f
    cand_b = [state.behavior_params[k] for k in active] + aux_b
    log_prior = np.concatenate(
        (np.log(state.counts[active].astype(float)), np.full(m, math.log(state.alpha / m)))
    )
    log_w = log_prior + _view_logliks(
        d.features[u], float(state.coefficients[u]), cand_f, cand_b, cfg
    )
    choice = _draw_categorical(log_w, rng)

    if choice < len(active):
        target = active[choice]
    elif singleton:
        # 复用原簇位置（选中第一个辅助簇时参数不变）
        target = old
        state.feature_params[old] = cand_f[choice]
        state.behavior_params[old] = cand_b[choice]
    else:
        target = state.n_clusters
        state.feature_params.append(cand_f[choice])
        state.behavior_params.append(cand_b[choice])
        state.counts = np.append(state.counts, 0)

    state.assignments[u] = target
    state.counts[target] += 1
    state.compact()


def _resample_fixed(u: int, state: ModelState, d: Dataset, cfg: AssignmentConfig, rng) -> None:
    """K个常驻簇（允许为空），没有辅助簇"""
    K = state.n_clusters
    log_prior = np.array(
        [finite_log_prior(state.counts, state.alpha, K, k) for k in range(K)]
    )
    log_w = log_prior + _view_logliks(
        d.features[u],
        float(state.coefficients[u]),
        state.feature_params,
        state.behavior_params,
        cfg,
    )
    target = _draw_categorical(log_w, rng)
    state.assignments[u] = target
    state.counts[target] += 1


def resample_assignment(
    u: int,
    state: ModelState,
    d: Dataset,
    cfg: AssignmentConfig,
    rng: np.random.Generator,
) -> ModelState:
    """
    重采样用户u的簇分配（原地更新并返回state）

    Args:
        u: 用户下标
        state: 当前状态
        d: 数据集
        cfg: 分配配置
        rng: 随机数生成器

    Returns:
        更新后的状态；single 变体原样返回
    """
    if cfg.variant.kind == "single":
        return state

    state.counts[state.assignments[u]] -= 1
    if cfg.variant.is_dp:
        _resample_dp(u, state, d, cfg, rng)
    else:
        _resample_fixed(u, state, d, cfg, rng)
    return state


def resample_assignments(
    state: ModelState,
    d: Dataset,
    cfg: AssignmentConfig,
    rng: np.random.Generator,
) -> ModelState:
    """按用户下标升序完成一次完整扫描"""
    for u in range(d.n_users):
        resample_assignment(u, state, d, cfg, rng)
    return state


# ==================== α ====================

@dataclass(frozen=True)
class AlphaPosterior:
    """
    y = ln α 的条件对数密度（未归一化）

    ln p(y) = y·(K - 3/2) - 1/(2e^y) + lnΓ(e^y) - lnΓ(e^y + U)

    lnΓ(α) - lnΓ(α+U) = -U·y - Σ_{i=1..U-1} ln(1 + i·e^{-y})，
    按右式计算，α很大时也不会出现大数相减
    """
    n_clusters: int
    n_users: int

    def _inv_alpha(self, y: float) -> float:
        with np.errstate(over="ignore"):
            return float(np.exp(-y))

    def log_pdf(self, y: float) -> float:
        inv = self._inv_alpha(y)
        if inv == math.inf:
            return -math.inf
        steps = np.arange(1, self.n_users)
        return float(
            y * (self.n_clusters - 1.5)
            - 0.5 * inv
            - self.n_users * y
            - np.sum(np.log1p(steps * inv))
        )

    def dlog_pdf(self, y: float) -> float:
        inv = self._inv_alpha(y)
        if inv == math.inf:
            return math.inf
        steps = np.arange(1, self.n_users)
        return float(
            self.n_clusters - 2.5 + 0.5 * inv - np.sum(1.0 / (1.0 + steps * inv))
        )


def resample_alpha(c: int, U: int, alpha_old: float, rng: np.random.Generator) -> float:
    """
    ARS 采样 ln α 并返回 α

    Args:
        c: 非空簇个数
        U: 用户数
        alpha_old: 上一次的α（热启动中心）
    """
    if c < 1 or U < 1:
        raise ValueError(f"need c >= 1 and U >= 1, got c={c}, U={U}")
    post = AlphaPosterior(n_clusters=c, n_users=U)
    return math.exp(sample_log_concave(post.log_pdf, post.dlog_pdf, math.log(alpha_old), rng))
