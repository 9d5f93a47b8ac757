"""
自适应拒绝采样模块
对一维对数凹密度做精确采样（基于导数的切线上包络 + 弦下挤压）
"""
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from src.models.errors import ARSError
from src.utils.logger import get_logger

logger = get_logger(__name__)

# 单次采样允许的最大拒绝次数
MAX_REJECTIONS = 10000
# 初始横坐标扩张的最大次数
MAX_EXPANSIONS = 50
# 判定非凹时的相对容差
CONCAVITY_TOL = 1e-8


@dataclass(frozen=True)
class LogConcaveTarget:
    """
    一维对数凹目标

    log_pdf 不需要归一化；domain 是开区间 (lower, upper)，可以无界
    """
    log_pdf: Callable[[float], float]
    dlog_pdf: Callable[[float], float]
    init_abscissae: Tuple[float, ...]
    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self) -> None:
        xs = tuple(sorted(float(x) for x in self.init_abscissae))
        if len(xs) < 2:
            raise ValueError("need at least two initial abscissae")
        if xs[0] <= self.lower or xs[-1] >= self.upper:
            raise ValueError(f"initial abscissae {xs} outside domain ({self.lower}, {self.upper})")
        object.__setattr__(self, "init_abscissae", xs)


class Envelope:
    """
    分段线性上包络与下挤压

    上包络由各横坐标处的切线组成，相邻切线交点 z 把定义域切成若干段；
    下挤压由相邻横坐标间的弦组成，横坐标范围之外为 -inf。
    所有对数值都减去一个固定偏移以避免溢出。
    """

    def __init__(self, target: LogConcaveTarget):
        self.lower = target.lower
        self.upper = target.upper
        xs = np.asarray(target.init_abscissae, dtype=float)
        hs = np.array([target.log_pdf(x) for x in xs], dtype=float)
        dhs = np.array([target.dlog_pdf(x) for x in xs], dtype=float)
        if not (np.all(np.isfinite(hs)) and np.all(np.isfinite(dhs))):
            raise ARSError("unbounded envelope")

        self.offset = float(hs.max())
        self.x = xs
        self.h = hs - self.offset
        self.dh = dhs
        self._update()

    @property
    def n_points(self) -> int:
        return int(self.x.shape[0])

    def _update(self) -> None:
        """重算切线交点与各段的对数质量"""
        x, h, dh = self.x, self.h, self.dh

        # 导数必须单调不增
        jump = dh[1:] - dh[:-1]
        scale = 1.0 + np.abs(dh[1:]) + np.abs(dh[:-1]) + abs(self.offset)
        if np.any(jump > CONCAVITY_TOL * scale):
            raise ARSError("target not log-concave")

        if math.isinf(self.lower) and not dh[0] > 0:
            raise ARSError("unbounded envelope")
        if math.isinf(self.upper) and not dh[-1] < 0:
            raise ARSError("unbounded envelope")

        # 相邻切线交点
        denom = dh[:-1] - dh[1:]
        numer = h[1:] - h[:-1] - x[1:] * dh[1:] + x[:-1] * dh[:-1]
        flat = np.abs(denom) <= 1e-12 * (1.0 + np.abs(dh[:-1]))
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(flat, 0.5 * (x[:-1] + x[1:]), numer / np.where(flat, 1.0, denom))
        z = np.clip(z, x[:-1], x[1:])

        self.z = np.concatenate(([self.lower], z, [self.upper]))
        self.log_mass = np.array(
            [self._segment_log_mass(j) for j in range(self.n_points)], dtype=float
        )
        self.log_total = float(logsumexp(self.log_mass))

    def _tangent(self, j: int, at: float) -> float:
        if math.isinf(at):
            if self.dh[j] == 0:
                return float(self.h[j])
            return -math.inf if self.dh[j] * at < 0 else math.inf
        return float(self.h[j] + self.dh[j] * (at - self.x[j]))

    def _segment_log_mass(self, j: int) -> float:
        """第j段切线下 exp(u) 的积分的对数"""
        left, right = self.z[j], self.z[j + 1]
        width = right - left
        if width <= 0:
            return -math.inf
        a = float(self.dh[j])
        u_left = self._tangent(j, left)
        u_right = self._tangent(j, right)

        if math.isfinite(width) and abs(a) * width < 1e-10:
            return u_left + math.log(width)
        if a > 0:
            return u_right + math.log(-math.expm1(u_left - u_right)) - math.log(a)
        return u_left + math.log(-math.expm1(u_right - u_left)) - math.log(-a)

    def upper_hull(self, x):
        """上包络在x处的值（已加回偏移）"""
        x = np.asarray(x, dtype=float)
        j = np.clip(np.searchsorted(self.z, x, side="right") - 1, 0, self.n_points - 1)
        return self.h[j] + self.dh[j] * (x - self.x[j]) + self.offset

    def squeeze(self, x: float) -> float:
        """下挤压在x处的值（不含偏移）"""
        if x < self.x[0] or x > self.x[-1]:
            return -math.inf
        i = int(np.clip(np.searchsorted(self.x, x, side="right") - 1, 0, self.n_points - 2))
        x0, x1 = self.x[i], self.x[i + 1]
        t = (x - x0) / (x1 - x0)
        return float((1.0 - t) * self.h[i] + t * self.h[i + 1])

    def sample_upper(self, rng: np.random.Generator) -> Tuple[float, float]:
        """
        从上包络对应的分段指数分布中采样

        Returns:
            (x, u(x))，u不含偏移
        """
        probs = np.exp(self.log_mass - self.log_total)
        j = int(rng.choice(self.n_points, p=probs / probs.sum()))
        left, right = self.z[j], self.z[j + 1]
        a = float(self.dh[j])
        w = 1.0 - rng.random()
        width = right - left

        if math.isfinite(width) and abs(a) * width < 1e-10:
            x = left + w * width
        elif a > 0:
            x = right + math.log(w + (1.0 - w) * math.exp(-a * width)) / a
        else:
            x = left + math.log(w + (1.0 - w) * math.exp(a * width)) / a
        x = min(max(x, left), right)
        return x, float(self.h[j] + a * (x - self.x[j]))

    def insert(self, x: float, h: float, dh: float) -> None:
        """加入新横坐标并更新包络"""
        if not (math.isfinite(h) and math.isfinite(dh)) or np.any(self.x == x):
            return
        i = int(np.searchsorted(self.x, x))
        self.x = np.insert(self.x, i, x)
        self.h = np.insert(self.h, i, h - self.offset)
        self.dh = np.insert(self.dh, i, dh)
        self._update()


class AdaptiveRejectionSampler:
    """
    自适应拒绝采样器

    包络在多次采样之间保留并持续细化
    """

    def __init__(self, target: LogConcaveTarget, max_rejections: int = MAX_REJECTIONS):
        self.target = target
        self.max_rejections = max_rejections
        self.envelope = Envelope(target)

    def refine(self, x: float) -> None:
        """在x处计算目标并加入包络"""
        self.envelope.insert(x, self.target.log_pdf(x), self.target.dlog_pdf(x))

    def draw(self, rng: np.random.Generator) -> float:
        """
        精确采样一次

        Raises:
            ARSError: 非凹、包络无界或拒绝次数过多
        """
        env = self.envelope
        for _ in range(self.max_rejections):
            x, u = env.sample_upper(rng)
            log_w = math.log(1.0 - rng.random())

            # 挤压测试，不需要计算目标
            if log_w <= env.squeeze(x) - u:
                return x

            h = self.target.log_pdf(x)
            dh = self.target.dlog_pdf(x)
            h_shift = h - env.offset
            # 容差与目标的量级成比例
            if h_shift > u + CONCAVITY_TOL * (1.0 + abs(u) + abs(h)):
                raise ARSError("target not log-concave")
            env.insert(x, h, dh)
            if log_w <= h_shift - u:
                return x

        raise ARSError("too many rejections")

    def sample(self, rng: np.random.Generator, size: Optional[int] = None):
        """采样size次（None返回标量）"""
        if size is None:
            return self.draw(rng)
        return np.array([self.draw(rng) for _ in range(size)])


def ars_sample(target: LogConcaveTarget, rng: np.random.Generator) -> float:
    """从对数凹目标精确采样一次"""
    return AdaptiveRejectionSampler(target).draw(rng)


def _offset_within(center: float, delta: float, bound: float, k: int) -> float:
    """从center出发偏移delta，越界时改为向边界按 2^-k 逼近"""
    x = center + delta
    if math.isfinite(bound) and (x - bound) * (center - bound) <= 0:
        x = bound + (center - bound) * 0.5 ** (k + 1)
    return x


def bracket_abscissae(
    dlog_pdf: Callable[[float], float],
    center: float,
    lower: float = -math.inf,
    upper: float = math.inf,
    step: float = 1.0,
    max_expansions: int = MAX_EXPANSIONS,
) -> Tuple[float, ...]:
    """
    以上一次迭代的值为中心选取初始横坐标

    从 center±step 开始几何扩张，直到无界一侧的导数符号满足包络条件

    Returns:
        排好序的 (left, center, right)

    Raises:
        ARSError: 扩张次数用尽仍无法界住密度
    """
    if not (lower < center < upper):
        center = _clamp_inside(center, lower, upper)

    def expand(direction: float, bound: float, want_positive: bool) -> float:
        delta = step
        for k in range(max_expansions + 1):
            x = _offset_within(center, direction * delta, bound, k)
            slope = dlog_pdf(x)
            if math.isfinite(bound) or (slope > 0 if want_positive else slope < 0):
                return x
            delta *= 2.0
            logger.debug(f"ARS初始点扩张: x={x:.4g}, slope={slope:.4g}")
        raise ARSError("unbounded envelope")

    left = expand(-1.0, lower, True)
    right = expand(1.0, upper, False)
    return tuple(sorted({left, center, right}))


def _clamp_inside(x: float, lower: float, upper: float) -> float:
    if math.isfinite(lower) and x <= lower:
        return lower + 1.0 if math.isinf(upper) else 0.5 * (lower + upper)
    if math.isfinite(upper) and x >= upper:
        return upper - 1.0 if math.isinf(lower) else 0.5 * (lower + upper)
    return x


def sample_log_concave(
    log_pdf: Callable[[float], float],
    dlog_pdf: Callable[[float], float],
    center: float,
    rng: np.random.Generator,
    lower: float = -math.inf,
    upper: float = math.inf,
) -> float:
    """
    以center为热启动点构造目标并采样一次（Gibbs中三个超参数都用它）
    """
    xs: Sequence[float] = bracket_abscissae(dlog_pdf, center, lower, upper)
    target = LogConcaveTarget(log_pdf, dlog_pdf, tuple(xs), lower, upper)
    return ars_sample(target, rng)
