"""
Gibbs采样模块
链初始化、单次完整扫描、链的执行/抽稀/增量持久化与断点续跑
"""
import json
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np
from sklearn.cluster import KMeans

from src.core.assignment import resample_alpha, resample_assignments
from src.core.behavior_view import (
    sample_behavior_cluster_params,
    sample_behavior_hypers,
    sample_behavior_hypers_prior,
    sample_coefficients,
    sample_noise_precision,
)
from src.core.distributions import RngStreams
from src.core.feature_view import (
    sample_feature_cluster_params,
    sample_feature_hypers,
    sample_feature_hypers_prior,
)
from src.models.chain import Chain, ChainRecord
from src.models.config import ChainConfig
from src.models.dataset import DataMoments, Dataset, chain_moments, dataset_digest
from src.models.errors import ChainAbortedError, DataError, NumericalError
from src.models.state import ModelState
from src.services.chain_store import ChainStore, chain_header
from src.utils.logger import chain_context, get_logger

logger = get_logger(__name__)

# 每次迭代后的回调：(迭代号, 当前状态)
IterationCallback = Callable[[int, ModelState], None]


# ==================== 初始化 ====================

def initial_labels(d: Dataset, cfg: ChainConfig, rng: np.random.Generator) -> np.ndarray:
    """
    初始簇分配（0..c-1）

    Args:
        d: 数据集
        cfg: 链配置
        rng: 随机数生成器（只用来派生k-means种子）

    Returns:
        U维整数数组

    Raises:
        DataError: k-means 的k大于用户数，或初始簇数超过固定K
    """
    init = cfg.init
    variant = cfg.variant
    if variant.kind == "single" or init.kind == "all-in-one":
        return np.zeros(d.n_users, dtype=np.int64)

    if init.k > d.n_users:
        raise DataError(f"kmeans init with k={init.k} but only {d.n_users} users", index=init.k)
    seed = int(rng.integers(2**31 - 1))
    km = KMeans(n_clusters=init.k, n_init=20, max_iter=100, random_state=seed)
    raw = km.fit_predict(d.features)
    # 按首次出现顺序重新编号
    _, first, inverse = np.unique(raw, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    labels = order[inverse].astype(np.int64)

    n_fixed = variant.n_fixed
    if n_fixed is not None and labels.max() + 1 > n_fixed:
        raise DataError(
            f"kmeans init produced {labels.max() + 1} clusters but {variant.label} allows {n_fixed}"
        )
    return labels


def init_state(
    d: Dataset,
    cfg: ChainConfig,
    rng: np.random.Generator,
    moments: Optional[DataMoments] = None,
) -> ModelState:
    """
    初始化链状态

    超参数与簇参数均从先验采样；b = b̂，s_y = 1/σ_0²，α = 1。
    dual-fixed 始终保有K个簇，不足部分为空簇。

    Args:
        d: 数据集
        cfg: 链配置
        rng: 初始化用的随机数流
        moments: 数据统计量，None时由数据计算

    Returns:
        初始状态
    """
    m = moments if moments is not None else chain_moments(d, cfg.ridge_lambda)
    labels = initial_labels(d, cfg, rng)

    n_clusters = int(labels.max()) + 1
    if cfg.variant.n_fixed is not None:
        n_clusters = cfg.variant.n_fixed

    fh = sample_feature_hypers_prior(m, rng)
    bh = sample_behavior_hypers_prior(m, rng)
    empty_a = np.empty((0, d.n_dims))
    empty_b = np.empty(0)
    feature_params = [sample_feature_cluster_params(empty_a, fh, rng) for _ in range(n_clusters)]
    behavior_params = [
        sample_behavior_cluster_params(empty_b, bh, rng) for _ in range(n_clusters)
    ]

    state = ModelState(
        assignments=labels,
        feature_params=feature_params,
        behavior_params=behavior_params,
        coefficients=np.array(m.coef_mle, dtype=float, copy=True),
        noise_precision=1.0 / m.length_var,
        feature_hypers=fh,
        behavior_hypers=bh,
        alpha=1.0,
    )
    state.validate(allow_empty=not cfg.variant.is_dp)
    return state


# ==================== 单次扫描 ====================

def gibbs_step(
    state: ModelState,
    d: Dataset,
    m: DataMoments,
    cfg: ChainConfig,
    streams: RngStreams,
) -> ModelState:
    """
    一次完整的Gibbs迭代

    顺序：特征簇参数 → 特征超参数 → 行为簇参数 → 行为超参数 → b → s_y → z（含α）。
    single 变体跳过特征视图与簇分配。

    Args:
        state: 当前状态（不会被修改）
        d: 数据集
        m: 数据统计量
        cfg: 链配置
        streams: 各变量组的随机数流

    Returns:
        新状态
    """
    new = state.copy()
    single = cfg.variant.kind == "single"

    if not single:
        fh = new.feature_hypers
        new.feature_params = [
            sample_feature_cluster_params(d.features[new.members(k)], fh, streams.feature, p)
            for k, p in enumerate(new.feature_params)
        ]
        new.feature_hypers = sample_feature_hypers(
            new.feature_params, m, new.feature_hypers, streams.feature
        )

    bh = new.behavior_hypers
    new.behavior_params = [
        sample_behavior_cluster_params(new.coefficients[new.members(k)], bh, streams.behavior, p)
        for k, p in enumerate(new.behavior_params)
    ]
    new.behavior_hypers = sample_behavior_hypers(
        new.behavior_params, m, new.behavior_hypers, streams.behavior
    )

    new.coefficients = sample_coefficients(new, d, streams.coefficients)
    new.noise_precision = sample_noise_precision(d, new.coefficients, m, streams.noise)

    if not single:
        resample_assignments(new, d, cfg.assignment, streams.assignment)
        new.alpha = resample_alpha(new.n_active, d.n_users, new.alpha, streams.alpha)
    return new


# ==================== 链 ====================

class GibbsSampler:
    """
    单条马尔可夫链的执行器

    功能：
    - 初始化或从断点恢复
    - 逐次迭代、按 thin 抽稀记录
    - 每条记录增量写入链文件并更新断点
    - 每 log_every 次迭代输出进度日志
    """

    def __init__(
        self,
        dataset: Dataset,
        config: ChainConfig,
        moments: Optional[DataMoments] = None,
    ):
        """
        Args:
            dataset: 训练数据
            config: 链配置
            moments: 数据统计量，None时由数据计算
        """
        self.dataset = dataset
        self.config = config
        self.moments = (
            moments if moments is not None else chain_moments(dataset, config.ridge_lambda)
        )
        self.digest = dataset_digest(dataset)
        self.streams = RngStreams(config.seed)

    def _try_resume(self, store: ChainStore) -> Optional[List[ChainRecord]]:
        """
        检查已有链文件能否续跑

        Returns:
            已写出的记录；不能续跑时为None
        """
        if not store.chain_path.exists():
            return None
        header, records = store.read()
        expected = json.loads(json.dumps(chain_header(self.config, self.digest)))
        if header != expected:
            logger.warning("链文件表头与当前配置或数据不一致，从头开始采样")
            return None

        checkpoint = store.load_checkpoint()
        if checkpoint is None or not records:
            return None
        if checkpoint.n_records != len(records) or checkpoint.iteration != records[-1].iteration:
            logger.warning(
                f"断点 (iter={checkpoint.iteration}, n={checkpoint.n_records}) "
                f"与链文件 ({len(records)} 条记录) 不一致，从头开始采样"
            )
            return None

        self.streams.set_state(checkpoint.rng_state)
        store.reopen(len(records) + 1)
        logger.info(f"从第 {checkpoint.iteration} 次迭代续跑 ({len(records)} 条已有记录)")
        return records

    def run(
        self,
        out_path: Optional[Path] = None,
        resume: bool = False,
        on_iteration: Optional[IterationCallback] = None,
    ) -> Chain:
        """
        运行整条链

        Args:
            out_path: 链文件路径，None则只保存在内存
            resume: 链文件存在且与配置一致时从断点继续
            on_iteration: 每次迭代后的回调（进度显示用）

        Returns:
            Chain（包含预烧期记录）

        Raises:
            ChainAbortedError: 某次迭代数值失败，带最后一次成功的迭代号
        """
        cfg = self.config
        d = self.dataset
        allow_empty = not cfg.variant.is_dp
        store = ChainStore(out_path) if out_path is not None else None

        records: List[ChainRecord] = []
        state: Optional[ModelState] = None
        start = 0
        if store is not None and resume:
            resumed = self._try_resume(store)
            if resumed is not None:
                records = resumed
                state = records[-1].state
                start = records[-1].iteration
                if on_iteration is not None:
                    on_iteration(start, state)

        if state is None:
            self.streams = RngStreams(cfg.seed)
            state = init_state(d, cfg, self.streams.init, self.moments)
            if store is not None:
                store.create(chain_header(cfg, self.digest))

        logger.info(
            f"开始采样: variant={cfg.variant.label}, U={d.n_users}, T={d.n_threads}, "
            f"seed={cfg.seed}, iters={start + 1}..{cfg.n_iter}"
        )
        try:
            for it in range(start + 1, cfg.n_iter + 1):
                try:
                    state = gibbs_step(state, d, self.moments, cfg, self.streams)
                except Exception as e:
                    # 已写出的记录与断点保持不变，可以 --resume 排查
                    reason = str(e)
                    if not isinstance(e, NumericalError):
                        reason = f"{type(e).__name__}: {reason}"
                    raise ChainAbortedError(
                        f"chain aborted at iteration {it}: {reason}", iteration=it - 1, cause=e
                    ) from e

                if it % cfg.thin == 0:
                    state.validate(allow_empty=allow_empty)
                    record = ChainRecord(iteration=it, state=state)
                    records.append(record)
                    if store is not None:
                        store.append(record, self.streams.get_state())

                if it % cfg.log_every == 0:
                    logger.info(
                        f"iter {it}/{cfg.n_iter}: c={state.n_active}, "
                        f"s_y={state.noise_precision:.4g}, alpha={state.alpha:.4g}"
                    )
                if on_iteration is not None:
                    on_iteration(it, state)
        finally:
            if store is not None:
                store.close()

        logger.info(f"采样完成: {len(records)} 条记录")
        return Chain(config=cfg, dataset_digest=self.digest, records=records)


def run_chain(
    d: Dataset,
    cfg: ChainConfig,
    out_path: Optional[Path] = None,
    resume: bool = False,
    on_iteration: Optional[IterationCallback] = None,
    moments: Optional[DataMoments] = None,
) -> Chain:
    """
    初始化并运行一条链

    Args:
        d: 训练数据
        cfg: 链配置
        out_path: 链文件路径（JSON-lines），None则不落盘
        resume: 是否尝试断点续跑
        on_iteration: 每次迭代后的回调
        moments: 数据统计量，None时由数据计算

    Returns:
        Chain
    """
    with chain_context(cfg.variant.label, cfg.seed):
        sampler = GibbsSampler(d, cfg, moments)
        return sampler.run(out_path, resume=resume, on_iteration=on_iteration)
