"""
测试公共夹具
小规模数据集、手工构造的模型状态与链
"""
from typing import Callable, List, Optional, Sequence

import numpy as np
import pytest

from src.models.chain import Chain, ChainRecord
from src.models.config import ChainConfig, ScenarioConfig
from src.models.dataset import DataMoments, Dataset, make_dataset
from src.models.state import (
    BehaviorClusterParams,
    BehaviorHypers,
    FeatureClusterParams,
    FeatureHypers,
    ModelState,
)
from src.services.datagen import gen_agreement


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_scenario() -> ScenarioConfig:
    """10个用户、20个训练帖子的视图一致场景"""
    return ScenarioConfig(n_users=10, n_threads_train=20, n_threads_test=8, seed=3)


@pytest.fixture
def tiny_dataset(tiny_scenario) -> Dataset:
    return gen_agreement(tiny_scenario).train


@pytest.fixture
def quick_chain_config() -> ChainConfig:
    return ChainConfig(n_iter=12, burn_in=6, seed=7)


@pytest.fixture
def unit_moments() -> Callable[[int, int], DataMoments]:
    """各项统计量都取单位值"""

    def build(n_users: int, dim: int = 2) -> DataMoments:
        return DataMoments(
            feat_mean=np.zeros(dim),
            feat_cov=np.eye(dim),
            coef_mle=np.zeros(n_users),
            coef_mle_mean=0.0,
            coef_mle_var=1.0,
            length_var=1.0,
        )

    return build


@pytest.fixture
def state_factory() -> Callable[..., ModelState]:
    """
    按标签构造一个合法状态

    簇参数默认：特征均值为0、精度为单位阵；行为均值为0、精度为1
    """

    def build(
        labels: Sequence[int],
        coefficients: Optional[Sequence[float]] = None,
        noise_precision: float = 1.0,
        alpha: float = 1.0,
        dim: int = 2,
        feature_means: Optional[Sequence[Sequence[float]]] = None,
        behavior: Optional[Sequence[tuple]] = None,
        feature_hypers: Optional[FeatureHypers] = None,
        behavior_hypers: Optional[BehaviorHypers] = None,
    ) -> ModelState:
        z = np.asarray(labels, dtype=np.int64)
        n_clusters = int(z.max()) + 1 if z.size else 1
        if feature_means is None:
            feature_means = [np.zeros(dim)] * n_clusters
        if behavior is None:
            behavior = [(0.0, 1.0)] * n_clusters
        return ModelState(
            assignments=z,
            feature_params=[
                FeatureClusterParams(mean=np.asarray(m, dtype=float), precision=np.eye(dim))
                for m in feature_means
            ],
            behavior_params=[BehaviorClusterParams(mean=m, precision=s) for m, s in behavior],
            coefficients=(
                np.zeros(z.shape[0])
                if coefficients is None
                else np.asarray(coefficients, dtype=float)
            ),
            noise_precision=noise_precision,
            feature_hypers=feature_hypers
            or FeatureHypers(mu0=np.zeros(dim), R0=np.eye(dim), W0=np.eye(dim), beta0=float(dim)),
            behavior_hypers=behavior_hypers
            or BehaviorHypers(mu0=0.0, r0=1.0, w0=1.0, beta0=1.0),
            alpha=alpha,
        )

    return build


@pytest.fixture
def chain_factory() -> Callable[[List[ModelState]], Chain]:
    """把若干状态包成一条全部保留（无预烧期）的链"""

    def build(states: List[ModelState], burn_in: int = 0) -> Chain:
        cfg = ChainConfig(n_iter=max(len(states), burn_in + 1), burn_in=burn_in)
        records = [ChainRecord(iteration=i + 1, state=s) for i, s in enumerate(states)]
        return Chain(config=cfg, dataset_digest="test", records=records)

    return build


@pytest.fixture
def blob_dataset() -> Dataset:
    """两团相距很远的特征点，没有帖子"""
    rng = np.random.default_rng(0)
    a = np.vstack([rng.normal(0.0, 0.1, (6, 2)), rng.normal(10.0, 0.1, (6, 2))])
    return make_dataset(a, np.zeros((12, 0)), np.zeros(0))
