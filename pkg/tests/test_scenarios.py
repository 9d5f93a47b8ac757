"""
桌面规模（3000次迭代，前1500次丢弃）的合成场景回归测试

每条链都要跑数十秒，全部标记为 slow
"""
from functools import lru_cache

import numpy as np
import pytest

from src.core.diagnostics import cluster_count_histogram, geweke_z
from src.core.gibbs import run_chain
from src.core.predict import negative_loglik
from src.core.summarize import adjusted_rand_index, dahl_clustering
from src.models.chain import Chain
from src.models.config import ChainConfig, ScenarioConfig
from src.services.datagen import ScenarioData, generate

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2, 3, 4)


@lru_cache(maxsize=None)
def _scenario(scenario: str, n_threads: int, seed: int) -> ScenarioData:
    return generate(
        ScenarioConfig(scenario=scenario, n_users=50, n_threads_train=n_threads, seed=seed)
    )


@lru_cache(maxsize=None)
def _fit(scenario: str, n_threads: int, variant: str, seed: int) -> Chain:
    cfg = ChainConfig.desk_profile(seed=seed, assignment={"variant": variant})
    return run_chain(_scenario(scenario, n_threads, seed).train, cfg)


def _ari(scenario: str, n_threads: int, variant: str, seed: int) -> float:
    chain = _fit(scenario, n_threads, variant, seed)
    return adjusted_rand_index(_scenario(scenario, n_threads, seed).labels, dahl_clustering(chain))


def _nll(scenario: str, n_threads: int, variant: str, seed: int) -> float:
    test = _scenario(scenario, n_threads, seed).test
    return negative_loglik(_fit(scenario, n_threads, variant, seed), test.participation, test.lengths)


def _n_dahl_clusters(scenario: str, n_threads: int, seed: int) -> int:
    return int(np.unique(dahl_clustering(_fit(scenario, n_threads, "dual-dp", seed))).shape[0])


class TestAgreement:
    @pytest.mark.parametrize("variant", ["dual-dp", "dual-fixed:5"])
    def test_recovers_clusters(self, variant):
        aris = [_ari("agreement", 100, variant, s) for s in SEEDS]
        assert np.mean(aris) >= 0.9

    def test_dual_view_needs_fewer_threads(self):
        dual = np.mean([_nll("agreement", 20, "dual-dp", s) for s in SEEDS])
        single = np.mean([_nll("agreement", 20, "single", s) for s in SEEDS])
        assert dual < single

    def test_models_converge_with_many_threads(self):
        means = [
            np.mean([_nll("agreement", 100, v, s) for s in SEEDS])
            for v in ("dual-dp", "dual-fixed:5", "single")
        ]
        assert max(means) <= 1.1 * min(means)

    def test_noise_precision_is_stationary(self):
        stationary = 0
        for s in SEEDS:
            series = _fit("agreement", 100, "dual-dp", s).trace("s_y", retained_only=True)
            stationary += abs(geweke_z(series)) < 2.0
        assert stationary >= 4


class TestDisagreement:
    SEEDS = (0, 1, 2)

    def test_features_dominate_with_few_threads(self):
        counts = [_n_dahl_clusters("disagreement", 10, s) for s in self.SEEDS]
        assert sum(c <= 4 for c in counts) >= 2

    def test_behavior_dominates_with_many_threads(self):
        few = [_n_dahl_clusters("disagreement", 10, s) for s in self.SEEDS]
        many = [_n_dahl_clusters("disagreement", 100, s) for s in self.SEEDS]
        assert sum(c == 5 for c in many) >= 2
        assert np.mean(many) > np.mean(few)


class TestIris:
    @pytest.mark.parametrize("n_threads,expected", [(10, 0.48), (100, 0.79)])
    def test_ari(self, n_threads, expected):
        aris = [_ari("iris", n_threads, "dual-dp", s) for s in SEEDS]
        assert np.mean(aris) == pytest.approx(expected, abs=0.15)

    def test_cluster_count_histogram(self):
        summary = cluster_count_histogram(_fit("iris", 100, "dual-dp", 0))
        assert summary.mode == 3
        assert summary.histogram.get(2, 0.0) > 0.0
