"""
自适应拒绝采样测试
"""
import math

import numpy as np
import pytest
from scipy import stats

from src.core.ars import (
    AdaptiveRejectionSampler,
    Envelope,
    LogConcaveTarget,
    bracket_abscissae,
    sample_log_concave,
)
from src.models.errors import ARSError


def _std_normal(init=(-1.0, 1.0)) -> LogConcaveTarget:
    return LogConcaveTarget(lambda x: -0.5 * x * x, lambda x: -x, init)


def _gamma_target() -> LogConcaveTarget:
    # G(4, 1)：标准形状2、尺度2，ln p = ln x - x/2
    return LogConcaveTarget(
        lambda x: math.log(x) - 0.5 * x,
        lambda x: 1.0 / x - 0.5,
        (1.0, 5.0),
        lower=0.0,
    )


class TestSampler:
    def test_standard_normal_moments(self, rng):
        draws = AdaptiveRejectionSampler(_std_normal()).sample(rng, size=20_000)
        assert draws.mean() == pytest.approx(0.0, abs=0.03)
        assert draws.var() == pytest.approx(1.0, abs=0.04)

    def test_standard_normal_ks(self, rng):
        draws = AdaptiveRejectionSampler(_std_normal()).sample(rng, size=5_000)
        assert stats.kstest(draws, "norm").pvalue > 1e-3

    def test_gamma_mean(self, rng):
        draws = AdaptiveRejectionSampler(_gamma_target()).sample(rng, size=20_000)
        assert np.all(draws > 0)
        assert draws.mean() == pytest.approx(4.0, rel=0.03)

    @pytest.mark.slow
    def test_standard_normal_long_run(self, rng):
        draws = AdaptiveRejectionSampler(_std_normal()).sample(rng, size=100_000)
        assert draws.mean() == pytest.approx(0.0, abs=0.02)
        assert draws.var() == pytest.approx(1.0, abs=0.03)

    def test_scalar_draw(self, rng):
        assert isinstance(AdaptiveRejectionSampler(_std_normal()).sample(rng), float)

    def test_envelope_is_refined(self, rng):
        sampler = AdaptiveRejectionSampler(_std_normal())
        before = sampler.envelope.n_points
        sampler.sample(rng, size=200)
        assert sampler.envelope.n_points > before


class TestEnvelope:
    def test_upper_hull_dominates(self):
        target = _std_normal((-2.0, 0.3, 1.5))
        env = Envelope(target)
        grid = np.linspace(-6, 6, 241)
        assert np.all(env.upper_hull(grid) >= -0.5 * grid**2 - 1e-9)

    def test_squeeze_below_target(self):
        env = Envelope(_std_normal((-2.0, 0.3, 1.5)))
        for x in np.linspace(-2, 1.5, 30):
            assert env.squeeze(x) + env.offset <= -0.5 * x * x + 1e-9
        assert env.squeeze(3.0) == -math.inf

    def test_not_log_concave(self):
        convex = LogConcaveTarget(lambda x: x * x, lambda x: 2 * x, (-1.0, 1.0))
        with pytest.raises(ARSError, match="log-concave"):
            Envelope(convex)

    def test_unbounded(self):
        with pytest.raises(ARSError, match="unbounded envelope"):
            Envelope(_std_normal((-3.0, -1.0)))

    def test_abscissae_outside_domain(self):
        with pytest.raises(ValueError):
            LogConcaveTarget(lambda x: -x, lambda x: -1.0, (-1.0, 2.0), lower=0.0)


class TestWarmStart:
    def test_bracket_far_from_mode(self):
        xs = bracket_abscissae(lambda x: -x, center=10.0)
        assert -xs[0] > 0 > -xs[-1]
        assert 10.0 in xs

    def test_bracket_respects_lower_bound(self):
        xs = bracket_abscissae(lambda x: 1.0 / x - 0.5, center=0.5, lower=0.0)
        assert xs[0] > 0.0
        assert 1.0 / xs[-1] - 0.5 < 0

    def test_sample_with_center_outside_domain(self, rng):
        draws = [
            sample_log_concave(
                lambda x: math.log(x) - 0.5 * x, lambda x: 1.0 / x - 0.5, -5.0, rng, lower=0.0
            )
            for _ in range(200)
        ]
        assert min(draws) > 0.0

    def test_warm_start_does_not_change_law(self, rng):
        draws = np.array(
            [sample_log_concave(lambda x: -0.5 * x * x, lambda x: -x, 7.0, rng) for _ in range(3000)]
        )
        assert stats.kstest(draws, "norm").pvalue > 1e-3
