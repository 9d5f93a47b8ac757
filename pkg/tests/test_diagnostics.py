"""
链诊断测试：自相关时间、ESS、Geweke与簇数统计
"""
import json

import numpy as np
import pandas as pd
import pytest
from scipy.signal import lfilter

from src.core.diagnostics import (
    TRACE_COLUMNS,
    autocorrelation,
    autocorrelation_time,
    cluster_count_histogram,
    diagnose_chain,
    effective_sample_size,
    geweke_z,
    monitored_variables,
    save_diagnostics,
    save_traces,
)
from src.models.errors import DataError


def _ar1(phi: float, n: int, seed: int) -> np.ndarray:
    eps = np.random.default_rng(seed).standard_normal(n)
    return lfilter([1.0], [1.0, -phi], eps)


class TestAutocorrelation:
    def test_lag_zero(self):
        rho = autocorrelation(np.random.default_rng(0).normal(size=200))
        assert rho[0] == pytest.approx(1.0)
        assert rho.shape == (200,)

    def test_iid_tau(self):
        x = np.random.default_rng(1).normal(size=10_000)
        assert autocorrelation_time(x) == pytest.approx(1.0, abs=0.15)

    def test_ar1_tau(self):
        # (1+φ)/(1-φ) = 3
        assert autocorrelation_time(_ar1(0.5, 100_000, 2)) == pytest.approx(3.0, abs=0.3)

    def test_untruncated_not_smaller(self):
        x = _ar1(0.5, 5_000, 3)
        assert autocorrelation_time(x, noise_band=None) >= autocorrelation_time(x)

    def test_max_lag_caps_sum(self):
        x = _ar1(0.9, 5_000, 4)
        assert autocorrelation_time(x, max_lag=1) == pytest.approx(
            1 + 2 * abs(autocorrelation(x)[1])
        )

    def test_constant_series(self):
        with pytest.raises(DataError, match="zero variance"):
            autocorrelation_time(np.full(50, 2.0))

    def test_non_finite(self):
        x = np.ones(10)
        x[3] = np.inf
        with pytest.raises(DataError):
            autocorrelation_time(x)


class TestEffectiveSampleSize:
    def test_iid(self):
        x = np.random.default_rng(5).normal(size=10_000)
        assert effective_sample_size(x) == pytest.approx(10_000, rel=0.15)

    def test_ar1(self):
        assert effective_sample_size(_ar1(0.5, 100_000, 6)) == pytest.approx(100_000 / 3, rel=0.1)

    def test_burn_in_dropped(self):
        x = np.random.default_rng(7).normal(size=10_000)
        assert effective_sample_size(x, burn_in=5_000) == pytest.approx(5_000, rel=0.15)

    def test_too_short_after_burn_in(self):
        with pytest.raises(DataError):
            effective_sample_size(np.arange(10.0), burn_in=9)


class TestGeweke:
    def test_trend_detected(self):
        rng = np.random.default_rng(8)
        x = np.linspace(0.0, 5.0, 2_000) + rng.normal(size=2_000)
        assert abs(geweke_z(x)) > 3.0

    def test_stationary_iid(self):
        rng = np.random.default_rng(9)
        z = np.array([geweke_z(rng.normal(size=1_000)) for _ in range(500)])
        assert np.mean(np.abs(z) < 3.0) >= 0.97

    @pytest.mark.slow
    def test_stationary_iid_thousand_trials(self):
        rng = np.random.default_rng(12)
        z = np.array([geweke_z(rng.normal(size=2_000)) for _ in range(1_000)])
        assert np.mean(np.abs(z) < 3.0) >= 0.99

    def test_too_short(self):
        with pytest.raises(DataError, match="too short"):
            geweke_z(np.random.default_rng(0).normal(size=99))

    def test_invalid_fractions(self):
        with pytest.raises(DataError):
            geweke_z(np.random.default_rng(0).normal(size=200), 0.6, 0.5)


class TestClusterCounts:
    def test_histogram_and_occupancy(self, state_factory, chain_factory):
        chain = chain_factory(
            [
                state_factory([0, 0, 0, 0]),
                state_factory([0, 0, 1, 1]),
                state_factory([0, 0, 0, 1]),
                state_factory([0, 1, 2, 2]),
            ]
        )
        summary = cluster_count_histogram(chain)
        assert summary.histogram == {1: 0.25, 2: 0.5, 3: 0.25}
        assert summary.mode == 2
        np.testing.assert_allclose(summary.occupancy_mean, [2.75, 1.0, 0.25])

    def test_mode_tie_takes_smaller(self, state_factory, chain_factory):
        chain = chain_factory([state_factory([0, 1]), state_factory([0, 0])])
        assert cluster_count_histogram(chain).mode == 1


class TestDiagnoseChain:
    @pytest.fixture
    def noisy_chain(self, state_factory, chain_factory):
        rng = np.random.default_rng(10)
        states = [
            state_factory(
                [0, 0, 1],
                coefficients=rng.normal(size=3),
                noise_precision=float(rng.gamma(2.0)),
                alpha=float(rng.gamma(2.0)),
            )
            for _ in range(300)
        ]
        return chain_factory(states, burn_in=100)

    def test_report(self, noisy_chain):
        report = diagnose_chain(noisy_chain)
        assert set(monitored_variables(noisy_chain)) <= set(report)
        assert report["s_y"]["tau"] == pytest.approx(1.0, abs=0.5)
        assert report["s_y"]["ess"] > 100
        assert report["alpha"]["geweke_z"] is not None
        # 超参数在构造的链上是常数
        assert report["mu0_f"]["tau"] is None
        assert "zero variance" in report["mu0_f"]["error"]
        assert report["cluster_counts"]["mode"] == 2

    def test_files(self, tmp_path, noisy_chain):
        save_diagnostics(tmp_path / "diagnostics.json", diagnose_chain(noisy_chain))
        data = json.loads((tmp_path / "diagnostics.json").read_text(encoding="utf-8"))
        assert "b_mean" in data

        save_traces(tmp_path / "traces.csv", noisy_chain)
        frame = pd.read_csv(tmp_path / "traces.csv")
        assert frame.columns.tolist() == ["iteration", "c"] + TRACE_COLUMNS
        assert len(frame) == 300
