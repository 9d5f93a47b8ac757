"""
后验预测与测试集负对数似然测试
"""
import numpy as np
import pandas as pd
import pytest
from scipy import stats

from src.core.predict import PREDICTIONS_FILE, negative_loglik, predict_lengths
from src.models.errors import DataError

HALF_LN_2PI = 0.5 * np.log(2 * np.pi)


@pytest.fixture
def point_chain(state_factory, chain_factory):
    """单个样本：b=(1,2)，s_y=1"""
    return chain_factory([state_factory([0, 0], coefficients=[1.0, 2.0])])


class TestNegativeLoglik:
    def test_at_predictive_mean(self, point_chain):
        assert negative_loglik(point_chain, np.ones((2, 1)), [3.0]) == pytest.approx(HALF_LN_2PI)

    def test_sums_over_threads(self, point_chain):
        nll = negative_loglik(point_chain, np.ones((2, 100)), np.full(100, 3.0))
        assert nll == pytest.approx(100 * HALF_LN_2PI)

    def test_matches_brute_force_mixture(self, state_factory, chain_factory):
        samples = [([1.0, 2.0], 1.0), ([0.5, -1.0], 4.0), ([3.0, 0.0], 0.25)]
        chain = chain_factory(
            [state_factory([0, 0], coefficients=b, noise_precision=s) for b, s in samples]
        )
        p_test = np.array([[1.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
        y = np.array([2.0, -0.5, 4.0])
        expected = 0.0
        for t in range(3):
            dens = [
                stats.norm.pdf(y[t], loc=np.dot(p_test[:, t], b), scale=1 / np.sqrt(s))
                for b, s in samples
            ]
            expected -= np.log(np.mean(dens))
        assert negative_loglik(chain, p_test, y) == pytest.approx(expected, rel=1e-10)

    def test_duplicated_samples_do_not_change_result(self, state_factory, chain_factory):
        a = state_factory([0, 0], coefficients=[1.0, 2.0])
        b = state_factory([0, 0], coefficients=[-1.0, 0.0], noise_precision=3.0)
        p_test = np.ones((2, 4))
        y = [0.0, 1.0, 2.0, 3.0]
        once = negative_loglik(chain_factory([a, b]), p_test, y)
        twice = negative_loglik(chain_factory([a, b, a, b]), p_test, y)
        assert once == pytest.approx(twice)

    def test_grows_with_distance(self, point_chain):
        values = [negative_loglik(point_chain, np.ones((2, 1)), [3.0 + s]) for s in (0, 1, 2, 5)]
        assert values == sorted(values)

    def test_burn_in_only_chain(self, state_factory, chain_factory):
        chain = chain_factory([state_factory([0, 0])] * 3, burn_in=3)
        with pytest.raises(DataError, match="empty post-burn-in chain"):
            negative_loglik(chain, np.ones((2, 1)), [0.0])

    def test_row_mismatch(self, point_chain):
        with pytest.raises(DataError):
            negative_loglik(point_chain, np.ones((3, 1)), [0.0])

    def test_length_mismatch(self, point_chain):
        with pytest.raises(DataError):
            negative_loglik(point_chain, np.ones((2, 2)), [0.0])


class TestPredictLengths:
    def test_intervals(self, state_factory, chain_factory, rng):
        chain = chain_factory([state_factory([0, 0], coefficients=[1.0, 2.0])] * 400)
        summary = predict_lengths(chain, np.ones((2, 3)), rng)
        np.testing.assert_allclose(summary.mean, [3.0, 3.0, 3.0])
        assert np.all(summary.lo95 <= summary.lo50)
        assert np.all(summary.lo50 <= summary.hi50)
        assert np.all(summary.hi50 <= summary.hi95)
        np.testing.assert_allclose(summary.hi95 - summary.lo95, 3.92, atol=0.6)
        assert summary.nll_total is None

    def test_with_truth(self, point_chain, rng, tmp_path):
        summary = predict_lengths(point_chain, np.ones((2, 2)), rng, y_test=[3.0, 3.0])
        assert summary.nll_total == pytest.approx(2 * HALF_LN_2PI)

        path = tmp_path / PREDICTIONS_FILE
        summary.save(path)
        frame = pd.read_csv(path)
        assert frame.columns.tolist() == [
            "thread_id", "y_true", "mean", "lo50", "hi50", "lo95", "hi95", "nll",
        ]
        assert frame["thread_id"].tolist() == [1, 2]

    def test_participation_with_no_users(self, point_chain, rng):
        summary = predict_lengths(point_chain, np.zeros((2, 1)), rng)
        assert summary.mean[0] == 0.0
