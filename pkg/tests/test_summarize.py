"""
共簇概率、Dahl聚类与ARI测试
"""
import json

import numpy as np
import pandas as pd
import pytest

from src.core import summarize
from src.core.summarize import (
    CLUSTERING_FILE,
    METRICS_FILE,
    PAIRWISE_FILE,
    adjusted_rand_index,
    clustering_loss,
    dahl_clustering,
    load_pairwise,
    pairwise_matrix,
    posterior_mode_clusters,
    summarize_chain,
)
from src.models.errors import DataError


class TestARI:
    def test_identical_up_to_relabeling(self):
        assert adjusted_rand_index([1, 1, 2, 2, 3], [3, 3, 1, 1, 2]) == pytest.approx(1.0)

    def test_single_cluster_estimate(self):
        assert adjusted_rand_index([1, 1, 2, 2], [1, 1, 1, 1]) == pytest.approx(0.0)

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            adjusted_rand_index([1, 2, 3], [1, 2])


class TestPairwise:
    def test_half(self, state_factory, chain_factory):
        chain = chain_factory([state_factory([0, 0]), state_factory([0, 1])])
        probs = pairwise_matrix(chain).probs
        np.testing.assert_allclose(probs, [[1.0, 0.5], [0.5, 1.0]])

    def test_symmetric_unit_diagonal(self, state_factory, chain_factory):
        z = np.random.default_rng(0).integers(0, 3, size=(20, 8))
        chain = chain_factory([state_factory(np.unique(row, return_inverse=True)[1]) for row in z])
        probs = pairwise_matrix(chain).probs
        np.testing.assert_array_equal(probs, probs.T)
        np.testing.assert_array_equal(np.diag(probs), np.ones(8))

    def test_burn_in_excluded(self, state_factory, chain_factory):
        chain = chain_factory([state_factory([0, 1]), state_factory([0, 0])], burn_in=1)
        assert pairwise_matrix(chain).probs[0, 1] == 1.0

    def test_dense_limit(self, monkeypatch, state_factory, chain_factory):
        monkeypatch.setattr(summarize, "MAX_PAIRWISE_USERS", 2)
        with pytest.raises(DataError, match="dense limit"):
            pairwise_matrix(chain_factory([state_factory([0, 0, 1])]))


class TestDahl:
    def test_majority_sample(self, state_factory, chain_factory):
        a = state_factory([0, 0, 1])
        b = state_factory([0, 1, 1])
        labels = dahl_clustering(chain_factory([a, a, b]))
        np.testing.assert_array_equal(labels, [1, 1, 2])

    def test_tie_takes_earliest(self, state_factory, chain_factory):
        a = state_factory([0, 0, 1])
        b = state_factory([0, 1, 1])
        np.testing.assert_array_equal(dahl_clustering(chain_factory([b, a])), [1, 2, 2])

    def test_minimizes_loss(self, state_factory, chain_factory):
        rows = np.random.default_rng(1).integers(0, 3, size=(15, 6))
        states = [state_factory(np.unique(row, return_inverse=True)[1]) for row in rows]
        chain = chain_factory(states)
        pm = pairwise_matrix(chain)
        chosen = clustering_loss(dahl_clustering(chain, pm) - 1, pm)
        assert all(chosen <= clustering_loss(s.assignments, pm) + 1e-12 for s in states)

    def test_mode_tie_takes_fewer_clusters(self, state_factory, chain_factory):
        chain = chain_factory([state_factory([0, 0]), state_factory([0, 1])])
        assert posterior_mode_clusters(chain) == 1


class TestSummarizeChain:
    def test_writes_outputs(self, tmp_path, state_factory, chain_factory):
        a = state_factory([0, 0, 1, 1])
        chain = chain_factory([a, a, state_factory([0, 0, 0, 1])])
        metrics = summarize_chain(chain, tmp_path, z_true=np.array([1, 1, 2, 2]), nll=12.5)

        assert metrics["ari"] == pytest.approx(1.0)
        assert metrics["nll"] == 12.5
        assert metrics["n_clusters_posterior_mode"] == 2
        assert json.loads((tmp_path / METRICS_FILE).read_text(encoding="utf-8")) == metrics

        probs = load_pairwise(tmp_path / PAIRWISE_FILE)
        assert probs.shape == (4, 4)
        assert probs[0, 2] == pytest.approx(1 / 3)

        frame = pd.read_csv(tmp_path / CLUSTERING_FILE)
        assert frame["label"].tolist() == [1, 1, 2, 2]

    def test_without_truth(self, tmp_path, state_factory, chain_factory):
        metrics = summarize_chain(chain_factory([state_factory([0, 1])]), tmp_path)
        assert metrics["ari"] is None
        assert metrics["nll"] is None
