"""
合成场景生成测试
"""
import json
import shutil

import numpy as np
import pytest

from src.core.summarize import adjusted_rand_index
from src.models.config import ScenarioConfig
from src.models.dataset import LABELS_FILE, load_dataset, load_labels
from src.models.errors import DataError
from src.services.datagen import (
    FEATURE_LABELS_FILE,
    IRIS_PATH,
    SCENARIO_FILE,
    balanced_labels,
    circle_mean,
    coefficient_mean,
    gen_agreement,
    gen_disagreement,
    gen_iris,
    generate,
    load_iris,
    write_scenario,
)


class TestClusterMeans:
    def test_circle(self):
        np.testing.assert_allclose(circle_mean(1), [0.309017, 0.951057], atol=1e-6)
        np.testing.assert_allclose(circle_mean(5), [1.0, 0.0], atol=1e-12)

    def test_coefficients(self):
        assert [coefficient_mean(z) for z in range(1, 6)] == [-25.0, 0.0, 25.0, 50.0, 75.0]

    def test_balanced_labels(self):
        np.testing.assert_array_equal(balanced_labels(10), [1, 1, 2, 2, 3, 3, 4, 4, 5, 5])
        with pytest.raises(DataError):
            balanced_labels(12)


class TestScenarios:
    def test_agreement_shapes(self):
        data = gen_agreement(ScenarioConfig(n_users=50, n_threads_train=30, n_threads_test=7))
        assert data.train.features.shape == (50, 2)
        assert data.train.participation.shape == (50, 30)
        assert data.test.participation.shape == (50, 7)
        np.testing.assert_array_equal(data.train.features, data.test.features)
        assert set(np.unique(data.train.participation)) <= {0.0, 1.0}

    def test_participation_rate(self):
        data = gen_agreement(ScenarioConfig(n_users=50, n_threads_train=400, seed=1))
        assert data.train.participation.mean() == pytest.approx(0.5, abs=0.02)

    def test_near_noiseless(self):
        cfg = ScenarioConfig(
            n_users=10, feature_noise_sd=1e-9, coef_noise_sd=1e-9, length_noise_sd=1e-9
        )
        data = gen_agreement(cfg)
        expected = np.stack([circle_mean(z) for z in data.labels])
        np.testing.assert_allclose(data.train.features, expected, atol=1e-6)
        np.testing.assert_allclose(
            data.coefficients, [coefficient_mean(z) for z in data.labels], atol=1e-6
        )
        np.testing.assert_allclose(
            data.train.lengths, data.train.participation.T @ data.coefficients, atol=1e-6
        )

    def test_same_seed_same_data(self):
        cfg = ScenarioConfig(n_users=10, seed=4)
        a, b = gen_agreement(cfg), gen_agreement(cfg)
        np.testing.assert_array_equal(a.train.lengths, b.train.lengths)
        np.testing.assert_array_equal(a.test.participation, b.test.participation)

    def test_disagreement_views(self):
        data = gen_disagreement(ScenarioConfig(n_users=50))
        np.testing.assert_array_equal(data.feature_labels, np.minimum(data.labels, 4))
        assert adjusted_rand_index(data.labels, data.feature_labels) == pytest.approx(
            0.7678, abs=1e-4
        )
        # 第4、5簇在特征视图中共用均值
        fourth = data.train.features[data.labels == 4].mean(axis=0)
        fifth = data.train.features[data.labels == 5].mean(axis=0)
        np.testing.assert_allclose(fourth, fifth, atol=0.15)

    def test_dispatch(self):
        data = generate(ScenarioConfig(scenario="disagreement", n_users=10))
        assert data.feature_labels is not None


class TestIris:
    def test_fixture(self):
        frame = load_iris()
        assert frame.shape[0] == 150
        assert sorted(frame["species"].unique()) == ["setosa", "versicolor", "virginica"]

    def test_subset(self):
        data = gen_iris(ScenarioConfig(scenario="iris", iris_subset=50, seed=2))
        assert data.train.features.shape == (50, 3)
        assert set(data.labels.tolist()) <= {1, 2, 3}

    def test_checksum(self, tmp_path):
        tampered = tmp_path / "iris.csv"
        shutil.copy(IRIS_PATH, tampered)
        raw = tampered.read_bytes()
        tampered.write_bytes(raw.replace(b"3.5", b"3.6", 1))
        with pytest.raises(DataError, match="checksum"):
            load_iris(tampered)
        assert load_iris(tampered, verify=False).shape[0] == 150

    def test_missing(self, tmp_path):
        with pytest.raises(DataError, match="missing iris fixture"):
            gen_iris(ScenarioConfig(scenario="iris"), path=tmp_path / "none.csv")


class TestWriteScenario:
    def test_files(self, tmp_path):
        cfg = ScenarioConfig(scenario="disagreement", n_users=10, n_threads_train=6)
        data = generate(cfg)
        write_scenario(tmp_path, data, cfg)

        train = load_dataset(tmp_path / "train")
        np.testing.assert_array_equal(train.lengths, data.train.lengths)
        assert load_dataset(tmp_path / "test").n_threads == cfg.n_threads_test
        np.testing.assert_array_equal(load_labels(tmp_path / LABELS_FILE, 10), data.labels)
        assert (tmp_path / FEATURE_LABELS_FILE).exists()
        scenario = json.loads((tmp_path / SCENARIO_FILE).read_text(encoding="utf-8"))
        assert scenario["scenario"] == "disagreement"
