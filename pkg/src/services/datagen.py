"""
数据生成服务模块
三个实验场景（视图一致、视图不一致、iris）的合成数据与训练/测试划分
"""
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from src.models.config import ScenarioConfig, config_to_plain
from src.models.dataset import LABELS_FILE, Dataset, make_dataset, save_dataset, save_labels
from src.models.errors import DataError
from src.utils.logger import get_logger

logger = get_logger(__name__)

N_BEHAVIOR_CLUSTERS = 5
IRIS_PATH = Path(__file__).resolve().parents[1] / "data" / "iris.csv"
IRIS_SHA256 = "9cc1c345c71bcc9b486b74cbf6063fa66f4bb5e0f603a4b3c3471ec2e5e8e355"
IRIS_FEATURES = ["sepal_width", "petal_length", "petal_width"]
IRIS_SPECIES = ["setosa", "versicolor", "virginica"]
IRIS_COEF_MEANS = (-25.0, 0.0, 25.0)

FEATURE_LABELS_FILE = "labels_feature.csv"
SCENARIO_FILE = "scenario.json"


@dataclass(frozen=True, eq=False)
class ScenarioData:
    """
    一个场景的训练集、测试集与真实簇标签

    训练集与测试集共享用户特征与系数，只有参与矩阵和帖子长度不同
    """
    train: Dataset
    test: Dataset
    labels: np.ndarray                          # 1..K，行为视图的真实簇
    coefficients: np.ndarray                    # 真实的 b
    feature_labels: Optional[np.ndarray] = None  # 仅视图不一致场景：特征视图的真实簇


def circle_mean(z: int) -> np.ndarray:
    """第z个簇的特征均值 (cos(2πz/5), sin(2πz/5))"""
    angle = 2.0 * math.pi * z / N_BEHAVIOR_CLUSTERS
    return np.array([math.cos(angle), math.sin(angle)])


def coefficient_mean(z: int) -> float:
    """第z个簇的系数均值 -50 + 25z"""
    return -50.0 + 25.0 * z


def balanced_labels(n_users: int) -> np.ndarray:
    """
    5个等大的簇（按块排列）

    Raises:
        DataError: 用户数不能被5整除
    """
    if n_users % N_BEHAVIOR_CLUSTERS != 0:
        raise DataError(
            f"n_users={n_users} is not divisible by {N_BEHAVIOR_CLUSTERS}", index=n_users
        )
    return np.repeat(np.arange(1, N_BEHAVIOR_CLUSTERS + 1), n_users // N_BEHAVIOR_CLUSTERS)


def simulate_threads(
    coefficients: np.ndarray,
    n_threads: int,
    cfg: ScenarioConfig,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    p_ut ~ Bernoulli(participation_prob)，y_t ~ N(p_tᵀb, σ_y²)

    Returns:
        (U×T 参与矩阵, T 维帖子长度)
    """
    participation = (
        rng.random((coefficients.shape[0], n_threads)) < cfg.participation_prob
    ).astype(float)
    lengths = participation.T @ coefficients + cfg.length_noise_sd * rng.standard_normal(n_threads)
    return participation, lengths


def _assemble(
    features: np.ndarray,
    coefficients: np.ndarray,
    cfg: ScenarioConfig,
    rng: np.random.Generator,
) -> Tuple[Dataset, Dataset]:
    p_train, y_train = simulate_threads(coefficients, cfg.n_threads_train, cfg, rng)
    p_test, y_test = simulate_threads(coefficients, cfg.n_threads_test, cfg, rng)
    return make_dataset(features, p_train, y_train), make_dataset(features, p_test, y_test)


def _cluster_coefficients(labels: np.ndarray, means, sd: float, rng) -> np.ndarray:
    centers = np.array([means[z - 1] for z in labels], dtype=float)
    return centers + sd * rng.standard_normal(labels.shape[0])


def gen_agreement(cfg: ScenarioConfig) -> ScenarioData:
    """
    视图一致：两个视图都是同样的5个簇

    Raises:
        DataError: 用户数不能被5整除
    """
    rng = np.random.default_rng(cfg.seed)
    labels = balanced_labels(cfg.n_users)
    centers = np.stack([circle_mean(z) for z in labels])
    features = centers + cfg.feature_noise_sd * rng.standard_normal(centers.shape)
    coef_means = [coefficient_mean(z) for z in range(1, N_BEHAVIOR_CLUSTERS + 1)]
    coefficients = _cluster_coefficients(labels, coef_means, cfg.coef_noise_sd, rng)
    train, test = _assemble(features, coefficients, cfg, rng)
    return ScenarioData(train=train, test=test, labels=labels, coefficients=coefficients)


def gen_disagreement(cfg: ScenarioConfig) -> ScenarioData:
    """
    视图不一致：行为视图5个簇，特征视图中第4、5簇共用同一均值（4个簇）

    Raises:
        DataError: 用户数不能被5整除
    """
    rng = np.random.default_rng(cfg.seed)
    labels = balanced_labels(cfg.n_users)
    feature_labels = np.minimum(labels, N_BEHAVIOR_CLUSTERS - 1)
    centers = np.stack([circle_mean(z) for z in feature_labels])
    features = centers + cfg.feature_noise_sd * rng.standard_normal(centers.shape)
    coef_means = [coefficient_mean(z) for z in range(1, N_BEHAVIOR_CLUSTERS + 1)]
    coefficients = _cluster_coefficients(labels, coef_means, cfg.coef_noise_sd, rng)
    train, test = _assemble(features, coefficients, cfg, rng)
    return ScenarioData(
        train=train,
        test=test,
        labels=labels,
        coefficients=coefficients,
        feature_labels=feature_labels,
    )


def load_iris(path: Path = IRIS_PATH, verify: bool = True) -> pd.DataFrame:
    """
    读取内置的150行 iris 数据

    Raises:
        DataError: 文件缺失或校验和不符
    """
    if not path.exists():
        raise DataError(f"missing iris fixture: {path}", index=str(path))
    raw = path.read_bytes()
    if verify and hashlib.sha256(raw).hexdigest() != IRIS_SHA256:
        raise DataError(f"iris fixture checksum mismatch: {path}", index=str(path))
    frame = pd.read_csv(path)
    if frame.shape[0] != 150:
        raise DataError(f"iris fixture must have 150 rows, got {frame.shape[0]}")
    return frame


def gen_iris(cfg: ScenarioConfig, path: Path = IRIS_PATH) -> ScenarioData:
    """
    iris场景：随机选取 iris_subset 行，特征为 (萼片宽, 花瓣长, 花瓣宽)，
    真实簇为物种，系数均值按物种取 -25/0/25
    """
    frame = load_iris(path)
    rng = np.random.default_rng(cfg.seed)
    rows = np.sort(rng.choice(frame.shape[0], size=cfg.iris_subset, replace=False))
    subset = frame.iloc[rows]
    features = subset[IRIS_FEATURES].to_numpy(dtype=float)
    labels = np.array([IRIS_SPECIES.index(s) + 1 for s in subset["species"]], dtype=np.int64)
    coefficients = _cluster_coefficients(labels, IRIS_COEF_MEANS, cfg.coef_noise_sd, rng)
    train, test = _assemble(features, coefficients, cfg, rng)
    return ScenarioData(train=train, test=test, labels=labels, coefficients=coefficients)


GENERATORS = {
    "agreement": gen_agreement,
    "disagreement": gen_disagreement,
    "iris": gen_iris,
}


def generate(cfg: ScenarioConfig) -> ScenarioData:
    """按场景名分派"""
    data = GENERATORS[cfg.scenario](cfg)
    logger.info(
        f"已生成场景 {cfg.scenario}: U={data.train.n_users}, "
        f"T_train={data.train.n_threads}, T_test={data.test.n_threads}, seed={cfg.seed}"
    )
    return data


def write_scenario(out_dir: Path, data: ScenarioData, cfg: ScenarioConfig) -> None:
    """
    写出 train/ 与 test/ 两个数据目录、labels.csv 以及 scenario.json
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    save_dataset(out_dir / "train", data.train)
    save_dataset(out_dir / "test", data.test)
    save_labels(out_dir / LABELS_FILE, data.labels)
    if data.feature_labels is not None:
        save_labels(out_dir / FEATURE_LABELS_FILE, data.feature_labels)
    with open(out_dir / SCENARIO_FILE, "w", encoding="utf-8") as f:
        json.dump(config_to_plain(cfg), f, indent=2)
