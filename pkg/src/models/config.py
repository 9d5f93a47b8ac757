"""
配置模型模块
使用Pydantic定义类型安全的配置模型
"""
from pathlib import Path
from typing import List, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class ModelVariant(BaseModel):
    """
    模型变体

    - dual-dp: 双视图 + Dirichlet过程（簇数无界）
    - dual-fixed: 双视图 + 固定K个簇
    - single: 只有行为视图（等价于 dual-fixed:1 且不使用特征似然）
    """
    model_config = ConfigDict(frozen=True)

    kind: Literal["dual-dp", "dual-fixed", "single"] = Field(
        default="dual-dp", description="模型种类"
    )
    k: Optional[int] = Field(default=None, ge=1, description="dual-fixed 的簇数K")

    @model_validator(mode="after")
    def check_k(self) -> "ModelVariant":
        """dual-fixed 必须给出K，其他变体不接受K"""
        if self.kind == "dual-fixed" and self.k is None:
            raise ValueError("dual-fixed requires K (e.g. dual-fixed:5)")
        if self.kind != "dual-fixed" and self.k is not None:
            raise ValueError(f"{self.kind} does not take K")
        return self

    @classmethod
    def parse(cls, text: str) -> "ModelVariant":
        """
        解析命令行写法

        Args:
            text: "dual-dp" / "dual-fixed:5" / "single"

        Returns:
            ModelVariant实例
        """
        kind, _, k = text.strip().lower().partition(":")
        return cls(kind=kind, k=int(k) if k else None)

    @property
    def label(self) -> str:
        """输出目录和汇总表使用的名字"""
        return f"{self.kind}:{self.k}" if self.k is not None else self.kind

    @property
    def n_fixed(self) -> Optional[int]:
        """固定簇数（dual-dp 为None）"""
        if self.kind == "single":
            return 1
        return self.k

    @property
    def is_dp(self) -> bool:
        return self.kind == "dual-dp"


class InitStrategy(BaseModel):
    """链的初始化方式"""
    model_config = ConfigDict(frozen=True)

    kind: Literal["all-in-one", "kmeans"] = Field(default="all-in-one", description="初始化方式")
    k: Optional[int] = Field(default=None, ge=1, description="k-means 的簇数")

    @model_validator(mode="after")
    def check_k(self) -> "InitStrategy":
        if self.kind == "kmeans" and self.k is None:
            raise ValueError("kmeans init requires k (e.g. kmeans:10)")
        return self

    @classmethod
    def parse(cls, text: str) -> "InitStrategy":
        """解析 "all-in-one" / "kmeans:10" """
        kind, _, k = text.strip().lower().partition(":")
        return cls(kind=kind, k=int(k) if k else None)

    @property
    def label(self) -> str:
        return f"{self.kind}:{self.k}" if self.k is not None else self.kind


def _coerce_variant(v: object) -> object:
    if isinstance(v, str):
        return ModelVariant.parse(v)
    return v


def _coerce_init(v: object) -> object:
    if isinstance(v, str):
        return InitStrategy.parse(v)
    return v


class AssignmentConfig(BaseModel):
    """簇分配采样配置"""
    m_aux: int = Field(default=3, ge=1, description="辅助空簇个数m（Neal算法8）")
    variant: ModelVariant = Field(default_factory=ModelVariant, description="模型变体")
    feature_weight: float = Field(
        default=1.0, ge=0.0, le=1.0, description="特征视图对数似然的权重(0表示平坦视图)"
    )
    behavior_weight: float = Field(
        default=1.0, ge=0.0, le=1.0, description="行为视图对数似然的权重(0表示平坦视图)"
    )

    @field_validator("variant", mode="before")
    @classmethod
    def parse_variant(cls, v: object) -> object:
        return _coerce_variant(v)

    @property
    def effective_feature_weight(self) -> float:
        """single 变体不使用特征视图"""
        return 0.0 if self.variant.kind == "single" else self.feature_weight


class ChainConfig(BaseModel):
    """Gibbs链配置"""
    model_config = ConfigDict(populate_by_name=True)

    n_iter: int = Field(default=30000, ge=1, description="迭代次数")
    burn_in: int = Field(default=15000, ge=0, description="预烧期迭代数")
    thin: int = Field(default=1, ge=1, description="抽稀间隔")
    seed: int = Field(default=0, ge=0, lt=2**64, description="随机种子")
    init: InitStrategy = Field(default_factory=InitStrategy, description="初始化方式")
    assignment: AssignmentConfig = Field(default_factory=AssignmentConfig)
    ridge_lambda: float = Field(
        default=0.01, gt=0.0, alias="lambda", description="系数MLE的岭回归正则化参数"
    )
    log_every: int = Field(default=1000, ge=1, description="每隔多少次迭代输出一次进度日志")

    @field_validator("init", mode="before")
    @classmethod
    def parse_init(cls, v: object) -> object:
        return _coerce_init(v)

    @model_validator(mode="after")
    def check_burn_in(self) -> "ChainConfig":
        if self.burn_in >= self.n_iter:
            raise ValueError(f"burn_in ({self.burn_in}) must be < n_iter ({self.n_iter})")
        return self

    @classmethod
    def full_profile(cls, **overrides) -> "ChainConfig":
        """30000次迭代，前15000次丢弃"""
        return cls(**{"n_iter": 30000, "burn_in": 15000, **overrides})

    @classmethod
    def desk_profile(cls, **overrides) -> "ChainConfig":
        """桌面规模：3000次迭代，前1500次丢弃"""
        return cls(**{"n_iter": 3000, "burn_in": 1500, **overrides})

    @property
    def variant(self) -> ModelVariant:
        return self.assignment.variant


class ScenarioConfig(BaseModel):
    """合成实验场景配置"""
    scenario: Literal["agreement", "disagreement", "iris"] = Field(
        default="agreement", description="场景: agreement / disagreement / iris"
    )
    n_users: int = Field(default=50, ge=1, description="用户数U")
    n_threads_train: int = Field(default=100, ge=0, description="训练帖子数T")
    n_threads_test: int = Field(default=100, ge=0, description="测试帖子数")
    feature_noise_sd: float = Field(default=0.1, gt=0.0, description="特征噪声标准差(每维)")
    coef_noise_sd: float = Field(default=5.0, gt=0.0, description="系数噪声标准差σ")
    length_noise_sd: float = Field(default=5.0, gt=0.0, description="帖子长度噪声标准差σ_y")
    participation_prob: float = Field(
        default=0.5, gt=0.0, lt=1.0, description="用户参与每个帖子的伯努利概率"
    )
    iris_subset: int = Field(default=50, ge=1, le=150, description="iris 随机子集大小")
    seed: int = Field(default=0, ge=0, description="随机种子")


class LoggingConfig(BaseModel):
    """日志配置"""
    level: str = Field(default="INFO", description="日志级别")
    file: Optional[str] = Field(default=None, description="日志文件路径，为空则只输出到控制台")
    rotation: str = Field(default="10 MB", description="日志轮转大小")
    retention: str = Field(default="7 days", description="日志保留时间")
    serialize: bool = Field(default=False, description="日志文件按JSON-lines写出")


class ExperimentConfig(BaseModel):
    """多模型对比实验配置"""
    name: str = Field(default="experiment", description="实验名称")
    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)
    variants: List[ModelVariant] = Field(
        default_factory=lambda: [
            ModelVariant(kind="dual-dp"),
            ModelVariant(kind="dual-fixed", k=5),
            ModelVariant(kind="single"),
        ],
        description="参与比较的模型变体",
    )
    n_threads: List[int] = Field(default=[10, 50, 100], description="训练帖子数网格")
    reps: int = Field(default=5, ge=1, description="每个格子的重复次数")
    seed: int = Field(default=0, ge=0, description="实验根种子")
    chain: ChainConfig = Field(default_factory=ChainConfig.desk_profile)
    workers: int = Field(default=1, ge=1, le=64, description="并行运行的链数")
    out_dir: str = Field(default="./runs", description="实验输出目录")

    @field_validator("variants", mode="before")
    @classmethod
    def parse_variants(cls, v: object) -> object:
        if isinstance(v, list):
            return [_coerce_variant(item) for item in v]
        return v

    @field_validator("n_threads")
    @classmethod
    def check_threads(cls, v: List[int]) -> List[int]:
        if not v or any(t < 0 for t in v):
            raise ValueError("n_threads must be a non-empty list of non-negative integers")
        return v


def config_to_plain(model: BaseModel) -> dict:
    """导出为可写入YAML的纯字典，变体与初始化方式写成命令行写法"""
    data = model.model_dump(mode="json", by_alias=True)

    def fix(node: object) -> object:
        if isinstance(node, dict):
            if set(node) == {"kind", "k"}:
                return f"{node['kind']}:{node['k']}" if node["k"] is not None else node["kind"]
            return {key: fix(value) for key, value in node.items()}
        if isinstance(node, list):
            return [fix(item) for item in node]
        return node

    return fix(data)


class AppConfig(BaseSettings):
    """应用配置（完整配置），环境变量 DUALVIEW_* 覆盖默认值"""
    model_config = SettingsConfigDict(
        env_prefix="DUALVIEW_",
        env_nested_delimiter="__",
        populate_by_name=True,
    )

    chain: ChainConfig = Field(default_factory=ChainConfig.desk_profile)
    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)
    experiment: ExperimentConfig = Field(default_factory=ExperimentConfig)
    logging: LoggingConfig = Field(default_factory=LoggingConfig)

    @classmethod
    def from_yaml(cls, config_path: str) -> "AppConfig":
        """从YAML文件加载配置"""
        path = Path(config_path)
        if not path.exists():
            # 配置文件不存在则使用默认配置
            return cls()

        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}

        return cls(**data)

    def to_yaml(self, config_path: str) -> None:
        """保存配置到YAML文件"""
        path = Path(config_path)
        path.parent.mkdir(parents=True, exist_ok=True)

        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(
                config_to_plain(self),
                f,
                allow_unicode=True,
                default_flow_style=False,
                sort_keys=False,
            )


def dump_yaml(model: BaseModel, path: Path) -> None:
    """把任意配置模型写成YAML（输出目录中的 resolved_config.yaml）"""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(
            config_to_plain(model), f, allow_unicode=True, default_flow_style=False, sort_keys=False
        )


# 全局配置实例
_config: Optional[AppConfig] = None


def get_config() -> AppConfig:
    """获取全局配置实例"""
    global _config
    if _config is None:
        _config = AppConfig()
    return _config


def load_config(config_path: str) -> AppConfig:
    """加载配置文件并设置为全局配置"""
    global _config
    _config = AppConfig.from_yaml(config_path)
    return _config


def set_config(config: AppConfig) -> None:
    """设置全局配置"""
    global _config
    _config = config
