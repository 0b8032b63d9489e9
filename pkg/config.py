import json
import logging
import os
from typing import Any, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from errors import ConfigError

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# 配置日志
logging.basicConfig(
    level=logging.INFO,
    format=LOG_FORMAT
)
logger = logging.getLogger("PJFNN")


def setup_logging(level: int = logging.INFO, log_file: Optional[str] = None) -> None:
    """调整日志级别；指定 log_file 时同时写入文件（格式与控制台一致）"""
    logger.setLevel(level)
    if log_file:
        os.makedirs(os.path.dirname(os.path.abspath(log_file)), exist_ok=True)
        handler = logging.FileHandler(log_file, encoding="utf-8")
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(handler)


# ==================== 配置模型 ====================
class _Config(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


def _check_range(name: str, value: Tuple[int, int], low: int = 1) -> None:
    if value[0] < low or value[1] < value[0]:
        raise ValueError(f"{name} 区间非法: {value}")


class ModelConfig(_Config):
    """双塔网络结构超参（两层卷积，隐层宽度逐层收窄到共享隐空间 l）"""
    latent_dim: int = Field(64, ge=1)
    job_hidden: int = Field(128, ge=1)
    resume_hidden: int = Field(64, ge=1)
    kernel1: int = Field(3, ge=1)
    kernel2: int = Field(3, ge=1)
    pool_size: int = Field(2, ge=1)
    pool_stride: int = Field(2, ge=1)
    bn_momentum: float = Field(0.9, gt=0.0, lt=1.0)
    bn_eps: float = Field(1e-5, gt=0.0)


class EmbedConfig(_Config):
    """Skip-gram 词向量训练参数，岗位侧 256 维、简历侧 64 维"""
    job_dim: int = Field(256, ge=1)
    resume_dim: int = Field(64, ge=1)
    window: int = Field(5, ge=1)
    negatives: int = Field(5, ge=1)
    epochs: int = Field(5, ge=1)
    lr: float = Field(0.025, gt=0.0)
    min_count: int = Field(1, ge=1)
    batch_words: int = Field(10000, ge=1)
    seed: int = 0


class TrainConfig(_Config):
    lam: float = Field(1e-4, ge=0.0, alias="lambda")
    lr: float = Field(1e-3, ge=0.0)
    beta1: float = Field(0.9, gt=0.0, lt=1.0)
    beta2: float = Field(0.999, gt=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)
    epochs: int = Field(20, ge=1)
    batch_size: int = Field(64, ge=1)
    negative_mode: Literal["synthetic", "real"] = "synthetic"
    negatives_per_positive: float = Field(1.0, gt=0.0)
    resample_negatives: bool = True
    log_every: int = Field(0, ge=0)
    seed: int = 0


class SynthConfig(_Config):
    """合成语料生成参数：岗位要求条目单主题，简历经历条目多主题混合"""
    n_topics: int = Field(8, ge=1)
    vocab_per_topic: int = Field(30, ge=1)
    n_jobs: int = Field(400, ge=1)
    n_resumes: int = Field(800, ge=1)
    n_applications: int = Field(4000, ge=1)
    items_per_doc: Tuple[int, int] = (2, 5)
    tokens_per_item: Tuple[int, int] = (6, 12)
    topics_per_job: Tuple[int, int] = (1, 2)
    topics_per_resume: Tuple[int, int] = (1, 2)
    topic_mixture_noise: float = Field(0.1, ge=0.0, le=1.0)
    positive_rate: float = Field(0.5, ge=0.0, le=1.0)
    filler_rate: float = Field(0.15, ge=0.0, le=1.0)
    failure_label_noise: float = Field(0.0, ge=0.0, le=1.0)
    match_rule: Literal["exact", "overlap"] = "exact"
    years: Tuple[int, int] = (2013, 2016)
    seed: int = 0

    @model_validator(mode="after")
    def _ranges(self) -> "SynthConfig":
        _check_range("items_per_doc", self.items_per_doc)
        _check_range("tokens_per_item", self.tokens_per_item)
        _check_range("topics_per_job", self.topics_per_job)
        _check_range("topics_per_resume", self.topics_per_resume)
        _check_range("years", self.years, low=0)
        return self


class SplitConfig(_Config):
    by: Literal["random", "year"] = "random"
    train_frac: float = Field(0.8, gt=0.0, le=1.0)
    valid_frac: float = Field(0.1, gt=0.0, le=1.0)

    @model_validator(mode="after")
    def _fractions(self) -> "SplitConfig":
        if self.train_frac + self.valid_frac > 1.0 + 1e-9:
            raise ValueError("train_frac + valid_frac 不能超过 1")
        return self


class RunConfig(_Config):
    """一次命令行运行的完整配置：默认值 < 配置文件 < 命令行参数"""
    command: str = ""
    seed: int = 0
    threads: int = Field(1, ge=1)
    paths: dict[str, Optional[str]] = Field(default_factory=dict)
    model: ModelConfig = Field(default_factory=ModelConfig)
    embed: EmbedConfig = Field(default_factory=EmbedConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    synth: SynthConfig = Field(default_factory=SynthConfig)
    split: SplitConfig = Field(default_factory=SplitConfig)
    options: dict[str, Any] = Field(default_factory=dict)

    def dump(self) -> dict:
        return self.model_dump(mode="json", by_alias=True)


def build_config(cls, values: Optional[dict] = None, **kwargs):
    """构造并校验配置，pydantic 校验失败统一转为 ConfigError"""
    data = dict(values or {})
    data.update(kwargs)
    try:
        return cls.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        loc = ".".join(str(x) for x in first.get("loc", ()))
        raise ConfigError(f"配置非法 [{cls.__name__}] {loc}: {first.get('msg')}") from e


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config_file(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except OSError as e:
        raise ConfigError(f"无法读取配置文件 {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"配置文件 {path} 第 {e.lineno} 行第 {e.colno} 列解析失败: {e.msg}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"配置文件 {path} 顶层必须是对象")
    return data


def resolve_run_config(config_path: Optional[str], overrides: dict) -> RunConfig:
    """合并配置文件与命令行覆盖项；单一 seed 下发到所有带随机性的子配置"""
    merged = _deep_merge(load_config_file(config_path), overrides)
    config = build_config(RunConfig, merged)
    seed = config.seed
    for section in ("embed", "train", "synth"):
        setattr(config, section, getattr(config, section).model_copy(update={"seed": seed}))
    return config


def log_resolved_config(config: RunConfig) -> None:
    logger.info("配置已解析: %s", json.dumps(config.dump(), sort_keys=True, ensure_ascii=False))
