"""
hiconform 配置管理模块

运行参数通过环境变量或 .env 文件管理，单次运行的参数由 RunConfig 汇总。

环境变量优先级：
1. 系统环境变量
2. .env 文件
3. 内置默认值

支持的环境变量：
- HICONFORM_SEED: 覆盖任何配置文件 / 命令行给出的随机种子
- HICONFORM_ALPHA: 默认误差率 α（默认 0.1）
- HICONFORM_THREADS: study 试验的工作者上限（默认 1，可被全局 --threads 覆盖）
- LOG_LEVEL: 日志级别（默认 INFO）
- LOG_DIR: 日志目录（默认 logs；设为空字符串则不写日志文件）
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, fields
from datetime import datetime
from pathlib import Path
from typing import Any, Mapping, Optional

from dotenv import load_dotenv

from logic.constants import (
    DEFAULT_ALPHA,
    DEFAULT_CALIB_N,
    DEFAULT_K_FEATURES,
    DEFAULT_L2,
    DEFAULT_MAX_ITER,
    DEFAULT_SEED,
    DEFAULT_TOL,
    DEFAULT_TRAIN_N,
    Correction,
    Estimator,
    Method,
)
from logic.errors import ConfigError
from utils import config_hash


# 加载 .env 文件（不覆盖已有的系统环境变量）
load_dotenv()

TOOL_NAME = "hiconform"


# ============================================================================
# 环境变量
# ============================================================================

def _env_int(name: str, default: Optional[int]) -> Optional[int]:
    raw = os.getenv(name, "").strip()
    if not raw:
        return default
    try:
        return int(raw)
    except ValueError as e:
        raise ConfigError("InvalidConfig", f"{name} 必须是整数，当前值: {raw!r}") from e


def _env_float(name: str, default: float) -> float:
    raw = os.getenv(name, "").strip()
    if not raw:
        return default
    try:
        return float(raw)
    except ValueError as e:
        raise ConfigError("InvalidConfig", f"{name} 必须是数值，当前值: {raw!r}") from e


def get_default_settings() -> dict:
    """
    读取并校验环境变量中的运行默认值

    - HICONFORM_ALPHA 必须位于 (0, 1)
    - HICONFORM_THREADS 必须 ≥ 1
    """
    alpha = _env_float("HICONFORM_ALPHA", DEFAULT_ALPHA)
    threads = _env_int("HICONFORM_THREADS", 1)
    seed = _env_int("HICONFORM_SEED", None)

    if not (0 < alpha < 1):
        raise ConfigError("InvalidConfig", f"HICONFORM_ALPHA 必须在 (0, 1) 范围内，当前值: {alpha}")
    if threads is None or threads < 1:
        raise ConfigError("InvalidConfig", f"HICONFORM_THREADS 必须 ≥ 1，当前值: {threads}")

    return {
        "alpha": alpha,
        "threads": threads,
        "seed_override": seed,
        "log_level": os.getenv("LOG_LEVEL", "INFO").upper(),
        "log_dir": os.getenv("LOG_DIR", "logs"),
    }


# 导出默认配置
DEFAULT_SETTINGS = get_default_settings()


def seed_override() -> Optional[int]:
    """HICONFORM_SEED 在调用时读取，便于测试中临时设置。"""
    return _env_int("HICONFORM_SEED", None)


# ============================================================================
# 日志配置
# ============================================================================

def _get_log_level(level: Optional[str] = None) -> int:
    level_str = (level or os.getenv("LOG_LEVEL", "INFO")).upper()
    return getattr(logging, level_str, logging.INFO)


def setup_logging(level: Optional[str] = None) -> Optional[str]:
    """
    配置日志系统

    特性：
    - 同时输出到控制台（stderr）和文件
    - 按日期自动生成日志文件 hiconform_YYYYMMDD.log
    - LOG_DIR 为空字符串时只输出到控制台
    """
    log_level = _get_log_level(level)
    log_format = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
    date_format = "%Y-%m-%d %H:%M:%S"

    logger = logging.getLogger()
    logger.setLevel(log_level)
    logger.handlers.clear()

    console_handler = logging.StreamHandler()
    console_handler.setLevel(log_level)
    console_handler.setFormatter(logging.Formatter(log_format, date_format))
    logger.addHandler(console_handler)

    log_dir = os.getenv("LOG_DIR", "logs")
    log_file: Optional[str] = None
    if log_dir:
        os.makedirs(log_dir, exist_ok=True)
        log_file = os.path.join(log_dir, f"{TOOL_NAME}_{datetime.now().strftime('%Y%m%d')}.log")
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setLevel(log_level)
        file_handler.setFormatter(logging.Formatter(log_format, date_format))
        logger.addHandler(file_handler)

    logging.info(f"日志系统已初始化: {log_file or 'console'}")
    return log_file


# ============================================================================
# 单次运行配置
# ============================================================================

# 不影响计算结果的字段，不参与配置哈希
_HASH_EXCLUDED = frozenset({"out_dir"})


@dataclass
class RunConfig:
    """pipeline 的全部输入；优先级：默认值 < 配置文件 < 命令行 < HICONFORM_SEED"""
    graph: Optional[str] = None
    features: Optional[str] = None
    probs: Optional[str] = None
    labels: Optional[str] = None
    alpha: float = DEFAULT_ALPHA
    method: Method = Method.GRAPH
    correction: Correction = Correction.NONE
    estimator: Estimator = Estimator.BBSE
    seed: int = DEFAULT_SEED
    k_features: int = DEFAULT_K_FEATURES
    l2: float = DEFAULT_L2
    max_iter: int = DEFAULT_MAX_ITER
    tol: float = DEFAULT_TOL
    train_n: int = DEFAULT_TRAIN_N
    calib_n: int = DEFAULT_CALIB_N
    out_dir: str = "out"

    def validate(self) -> "RunConfig":
        if not (0 < self.alpha < 1):
            raise ConfigError("InvalidConfig", f"alpha 必须在 (0, 1) 范围内，当前值: {self.alpha}")
        if self.graph is None and self.method is Method.GRAPH:
            raise ConfigError("InvalidConfig", "graph 方法需要 --graph")
        if (self.features is None) == (self.probs is None):
            raise ConfigError("InvalidConfig", "--features 与 --probs 必须且只能给出一个")
        for name in ("graph", "features", "probs", "labels"):
            path = getattr(self, name)
            if path is not None and not Path(path).is_file():
                raise ConfigError("InvalidConfig", f"{name} 文件不存在: {path}")
        if self.k_features < 1 or self.train_n < 0 or self.calib_n < 1:
            raise ConfigError(
                "InvalidConfig",
                f"规模参数非法: k_features={self.k_features}, train_n={self.train_n}, "
                f"calib_n={self.calib_n}",
            )
        if self.l2 < 0:
            raise ConfigError("InvalidConfig", f"l2 必须非负，当前值: {self.l2}")
        return self

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("method", "correction", "estimator"):
            out[key] = out[key].value
        return out

    def config_hash(self) -> str:
        return config_hash({k: v for k, v in self.to_dict().items() if k not in _HASH_EXCLUDED})


def _coerce(name: str, value: Any) -> Any:
    enum_types = {"method": Method, "correction": Correction, "estimator": Estimator}
    try:
        if name in enum_types:
            return enum_types[name](value.value if hasattr(value, "value") else value)
        if name in ("alpha", "l2", "tol"):
            return float(value)
        if name in ("seed", "k_features", "max_iter", "train_n", "calib_n"):
            return int(value)
        return None if value is None else str(value)
    except (ValueError, TypeError) as e:
        raise ConfigError("InvalidConfig", f"配置项 {name}={value!r} 非法: {e}") from e


def load_run_config(
    config_path: Optional[str] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """
    合并配置

    1. 内置默认值（alpha 取自环境变量默认）
    2. JSON 配置文件（--config）
    3. 命令行显式给出的参数（值为 None 的项忽略）
    4. HICONFORM_SEED
    """
    known = {f.name for f in fields(RunConfig)}
    merged: dict = {"alpha": DEFAULT_SETTINGS["alpha"]}

    if config_path:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError("InvalidConfig", f"无法读取配置文件 {config_path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError("InvalidConfig", f"配置文件顶层必须是对象: {config_path}")
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError("InvalidConfig", f"配置文件含未知字段: {unknown}")
        merged.update(data)

    for key, value in (overrides or {}).items():
        if key in known and value is not None:
            merged[key] = value

    env_seed = seed_override()
    if env_seed is not None:
        if "seed" in merged and merged["seed"] != env_seed:
            logging.info(f"HICONFORM_SEED={env_seed} 覆盖配置种子 {merged['seed']}")
        merged["seed"] = env_seed

    cfg = RunConfig(**{k: _coerce(k, v) for k, v in merged.items()})
    return cfg.validate()
