"""
日志工具模块
基于loguru：每条记录带模块名与所属链（变体#种子），
实验并行跑多条链时可以按链区分进度日志
"""
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import TYPE_CHECKING, Iterator, Optional

from loguru import logger

if TYPE_CHECKING:
    from src.models.config import LoggingConfig

# 不在任何链内时 chain 字段的取值
NO_CHAIN = "-"

# 库被导入时不输出任何日志，由CLI调用 setup_logger 开启
logger.remove()
logger.configure(extra={"name": "dualview", "chain": NO_CHAIN})

FILE_FORMAT = (
    "{time:YYYY-MM-DD HH:mm:ss.SSS} | "
    "{level: <8} | "
    "{extra[chain]} | "
    "{extra[name]}:{function}:{line} | "
    "{message}"
)

CONSOLE_FORMAT = (
    "<green>{time:HH:mm:ss}</green> | "
    "<level>{level: <8}</level> | "
    "<magenta>{extra[chain]}</magenta> | "
    "<level>{message}</level>"
)


def chain_label(variant: str, seed: int) -> str:
    """日志里标识一条链的字符串，如 dual-dp#7"""
    return f"{variant}#{seed}"


@contextmanager
def chain_context(variant: str, seed: int) -> Iterator[None]:
    """
    在with块内产生的所有日志都带上链标识

    基于 contextvars，线程与协程之间互不影响
    """
    with logger.contextualize(chain=chain_label(variant, seed)):
        yield


def setup_logger(
    log_level: str = "INFO",
    log_file: Optional[str] = None,
    rotation: str = "10 MB",
    retention: str = "7 days",
    serialize: bool = False,
) -> None:
    """
    配置日志系统（重复调用会替换之前的handler）

    Args:
        log_level: 日志级别 (DEBUG/INFO/WARNING/ERROR/CRITICAL)
        log_file: 日志文件路径，None则不输出到文件
        rotation: 日志轮转大小
        retention: 日志保留时间
        serialize: 文件按JSON-lines写出（含 extra.chain），便于事后按链筛选
    """
    logger.remove()
    level = log_level.upper()

    # stdout 留给结果
    logger.add(sys.stderr, format=CONSOLE_FORMAT, level=level, colorize=True)

    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        logger.add(
            log_file,
            format=FILE_FORMAT,
            level=level,
            rotation=rotation,
            retention=retention,
            serialize=serialize,
            encoding="utf-8",
        )


def setup_from_config(cfg: "LoggingConfig", verbose: bool = False) -> None:
    """按配置文件中的 logging 段配置日志，verbose 强制 DEBUG"""
    setup_logger(
        log_level="DEBUG" if verbose else cfg.level,
        log_file=cfg.file,
        rotation=cfg.rotation,
        retention=cfg.retention,
        serialize=cfg.serialize,
    )


def get_logger(name: str = "dualview"):
    """绑定了模块名的logger"""
    return logger.bind(name=name)


__all__ = [
    "NO_CHAIN",
    "logger",
    "chain_context",
    "chain_label",
    "setup_logger",
    "setup_from_config",
    "get_logger",
]
