"""
实验调度服务模块
(模型变体 × 帖子数 × 重复) 网格的并行执行、逐格失败隔离与汇总表
"""
import asyncio
import math
import time
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Awaitable, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from src.core.diagnostics import DIAGNOSTICS_FILE, diagnose_chain, save_diagnostics
from src.core.distributions import RngStreams
from src.core.gibbs import initial_labels, run_chain
from src.core.predict import PREDICTIONS_FILE, predict_lengths
from src.core.summarize import adjusted_rand_index, summarize_chain
from src.models.config import ChainConfig, ExperimentConfig, ModelVariant, dump_yaml
from src.models.dataset import LABELS_FILE, load_dataset, load_labels
from src.services.datagen import generate, write_scenario
from src.utils.logger import get_logger

logger = get_logger(__name__)

CHAIN_FILE = "chain.jsonl"
RESOLVED_CONFIG_FILE = "resolved_config.yaml"
SUMMARY_FILE = "summary.csv"
SUMMARY_AGG_FILE = "summary_agg.csv"
SUMMARY_COLUMNS = ["variant", "n_threads", "rep", "ari", "nll", "status"]


class TaskStatus(Enum):
    """格子状态"""
    QUEUED = "queued"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


@dataclass
class QueueStats:
    """调度统计信息"""
    total: int = 0
    queued: int = 0
    running: int = 0
    completed: int = 0
    failed: int = 0


@dataclass
class ExperimentCell:
    """实验网格中的一个格子（一条链）"""
    variant: ModelVariant
    n_threads: int
    rep: int
    data_seed: int
    chain_seed: int
    data_dir: Path
    cell_dir: Path
    status: TaskStatus = TaskStatus.QUEUED
    ari: Optional[float] = None
    nll: Optional[float] = None
    initial_ari: Optional[float] = None
    error: Optional[str] = None
    elapsed_time: float = 0.0

    @property
    def key(self) -> Tuple[str, int, int]:
        return (self.variant.label, self.n_threads, self.rep)

    @property
    def name(self) -> str:
        return f"{self.variant.label} T={self.n_threads} rep={self.rep}"


@dataclass
class CellResult:
    """子进程返回的结果（可pickle）"""
    ari: Optional[float] = None
    nll: Optional[float] = None
    initial_ari: Optional[float] = None
    error: Optional[str] = None
    elapsed_time: float = 0.0

    @property
    def success(self) -> bool:
        return self.error is None


def derive_seeds(root_seed: int, n_threads: int, rep: int) -> Tuple[int, int]:
    """
    由实验根种子、帖子数与重复编号确定 (数据种子, 链种子)

    同一 (帖子数, 重复) 下所有变体共享数据
    """
    data_seed, chain_seed = np.random.SeedSequence([root_seed, n_threads, rep]).generate_state(2)
    return int(data_seed), int(chain_seed)


def _variant_dirname(variant: ModelVariant) -> str:
    return variant.label.replace(":", "-")


def cell_chain_config(base: ChainConfig, variant: ModelVariant, seed: int) -> ChainConfig:
    """格子的链配置：基础配置 + 变体 + 种子"""
    assignment = base.assignment.model_copy(update={"variant": variant})
    return base.model_copy(update={"seed": seed, "assignment": assignment})


def run_cell(cell: ExperimentCell, base: ChainConfig) -> CellResult:
    """
    运行一个格子：链、预测、汇总、诊断，写出全部产物

    在工作进程中执行，所有异常都转成失败结果
    """
    start = time.time()
    try:
        train = load_dataset(cell.data_dir / "train")
        test = load_dataset(cell.data_dir / "test")
        truth = load_labels(cell.data_dir / LABELS_FILE, train.n_users)

        cfg = cell_chain_config(base, cell.variant, cell.chain_seed)
        cell.cell_dir.mkdir(parents=True, exist_ok=True)
        dump_yaml(cfg, cell.cell_dir / RESOLVED_CONFIG_FILE)

        # init 流的第一次使用就是初始分配，可以单独复现
        init_labels = initial_labels(train, cfg, RngStreams(cfg.seed).init)
        initial_ari = adjusted_rand_index(truth, init_labels + 1)

        chain = run_chain(train, cfg, out_path=cell.cell_dir / CHAIN_FILE)

        rng = np.random.default_rng(cfg.seed)
        summary = predict_lengths(chain, test.participation, rng, y_test=test.lengths)
        summary.save(cell.cell_dir / PREDICTIONS_FILE)

        metrics = summarize_chain(chain, cell.cell_dir, z_true=truth, nll=summary.nll_total)
        save_diagnostics(cell.cell_dir / DIAGNOSTICS_FILE, diagnose_chain(chain))
        return CellResult(
            ari=metrics["ari"],
            nll=summary.nll_total,
            initial_ari=initial_ari,
            elapsed_time=time.time() - start,
        )
    except Exception as e:
        return CellResult(error=f"{type(e).__name__}: {e}", elapsed_time=time.time() - start)


# 格子开始/结束回调，支持同步和异步函数
CellCallback = Callable[[ExperimentCell], Union[None, Awaitable[None]]]


class ExperimentRunner:
    """
    实验调度器

    功能：
    - 按 (变体, 帖子数, 重复) 展开网格并确定性地派生种子
    - 每个 (帖子数, 重复) 生成一次数据，所有变体共用
    - 信号量控制并发，格子在进程池中运行
    - 单个格子失败只记录，不影响其余格子
    - 写出 summary.csv 与 summary_agg.csv
    """

    def __init__(self, config: ExperimentConfig, out_dir: Optional[Path] = None):
        """
        Args:
            config: 实验配置
            out_dir: 实验输出目录，None时为 config.out_dir/config.name
        """
        self.config = config
        self.out_dir = Path(out_dir) if out_dir is not None else Path(config.out_dir) / config.name
        self.stats = QueueStats()
        self.cells: List[ExperimentCell] = self._expand()

        self._on_start: Optional[CellCallback] = None
        self._on_complete: Optional[CellCallback] = None

    def set_callbacks(
        self,
        on_start: Optional[CellCallback] = None,
        on_complete: Optional[CellCallback] = None,
    ) -> None:
        self._on_start = on_start
        self._on_complete = on_complete

    def _data_dir(self, n_threads: int, rep: int) -> Path:
        return self.out_dir / "data" / f"T{n_threads}-rep{rep}"

    def _expand(self) -> List[ExperimentCell]:
        cells = []
        for variant in self.config.variants:
            for n_threads in self.config.n_threads:
                for rep in range(1, self.config.reps + 1):
                    data_seed, chain_seed = derive_seeds(self.config.seed, n_threads, rep)
                    cells.append(
                        ExperimentCell(
                            variant=variant,
                            n_threads=n_threads,
                            rep=rep,
                            data_seed=data_seed,
                            chain_seed=chain_seed,
                            data_dir=self._data_dir(n_threads, rep),
                            cell_dir=self.out_dir
                            / _variant_dirname(variant)
                            / f"T{n_threads}"
                            / f"rep{rep}",
                        )
                    )
        return cells

    def prepare_data(self) -> None:
        """为每个 (帖子数, 重复) 生成并写出数据"""
        done = set()
        for cell in self.cells:
            if cell.data_dir in done:
                continue
            scenario = self.config.scenario.model_copy(
                update={"n_threads_train": cell.n_threads, "seed": cell.data_seed}
            )
            write_scenario(cell.data_dir, generate(scenario), scenario)
            done.add(cell.data_dir)

    def _executor(self) -> Executor:
        if self.config.workers > 1:
            return ProcessPoolExecutor(max_workers=self.config.workers)
        return ThreadPoolExecutor(max_workers=1)

    async def _notify(self, callback: Optional[CellCallback], cell: ExperimentCell) -> None:
        if callback is None:
            return
        try:
            result = callback(cell)
            if asyncio.iscoroutine(result):
                await result
        except Exception as cb_err:
            logger.error(f"回调出错 ({cell.name}): {cb_err}")

    async def _run_one(self, cell: ExperimentCell, executor: Executor) -> None:
        loop = asyncio.get_running_loop()
        async with self.semaphore:
            self.stats.queued -= 1
            self.stats.running += 1
            cell.status = TaskStatus.RUNNING
            logger.info(f"开始: {cell.name}")
            await self._notify(self._on_start, cell)

            result: CellResult = await loop.run_in_executor(
                executor, run_cell, cell, self.config.chain
            )

            self.stats.running -= 1
            cell.elapsed_time = result.elapsed_time
            cell.initial_ari = result.initial_ari
            if result.success:
                cell.status = TaskStatus.COMPLETED
                cell.ari, cell.nll = result.ari, result.nll
                self.stats.completed += 1
                logger.info(
                    f"完成: {cell.name} ARI={cell.ari:.4f} NLL={cell.nll:.2f} "
                    f"(初始ARI={cell.initial_ari:.4f}, {cell.elapsed_time:.1f}s)"
                )
            else:
                cell.status = TaskStatus.FAILED
                cell.error = result.error
                self.stats.failed += 1
                logger.error(f"失败: {cell.name}: {cell.error}")
            await self._notify(self._on_complete, cell)

    async def run(self) -> List[ExperimentCell]:
        """
        运行全部格子并写出汇总

        Returns:
            按 (变体, 帖子数, 重复) 排序的格子列表
        """
        self.out_dir.mkdir(parents=True, exist_ok=True)
        dump_yaml(self.config, self.out_dir / RESOLVED_CONFIG_FILE)
        self.prepare_data()

        self.semaphore = asyncio.Semaphore(self.config.workers)
        self.stats = QueueStats(total=len(self.cells), queued=len(self.cells))
        with self._executor() as executor:
            await asyncio.gather(*(self._run_one(cell, executor) for cell in self.cells))

        write_summary(self.out_dir, self.cells)
        return sorted(self.cells, key=lambda c: c.key)


# ==================== 汇总 ====================

def summary_frame(cells: List[ExperimentCell]) -> pd.DataFrame:
    """summary.csv：每个格子一行，按 (变体, 帖子数, 重复) 排序"""
    rows = [
        {
            "variant": c.variant.label,
            "n_threads": c.n_threads,
            "rep": c.rep,
            "ari": c.ari if c.ari is not None else np.nan,
            "nll": c.nll if c.nll is not None else np.nan,
            "status": c.status.value,
        }
        for c in sorted(cells, key=lambda c: c.key)
    ]
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def _se(values: pd.Series) -> float:
    n = values.shape[0]
    return float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan


def aggregate_frame(summary: pd.DataFrame) -> pd.DataFrame:
    """summary_agg.csv：成功格子按 (变体, 帖子数) 的均值与标准误"""
    ok = summary[summary["status"] == TaskStatus.COMPLETED.value]
    rows: List[Dict[str, Any]] = []
    for (variant, n_threads), group in ok.groupby(["variant", "n_threads"], sort=True):
        rows.append(
            {
                "variant": variant,
                "n_threads": int(n_threads),
                "n": int(group.shape[0]),
                "ari_mean": float(group["ari"].mean()),
                "ari_se": _se(group["ari"]),
                "nll_mean": float(group["nll"].mean()),
                "nll_se": _se(group["nll"]),
            }
        )
    columns = ["variant", "n_threads", "n", "ari_mean", "ari_se", "nll_mean", "nll_se"]
    return pd.DataFrame(rows, columns=columns)


def write_summary(out_dir: Path, cells: List[ExperimentCell]) -> Tuple[Path, Path]:
    summary = summary_frame(cells)
    summary_path = out_dir / SUMMARY_FILE
    agg_path = out_dir / SUMMARY_AGG_FILE
    summary.to_csv(summary_path, index=False, float_format="%.10g")
    aggregate_frame(summary).to_csv(agg_path, index=False, float_format="%.10g")
    failures = [c for c in cells if c.status == TaskStatus.FAILED]
    with open(out_dir / "failures.txt", "w", encoding="utf-8") as f:
        for c in sorted(failures, key=lambda c: c.key):
            f.write(f"{c.name}: {c.error}\n")
    return summary_path, agg_path


def run_experiment(
    config: ExperimentConfig,
    out_dir: Optional[Path] = None,
    on_start: Optional[CellCallback] = None,
    on_complete: Optional[CellCallback] = None,
) -> Path:
    """
    同步入口：运行整个实验

    Returns:
        实验输出目录
    """
    runner = ExperimentRunner(config, out_dir)
    runner.set_callbacks(on_start=on_start, on_complete=on_complete)
    asyncio.run(runner.run())
    return runner.out_dir
