"""
进度管理器模块
使用Rich Progress显示单链采样进度与实验网格的实时状态
"""
import asyncio
import time
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from rich.console import Console, Group
from rich.live import Live
from rich.panel import Panel
from rich.progress import (
    BarColumn,
    MofNCompleteColumn,
    Progress,
    SpinnerColumn,
    TaskProgressColumn,
    TextColumn,
    TimeElapsedColumn,
    TimeRemainingColumn,
)
from rich.table import Table
from rich.text import Text

from src.models.state import ModelState
from src.utils.logger import get_logger

logger = get_logger(__name__)

console = Console(stderr=True)


def _create_progress() -> Progress:
    """创建Progress组件"""
    return Progress(
        SpinnerColumn(),
        TextColumn("[bold blue]{task.description}"),
        BarColumn(bar_width=40),
        TaskProgressColumn(),
        MofNCompleteColumn(),
        TimeElapsedColumn(),
        TimeRemainingColumn(),
        TextColumn("{task.fields[status]}"),
        console=console,
        expand=False,
    )


class ChainProgress:
    """
    单链进度条

    作为 run_chain 的 on_iteration 回调使用：
        with ChainProgress(cfg.n_iter) as progress:
            run_chain(d, cfg, on_iteration=progress.update)
    """

    def __init__(self, n_iter: int, description: str = "采样", refresh_every: int = 10):
        """
        Args:
            n_iter: 总迭代数
            description: 进度条标题
            refresh_every: 每隔多少次迭代刷新一次显示
        """
        self.n_iter = n_iter
        self.description = description
        self.refresh_every = max(1, refresh_every)
        self._progress: Optional[Progress] = None
        self._task_id = None

    def __enter__(self) -> "ChainProgress":
        self._progress = _create_progress()
        self._task_id = self._progress.add_task(
            f"[cyan]{self.description}", total=self.n_iter, status=""
        )
        self._progress.start()
        return self

    def __exit__(self, *exc) -> None:
        if self._progress is not None:
            self._progress.stop()
            self._progress = None

    def update(self, iteration: int, state: ModelState) -> None:
        """每次迭代后调用，显示当前簇数与 s_y"""
        if self._progress is None:
            return
        if iteration % self.refresh_every and iteration != self.n_iter:
            return
        self._progress.update(
            self._task_id,
            completed=iteration,
            status=f"c={state.n_active} s_y={state.noise_precision:.3g}",
        )


@dataclass
class CellInfo:
    """正在运行的格子"""
    name: str
    start_time: float = field(default_factory=time.time)


class ExperimentProgress:
    """
    实验进度显示

    - 总体进度条（全部格子）
    - 当前运行中的格子表格
    - 成功/失败统计与最终摘要
    """

    def __init__(self, total_cells: int, workers: int = 1):
        """
        Args:
            total_cells: 格子总数
            workers: 并行链数
        """
        self.total_cells = total_cells
        self.workers = workers
        self.completed = 0
        self.failed = 0
        self.failures: List[str] = []

        self._active: Dict[str, CellInfo] = {}
        self._lock = asyncio.Lock()
        self._progress: Optional[Progress] = None
        self._live: Optional[Live] = None
        self._overall_task_id = None
        self._start_time = time.time()

    def _build_display(self) -> Group:
        """构建显示内容"""
        elements = [self._progress]

        if self._active:
            table = Table(
                title="[bold cyan]运行中[/bold cyan]",
                show_header=True,
                header_style="bold magenta",
                border_style="dim",
                expand=False,
                padding=(0, 1),
            )
            table.add_column("格子", width=40, no_wrap=True, overflow="ellipsis")
            table.add_column("耗时", width=8, justify="right")
            for info in list(self._active.values()):
                table.add_row(info.name, f"{time.time() - info.start_time:.1f}s")
            elements.append(table)

        stats = Text()
        stats.append("\n")
        stats.append("统计: ", style="bold")
        stats.append(f"完成 {self.completed}/{self.total_cells}", style="green")
        if self.failed > 0:
            stats.append(" | ")
            stats.append(f"失败 {self.failed}", style="red")
        elements.append(stats)
        return Group(*elements)

    @asynccontextmanager
    async def live_progress(self):
        """
        进度显示上下文管理器

        使用示例:
            async with progress.live_progress():
                await runner.run()
        """
        self._progress = _create_progress()
        self._start_time = time.time()
        self._overall_task_id = self._progress.add_task(
            "[cyan]总体进度", total=self.total_cells, completed=0, status=""
        )
        with Live(
            self._build_display(),
            console=console,
            refresh_per_second=4,
            transient=False,
        ) as live:
            self._live = live
            try:
                yield self
            finally:
                self._live = None
                self._progress = None

    async def start_cell(self, cell) -> None:
        async with self._lock:
            self._active[cell.name] = CellInfo(name=cell.name)
        self._refresh()

    async def complete_cell(self, cell) -> None:
        async with self._lock:
            self._active.pop(cell.name, None)
            if cell.error is None:
                self.completed += 1
            else:
                self.failed += 1
                self.failures.append(f"{cell.name}: {cell.error}")
        if self._progress is not None:
            self._progress.update(self._overall_task_id, completed=self.completed + self.failed)
        self._refresh()

    def _refresh(self) -> None:
        if self._live:
            self._live.update(self._build_display())

    def print_final_summary(self, elapsed_time: float, out_dir: Optional[str] = None) -> None:
        """
        打印最终摘要

        Args:
            elapsed_time: 总耗时
            out_dir: 实验输出目录
        """
        console.print()
        console.print(
            Panel(
                "[bold green]实验完成[/bold green]"
                if self.failed == 0
                else "[bold yellow]实验完成（部分格子失败）[/bold yellow]",
                border_style="green" if self.failed == 0 else "yellow",
                expand=False,
            )
        )

        table = Table(show_header=False, box=None, padding=(0, 2))
        table.add_column("项目", style="bold")
        table.add_column("值")
        table.add_row("格子总数", f"[cyan]{self.total_cells}[/cyan]")
        table.add_row("成功", f"[green]{self.completed}[/green]")
        if self.failed > 0:
            table.add_row("失败", f"[red]{self.failed}[/red]")
        table.add_row("并行链数", str(self.workers))
        table.add_row("总耗时", f"[yellow]{elapsed_time:.2f}秒[/yellow]")
        if out_dir:
            table.add_row("输出目录", out_dir)
        console.print(table)

        for line in self.failures:
            console.print(f"  [red]✗[/red] {line}")
        console.print()
