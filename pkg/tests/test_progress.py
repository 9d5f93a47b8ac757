"""
进度显示与日志配置测试
"""
import json
from types import SimpleNamespace

from src.core.gibbs import run_chain
from src.models.config import ChainConfig
from src.utils.logger import NO_CHAIN, chain_context, get_logger, setup_logger
from src.utils.progress_manager import ChainProgress, ExperimentProgress


def test_chain_progress_tracks_iterations(state_factory):
    state = state_factory([0, 1])
    with ChainProgress(20, refresh_every=5) as bar:
        for it in range(1, 21):
            bar.update(it, state)
        task = bar._progress.tasks[0]
        assert task.completed == 20
        assert "c=2" in task.fields["status"]


def test_chain_progress_ignores_updates_when_closed(state_factory):
    bar = ChainProgress(5)
    bar.update(1, state_factory([0]))


async def test_experiment_progress_counts():
    view = ExperimentProgress(total_cells=3, workers=2)
    ok = SimpleNamespace(name="dual-dp T=10 rep=1", error=None)
    bad = SimpleNamespace(name="single T=10 rep=1", error="DataError: no threads")
    async with view.live_progress():
        await view.start_cell(ok)
        await view.start_cell(bad)
        await view.complete_cell(ok)
        await view.complete_cell(bad)
    assert (view.completed, view.failed) == (1, 1)
    assert view.failures == ["single T=10 rep=1: DataError: no threads"]
    view.print_final_summary(1.5, "./runs/x")


def test_log_file(tmp_path):
    log_file = tmp_path / "logs" / "dualview.log"
    setup_logger("DEBUG", str(log_file))
    get_logger("tests").debug("链已开始")
    setup_logger("WARNING")
    assert "链已开始" in log_file.read_text(encoding="utf-8")


def test_chain_context_in_log_file(tmp_path, tiny_dataset):
    log_file = tmp_path / "chain.log"
    setup_logger("INFO", str(log_file))
    run_chain(tiny_dataset, ChainConfig(n_iter=4, burn_in=2, seed=7))
    get_logger("tests").info("链外")
    setup_logger("WARNING")
    lines = log_file.read_text(encoding="utf-8").splitlines()
    assert any("dual-dp#7" in line and "采样完成" in line for line in lines)
    assert any(f"| {NO_CHAIN} |" in line and "链外" in line for line in lines)


def test_serialized_log_file(tmp_path):
    log_file = tmp_path / "chain.jsonl"
    setup_logger("INFO", str(log_file), serialize=True)
    with chain_context("single", 3):
        get_logger("tests").info("第一条")
    setup_logger("WARNING")
    record = json.loads(log_file.read_text(encoding="utf-8").splitlines()[0])["record"]
    assert record["extra"]["chain"] == "single#3"
    assert record["message"] == "第一条"
