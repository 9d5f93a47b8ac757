"""
实验调度测试
"""
import pandas as pd
import pytest

from src.models.config import ChainConfig, ExperimentConfig, ScenarioConfig
from src.services.experiment import (
    CHAIN_FILE,
    RESOLVED_CONFIG_FILE,
    SUMMARY_AGG_FILE,
    SUMMARY_COLUMNS,
    SUMMARY_FILE,
    ExperimentRunner,
    TaskStatus,
    derive_seeds,
    run_experiment,
)


def _tiny_config(**overrides) -> ExperimentConfig:
    base = dict(
        name="tiny",
        scenario=ScenarioConfig(n_users=10, n_threads_test=5),
        variants=["dual-dp", "single"],
        n_threads=[4],
        reps=2,
        seed=11,
        chain=ChainConfig(n_iter=8, burn_in=4),
    )
    base.update(overrides)
    return ExperimentConfig(**base)


class TestGrid:
    def test_default_grid(self, tmp_path):
        runner = ExperimentRunner(ExperimentConfig(), tmp_path)
        assert len(runner.cells) == 45
        assert len({c.key for c in runner.cells}) == 45

    def test_seeds_deterministic(self):
        assert derive_seeds(0, 10, 1) == derive_seeds(0, 10, 1)
        assert derive_seeds(0, 10, 1) != derive_seeds(0, 10, 2)
        assert derive_seeds(0, 10, 1) != derive_seeds(1, 10, 1)

    def test_variants_share_data(self, tmp_path):
        runner = ExperimentRunner(_tiny_config(), tmp_path)
        by_key = {}
        for cell in runner.cells:
            by_key.setdefault((cell.n_threads, cell.rep), set()).add(cell.data_dir)
        assert all(len(dirs) == 1 for dirs in by_key.values())
        assert len({c.cell_dir for c in runner.cells}) == len(runner.cells)


class TestRun:
    def test_tiny_run(self, tmp_path):
        out = run_experiment(_tiny_config(), tmp_path / "exp")

        summary = pd.read_csv(out / SUMMARY_FILE)
        assert summary.columns.tolist() == SUMMARY_COLUMNS
        assert len(summary) == 4
        assert (summary["status"] == TaskStatus.COMPLETED.value).all()
        assert summary[["variant", "rep"]].values.tolist() == [
            ["dual-dp", 1], ["dual-dp", 2], ["single", 1], ["single", 2],
        ]
        assert summary["ari"].between(-1.0, 1.0).all()

        agg = pd.read_csv(out / SUMMARY_AGG_FILE)
        assert agg["n"].tolist() == [2, 2]
        assert (out / RESOLVED_CONFIG_FILE).exists()
        assert (out / "dual-dp" / "T4" / "rep1" / CHAIN_FILE).exists()
        assert (out / "failures.txt").read_text(encoding="utf-8") == ""

    def test_deterministic(self, tmp_path):
        a = run_experiment(_tiny_config(), tmp_path / "a")
        b = run_experiment(_tiny_config(), tmp_path / "b")
        assert (a / SUMMARY_FILE).read_bytes() == (b / SUMMARY_FILE).read_bytes()
        chain = "dual-dp/T4/rep2/" + CHAIN_FILE
        assert (a / chain).read_bytes() == (b / chain).read_bytes()

    def test_failed_cell_is_isolated(self, tmp_path):
        # k-means 给出3个簇，dual-fixed:2 初始化失败，dual-dp 不受影响
        cfg = _tiny_config(
            variants=["dual-dp", "dual-fixed:2"],
            reps=1,
            chain=ChainConfig(n_iter=8, burn_in=4, init="kmeans:3"),
        )
        out = run_experiment(cfg, tmp_path / "exp")
        summary = pd.read_csv(out / SUMMARY_FILE).set_index("variant")
        assert summary.loc["dual-dp", "status"] == "completed"
        assert summary.loc["dual-fixed:2", "status"] == "failed"
        assert pd.isna(summary.loc["dual-fixed:2", "ari"])
        assert "DataError" in (out / "failures.txt").read_text(encoding="utf-8")
        assert pd.read_csv(out / SUMMARY_AGG_FILE)["variant"].tolist() == ["dual-dp"]

    def test_callbacks(self, tmp_path):
        started, completed = [], []

        async def on_complete(cell):
            completed.append((cell.name, cell.status))

        run_experiment(
            _tiny_config(reps=1),
            tmp_path / "exp",
            on_start=lambda cell: started.append(cell.name),
            on_complete=on_complete,
        )
        assert len(started) == 2
        assert sorted(completed) == sorted(
            (name, TaskStatus.COMPLETED) for name in started
        )

    def test_callback_error_does_not_stop_run(self, tmp_path):
        def broken(cell):
            raise RuntimeError("boom")

        out = run_experiment(_tiny_config(reps=1), tmp_path / "exp", on_complete=broken)
        assert len(pd.read_csv(out / SUMMARY_FILE)) == 2

    @pytest.mark.slow
    def test_workers_do_not_change_results(self, tmp_path):
        serial = run_experiment(_tiny_config(), tmp_path / "serial")
        parallel = run_experiment(_tiny_config(workers=2), tmp_path / "parallel")
        assert (serial / SUMMARY_FILE).read_bytes() == (parallel / SUMMARY_FILE).read_bytes()
