"""
CLI命令模块
使用Typer实现命令行界面：生成数据、拟合、预测、汇总、诊断与对比实验
"""
import asyncio
import sys
import time
from contextlib import nullcontext
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import typer
import yaml
from pydantic import ValidationError
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from src.core.diagnostics import TRACES_FILE, diagnose_chain, save_diagnostics, save_traces
from src.core.gibbs import run_chain
from src.core.predict import negative_loglik, predict_lengths
from src.core.summarize import summarize_chain
from src.models.config import (
    AppConfig,
    ChainConfig,
    ExperimentConfig,
    ScenarioConfig,
    config_to_plain,
    dump_yaml,
    get_config,
    load_config,
)
from src.models.dataset import load_dataset, load_labels
from src.models.errors import DataError, NumericalError
from src.services.chain_store import load_chain
from src.services.datagen import generate as generate_scenario
from src.services.datagen import write_scenario
from src.services.experiment import (
    CHAIN_FILE,
    RESOLVED_CONFIG_FILE,
    ExperimentRunner,
    run_experiment,
)
from src.utils.logger import setup_from_config
from src.utils.progress_manager import ChainProgress, ExperimentProgress

# 创建Typer应用
app = typer.Typer(
    name="dualview",
    help="dualview - 双视图Dirichlet过程混合模型（用户聚类与帖子长度预测）",
    add_completion=False,
)

console = Console()

# 退出码
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


# ==================== 配置 ====================

def _resolve_config(config: Optional[str]) -> AppConfig:
    """加载指定配置文件；未指定时自动查找"""
    if config:
        config_path = Path(config).resolve()
        if not config_path.exists():
            console.print(f"[red]错误: 配置文件不存在: {config}[/red]")
            raise typer.Exit(EXIT_USAGE)
        return load_config(str(config_path))

    config_candidates = [
        Path.cwd() / "config.yaml",                             # 当前目录
        Path(__file__).parent.parent.parent / "config.yaml",    # 项目根目录
        Path.home() / ".dualview" / "config.yaml",              # 用户主目录
    ]
    for candidate in config_candidates:
        if candidate.exists():
            console.print(f"[dim]使用配置文件: {candidate}[/dim]")
            return load_config(str(candidate))
    return get_config()


def _setup(config: Optional[str], verbose: bool) -> AppConfig:
    app_config = _resolve_config(config)
    setup_from_config(app_config.logging, verbose)
    return app_config


def _override(model, updates: Dict[str, Any]):
    """命令行参数覆盖配置，重新走一遍校验"""
    data = config_to_plain(model)
    for key, value in updates.items():
        if value is None:
            continue
        node = data
        *parents, leaf = key.split(".")
        for p in parents:
            node = node[p]
        node[leaf] = value
    return type(model)(**data)


def _chain_overrides(
    base: ChainConfig,
    variant: Optional[str],
    iters: Optional[int],
    burnin: Optional[int],
    thin: Optional[int],
    seed: Optional[int],
    init: Optional[str],
    m_aux: Optional[int],
    ridge: Optional[float],
) -> ChainConfig:
    if iters is not None and burnin is None and base.burn_in >= iters:
        # 只给了迭代数时，预烧期取一半
        burnin = iters // 2
    return _override(
        base,
        {
            "n_iter": iters,
            "burn_in": burnin,
            "thin": thin,
            "seed": seed,
            "init": init,
            "lambda": ridge,
            "assignment.variant": variant,
            "assignment.m_aux": m_aux,
        },
    )


# ==================== 命令 ====================

@app.command()
def generate(
    scenario: Optional[str] = typer.Option(
        None, "--scenario", "-s", help="场景: agreement / disagreement / iris"
    ),
    out: str = typer.Option(..., "--out", "-o", help="输出目录"),
    users: Optional[int] = typer.Option(None, "--users", "-u", help="用户数"),
    threads: Optional[int] = typer.Option(None, "--threads", "-t", help="训练帖子数"),
    test_threads: Optional[int] = typer.Option(None, "--test-threads", help="测试帖子数"),
    seed: Optional[int] = typer.Option(None, "--seed", help="随机种子"),
    feature_sd: Optional[float] = typer.Option(None, "--feature-sd", help="特征噪声标准差"),
    coef_sd: Optional[float] = typer.Option(None, "--coef-sd", help="系数噪声标准差"),
    length_sd: Optional[float] = typer.Option(None, "--length-sd", help="帖子长度噪声标准差"),
    iris_subset: Optional[int] = typer.Option(None, "--iris-subset", help="iris 子集大小"),
    config: Optional[str] = typer.Option(None, "--config", "-c", help="配置文件路径"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="输出调试日志"),
) -> None:
    """
    生成合成数据集（train/ test/ labels.csv scenario.json）

    示例：
        dualview generate --scenario agreement --out ./data/agree --users 50 --threads 100
    """
    app_config = _setup(config, verbose)
    scenario_cfg: ScenarioConfig = _override(
        app_config.scenario,
        {
            "scenario": scenario,
            "n_users": users,
            "n_threads_train": threads,
            "n_threads_test": test_threads,
            "seed": seed,
            "feature_noise_sd": feature_sd,
            "coef_noise_sd": coef_sd,
            "length_noise_sd": length_sd,
            "iris_subset": iris_subset,
        },
    )
    out_dir = Path(out)
    data = generate_scenario(scenario_cfg)
    write_scenario(out_dir, data, scenario_cfg)
    dump_yaml(scenario_cfg, out_dir / RESOLVED_CONFIG_FILE)

    console.print(
        f"[green]已生成 {scenario_cfg.scenario}: U={data.train.n_users}, "
        f"T={data.train.n_threads}, 测试T={data.test.n_threads} → {out_dir}[/green]"
    )


@app.command()
def fit(
    data: str = typer.Option(..., "--data", "-d", help="训练数据目录（三个CSV）"),
    out: str = typer.Option(..., "--out", "-o", help="输出目录"),
    variant: Optional[str] = typer.Option(
        None, "--variant", help="模型变体: dual-dp / dual-fixed:K / single"
    ),
    iters: Optional[int] = typer.Option(
        None, "--iters", "-n", help="迭代次数（未给 --burnin 时预烧期取一半）"
    ),
    burnin: Optional[int] = typer.Option(None, "--burnin", "-b", help="预烧期迭代数"),
    thin: Optional[int] = typer.Option(None, "--thin", help="抽稀间隔"),
    seed: Optional[int] = typer.Option(None, "--seed", help="随机种子"),
    init: Optional[str] = typer.Option(None, "--init", help="初始化: all-in-one / kmeans:K"),
    m_aux: Optional[int] = typer.Option(None, "--m-aux", help="辅助空簇个数"),
    ridge: Optional[float] = typer.Option(None, "--lambda", help="系数MLE的岭回归参数"),
    force: bool = typer.Option(False, "--force", "-f", help="覆盖已有链文件"),
    resume: bool = typer.Option(False, "--resume", help="从已有链文件的断点继续"),
    progress: bool = typer.Option(True, "--progress/--no-progress", help="显示进度条"),
    config: Optional[str] = typer.Option(None, "--config", "-c", help="配置文件路径"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="输出调试日志"),
) -> None:
    """
    运行Gibbs采样，链写入 OUT/chain.jsonl

    示例：
        dualview fit --data ./data/agree/train --variant dual-dp --iters 3000 --out ./fit
        dualview fit --data ./data/iris/train --init kmeans:10 --out ./fit-iris
    """
    app_config = _setup(config, verbose)
    chain_cfg = _chain_overrides(
        app_config.chain, variant, iters, burnin, thin, seed, init, m_aux, ridge
    )

    out_dir = Path(out)
    chain_path = out_dir / CHAIN_FILE
    if chain_path.exists() and not (force or resume):
        console.print(f"[red]错误: 链文件已存在: {chain_path}（使用 --force 覆盖或 --resume 续跑）[/red]")
        raise typer.Exit(EXIT_USAGE)

    dataset = load_dataset(Path(data))
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_yaml(chain_cfg, out_dir / RESOLVED_CONFIG_FILE)

    console.print(
        Panel(
            f"[bold blue]{chain_cfg.variant.label}[/bold blue]  "
            f"U={dataset.n_users} D={dataset.n_dims} T={dataset.n_threads}\n"
            f"迭代 {chain_cfg.n_iter} / 预烧 {chain_cfg.burn_in} / 抽稀 {chain_cfg.thin} / "
            f"种子 {chain_cfg.seed} / 初始化 {chain_cfg.init.label}",
            expand=False,
        )
    )

    started = time.time()
    bar = ChainProgress(chain_cfg.n_iter) if progress else nullcontext()
    with bar:
        chain = run_chain(
            dataset,
            chain_cfg,
            out_path=chain_path,
            resume=resume,
            on_iteration=bar.update if progress else None,
        )

    retained = chain.retained()
    c_mean = float(np.mean([r.state.n_active for r in retained])) if retained else float("nan")
    console.print(
        f"[green]采样完成: {len(chain)} 条记录（保留 {len(retained)}），"
        f"平均簇数 {c_mean:.2f}，耗时 {time.time() - started:.1f}秒 → {chain_path}[/green]"
    )


@app.command()
def predict(
    chain: str = typer.Option(..., "--chain", help="链文件 chain.jsonl"),
    test: str = typer.Option(..., "--test", help="测试数据目录"),
    out: str = typer.Option(..., "--out", "-o", help="输出 predictions.csv 路径"),
    seed: Optional[int] = typer.Option(None, "--seed", help="区间估计用的随机种子（默认链种子）"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="输出调试日志"),
) -> None:
    """
    预测测试帖子长度并计算负对数似然

    示例：
        dualview predict --chain ./fit/chain.jsonl --test ./data/agree/test --out ./fit/predictions.csv
    """
    _setup(None, verbose)
    loaded = load_chain(Path(chain))
    test_data = load_dataset(Path(test))
    rng = np.random.default_rng(seed if seed is not None else loaded.config.seed)

    summary = predict_lengths(loaded, test_data.participation, rng, y_test=test_data.lengths)
    out_path = Path(out)
    summary.save(out_path)
    dump_yaml(loaded.config, out_path.parent / RESOLVED_CONFIG_FILE)

    console.print(
        f"[green]已预测 {summary.n_threads} 个帖子，NLL={summary.nll_total:.4f} → {out_path}[/green]"
    )


@app.command()
def summarize(
    chain: str = typer.Option(..., "--chain", help="链文件 chain.jsonl"),
    out: str = typer.Option(..., "--out", "-o", help="输出目录"),
    truth: Optional[str] = typer.Option(None, "--truth", help="真实标签 labels.csv"),
    test: Optional[str] = typer.Option(None, "--test", help="测试数据目录（计算NLL）"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="输出调试日志"),
) -> None:
    """
    写出 pairwise.csv、clustering.csv 与 metrics.json

    示例：
        dualview summarize --chain ./fit/chain.jsonl --truth ./data/agree/labels.csv --out ./fit
    """
    _setup(None, verbose)
    loaded = load_chain(Path(chain))
    z_true = load_labels(Path(truth), loaded.n_users) if truth else None
    nll = None
    if test:
        test_data = load_dataset(Path(test))
        nll = negative_loglik(loaded, test_data.participation, test_data.lengths)

    out_dir = Path(out)
    metrics = summarize_chain(loaded, out_dir, z_true=z_true, nll=nll)
    dump_yaml(loaded.config, out_dir / RESOLVED_CONFIG_FILE)

    table = Table(show_header=False, box=None, padding=(0, 2))
    table.add_column("指标", style="bold")
    table.add_column("值")
    for key, value in metrics.items():
        if value is None:
            text = "-"
        elif isinstance(value, float):
            text = f"{value:.4f}"
        else:
            text = str(value)
        table.add_row(key, text)
    console.print(table)


@app.command()
def diagnose(
    chain: str = typer.Option(..., "--chain", help="链文件 chain.jsonl"),
    out: str = typer.Option(..., "--out", "-o", help="输出 diagnostics.json 路径"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="输出调试日志"),
) -> None:
    """
    MCMC诊断（τ、ESS、Geweke z、簇数直方图），同目录写出 traces.csv

    示例：
        dualview diagnose --chain ./fit/chain.jsonl --out ./fit/diagnostics.json
    """
    _setup(None, verbose)
    loaded = load_chain(Path(chain))
    report = diagnose_chain(loaded)
    out_path = Path(out)
    save_diagnostics(out_path, report)
    save_traces(out_path.parent / TRACES_FILE, loaded)

    table = Table(title="诊断", header_style="bold magenta")
    table.add_column("变量")
    table.add_column("τ", justify="right")
    table.add_column("ESS", justify="right")
    table.add_column("Geweke z", justify="right")
    for name, entry in report.items():
        if name == "cluster_counts":
            continue
        cells = [entry.get(k) for k in ("tau", "ess", "geweke_z")]
        table.add_row(name, *("-" if v is None else f"{v:.3f}" for v in cells))
    console.print(table)
    counts = report["cluster_counts"]
    console.print(f"[bold]簇数众数:[/bold] {counts['mode']}  [dim]{counts['histogram']}[/dim]")


def _load_experiment(spec: str) -> ExperimentConfig:
    """实验描述文件：完整配置中的 experiment 段，或直接是实验配置"""
    path = Path(spec)
    if not path.exists():
        console.print(f"[red]错误: 实验描述文件不存在: {spec}[/red]")
        raise typer.Exit(EXIT_USAGE)
    with open(path, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    if "experiment" in data:
        data = data["experiment"]
    return ExperimentConfig(**data)


@app.command()
def experiment(
    spec: str = typer.Option(..., "--spec", help="实验描述文件（YAML）"),
    out: Optional[str] = typer.Option(None, "--out", "-o", help="实验输出目录"),
    workers: Optional[int] = typer.Option(None, "--workers", "-w", help="并行链数"),
    progress: bool = typer.Option(True, "--progress/--no-progress", help="显示实时进度"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="输出调试日志"),
) -> None:
    """
    运行 (变体 × 帖子数 × 重复) 对比实验，写出 summary.csv 与 summary_agg.csv

    示例：
        dualview experiment --spec experiments/agreement.yaml --workers 4
    """
    _setup(None, verbose)
    exp_cfg = _override(_load_experiment(spec), {"workers": workers})
    out_dir = Path(out) if out else None

    started = time.time()
    if not progress:
        result_dir = run_experiment(exp_cfg, out_dir)
        console.print(f"[green]实验完成 → {result_dir}[/green]")
        return

    runner = ExperimentRunner(exp_cfg, out_dir)
    view = ExperimentProgress(len(runner.cells), exp_cfg.workers)
    runner.set_callbacks(on_start=view.start_cell, on_complete=view.complete_cell)

    async def _run() -> None:
        async with view.live_progress():
            await runner.run()

    asyncio.run(_run())
    view.print_final_summary(time.time() - started, str(runner.out_dir))


@app.command()
def init_config(
    output: str = typer.Option(
        "./config.yaml",
        "--output", "-o",
        help="配置文件输出路径",
    ),
) -> None:
    """
    生成默认配置文件

    示例：
        dualview init-config
        dualview init-config -o my-config.yaml
    """
    output_path = Path(output).resolve()

    if output_path.exists():
        overwrite = typer.confirm(f"文件 {output_path} 已存在，是否覆盖？")
        if not overwrite:
            console.print("[yellow]已取消[/yellow]")
            raise typer.Exit(0)

    AppConfig().to_yaml(str(output_path))
    console.print(f"[green]配置文件已生成: {output_path}[/green]")


@app.command()
def version() -> None:
    """显示版本信息"""
    from src import __version__
    console.print(f"dualview v{__version__}")


# ==================== 入口 ====================

def _is_usage_error(e: Exception) -> bool:
    """typer解析参数失败时抛出的异常（带 exit_code 与 show()）"""
    return callable(getattr(e, "show", None)) and isinstance(getattr(e, "exit_code", None), int)


def run_cli(args: Optional[List[str]] = None) -> int:
    """
    执行命令并返回退出码

    0 成功，1 用法/配置错误，2 数据错误，3 数值失败
    """
    try:
        result = app(args=args, standalone_mode=False)
    except typer.Exit as e:
        return e.exit_code
    except typer.Abort:
        return EXIT_USAGE
    except ValidationError as e:
        console.print(f"[red]配置错误:[/red] {e}")
        return EXIT_USAGE
    except DataError as e:
        console.print(f"[red]数据错误:[/red] {e}")
        return EXIT_DATA
    except NumericalError as e:
        console.print(f"[red]数值失败:[/red] {e}")
        return EXIT_NUMERICAL
    except KeyboardInterrupt:
        console.print("\n[yellow]用户中断，链文件与断点已保存，可用 --resume 继续[/yellow]")
        return 130
    except Exception as e:
        if not _is_usage_error(e):
            raise
        e.show()
        return EXIT_USAGE
    return result if isinstance(result, int) else 0


def main() -> None:
    """CLI入口函数"""
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
