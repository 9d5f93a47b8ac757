#!/usr/bin/env python3
"""
dualview 源码目录下的启动脚本，等价于安装后的 `dualview` 命令

    python main.py fit --data ./data/agree/train --out ./fit
"""
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

from src.cli.commands import run_cli  # noqa: E402

if __name__ == "__main__":
    sys.exit(run_cli())
