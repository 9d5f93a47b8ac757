"""
链存储服务模块
JSON-lines 增量写出马尔可夫链，支持中断后从最后一条完整记录续跑
"""
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, TextIO, Tuple

from src.models.chain import CHAIN_VERSION, Chain, ChainRecord
from src.models.config import ChainConfig, config_to_plain
from src.models.errors import DataError
from src.utils.logger import get_logger

logger = get_logger(__name__)


def _dumps(obj: Any) -> str:
    """紧凑且确定的JSON编码"""
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def chain_header(config: ChainConfig, dataset_digest: str) -> Dict[str, Any]:
    """链文件第一行"""
    return {
        "version": CHAIN_VERSION,
        "config": config_to_plain(config),
        "dataset_digest": dataset_digest,
    }


@dataclass
class CheckpointData:
    """断点数据"""
    chain_file: str                     # 链文件名
    iteration: int                      # 最后一条已写出记录的迭代号
    n_records: int                      # 已写出的记录数
    rng_state: Dict[str, dict] = field(default_factory=dict)  # 各随机数流在该记录之后的状态
    version: int = CHAIN_VERSION


class ChainStore:
    """
    链文件读写

    功能：
    - 先写表头，再逐条追加记录，每条记录后刷新
    - 每条记录后更新断点文件（随机数流状态）
    - 加载时容忍被截断的最后一行
    """

    CHECKPOINT_SUFFIX = ".checkpoint.json"

    def __init__(self, chain_path: Path):
        """
        Args:
            chain_path: 链文件路径（.jsonl）
        """
        self.chain_path = Path(chain_path)
        self.checkpoint_path = self.chain_path.parent / (
            "." + self.chain_path.name + self.CHECKPOINT_SUFFIX
        )
        self._handle: Optional[TextIO] = None
        self._n_records = 0

    # ==================== 写 ====================

    def create(self, header: Dict[str, Any]) -> None:
        """新建链文件（覆盖旧文件）并写出表头"""
        self.chain_path.parent.mkdir(parents=True, exist_ok=True)
        self.checkpoint_path.unlink(missing_ok=True)
        self._handle = open(self.chain_path, "w", encoding="utf-8", newline="\n")
        self._handle.write(_dumps(header) + "\n")
        self._handle.flush()
        self._n_records = 0

    def reopen(self, n_complete_lines: int) -> None:
        """
        截掉不完整的尾部后以追加方式打开

        Args:
            n_complete_lines: 需要保留的完整行数（含表头）
        """
        with open(self.chain_path, "r", encoding="utf-8") as f:
            lines = f.readlines()
        kept = lines[:n_complete_lines]
        with open(self.chain_path, "w", encoding="utf-8", newline="\n") as f:
            f.writelines(kept)
        self._handle = open(self.chain_path, "a", encoding="utf-8", newline="\n")
        self._n_records = n_complete_lines - 1

    def append(self, record: ChainRecord, rng_state: Dict[str, dict]) -> None:
        """追加一条记录并更新断点"""
        if self._handle is None:
            raise RuntimeError("chain store is not open")
        self._handle.write(_dumps(record.to_dict()) + "\n")
        self._handle.flush()
        self._n_records += 1
        self.save_checkpoint(
            CheckpointData(
                chain_file=self.chain_path.name,
                iteration=record.iteration,
                n_records=self._n_records,
                rng_state=rng_state,
            )
        )

    def close(self) -> None:
        if self._handle is not None:
            self._handle.close()
            self._handle = None

    def __enter__(self) -> "ChainStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # ==================== 断点 ====================

    def save_checkpoint(self, checkpoint: CheckpointData) -> None:
        """保存断点数据（先写临时文件再替换）"""
        tmp = self.checkpoint_path.with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(asdict(checkpoint), f)
        tmp.replace(self.checkpoint_path)

    def load_checkpoint(self) -> Optional[CheckpointData]:
        """
        加载断点数据

        Returns:
            断点数据，不存在或损坏时为None
        """
        if not self.checkpoint_path.exists():
            logger.info("未找到断点文件，将从头开始采样")
            return None
        try:
            with open(self.checkpoint_path, "r", encoding="utf-8") as f:
                return CheckpointData(**json.load(f))
        except (OSError, ValueError, TypeError) as e:
            logger.warning(f"加载断点文件失败: {e}")
            return None

    # ==================== 读 ====================

    def read(self) -> Tuple[Dict[str, Any], List[ChainRecord]]:
        """
        读取表头与所有完整记录

        Raises:
            DataError: 文件缺失、表头损坏或中间行损坏
        """
        if not self.chain_path.exists():
            raise DataError(f"missing chain file: {self.chain_path}", index=self.chain_path.name)

        with open(self.chain_path, "r", encoding="utf-8") as f:
            lines = f.readlines()
        if not lines:
            raise DataError(f"empty chain file: {self.chain_path}", index=0)

        try:
            header = json.loads(lines[0])
        except json.JSONDecodeError as e:
            raise DataError(f"corrupt chain header in {self.chain_path.name}", index=0) from e
        if header.get("version") != CHAIN_VERSION:
            raise DataError(f"unsupported chain version {header.get('version')!r}", index=0)

        records: List[ChainRecord] = []
        for i, line in enumerate(lines[1:], start=1):
            last = i == len(lines) - 1
            if last and not line.endswith("\n"):
                logger.warning(f"忽略被截断的最后一行 (第{i + 1}行)")
                break
            try:
                records.append(ChainRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                if last:
                    logger.warning(f"忽略损坏的最后一行 (第{i + 1}行): {e}")
                    break
                raise DataError(f"corrupt chain record at line {i + 1}", index=i + 1) from e
        return header, records


def load_chain(path: Path) -> Chain:
    """
    读取链文件

    Args:
        path: chain.jsonl 路径

    Returns:
        Chain
    """
    header, records = ChainStore(path).read()
    try:
        config = ChainConfig(**header["config"])
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"invalid chain config in header: {e}", index=0) from e
    logger.debug(f"已加载链 {path}: {len(records)} 条记录")
    return Chain(config=config, dataset_digest=header.get("dataset_digest", ""), records=records)
