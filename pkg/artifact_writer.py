"""
产物写出 - JSON 报告 + JSONL 逐行预测集合

- 每个 JSON 产物在顶层带 tool_version 与 config_hash
- JSONL 每行一个对象，键排序、无多余空白，相同输入逐字节一致
- 浮点数统一保留 12 位小数（银行家舍入），消除平台间的末位差异
"""

import json
import logging
import math
from pathlib import Path
from typing import Any, Iterable, List, Mapping, Optional, Sequence

from logic import __version__
from logic.constants import PredictionSet
from utils import canonical_json, round_half_even, to_jsonable

logger = logging.getLogger(__name__)

FLOAT_DIGITS = 12


def _round_floats(obj: Any) -> Any:
    if isinstance(obj, float):
        return round_half_even(obj, FLOAT_DIGITS) if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_round_floats(v) for v in obj]
    return obj


def _prepare(obj: Any) -> Any:
    return _round_floats(to_jsonable(obj))


def stamp(payload: Mapping[str, Any], config_hash: str, kind: str) -> dict:
    """加上 tool_version / config_hash / kind 三个顶层字段。"""
    out = dict(payload)
    out["tool_version"] = __version__
    out["config_hash"] = config_hash
    out["kind"] = kind
    return out


def write_json(path: str, payload: Mapping[str, Any], config_hash: str, kind: str) -> str:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    data = _prepare(stamp(payload, config_hash, kind))
    with open(p, "w", encoding="utf-8") as fh:
        json.dump(data, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")
    logger.info(f"已写出 {kind}: {p}")
    return str(p)


def set_records(ids: Sequence[str], sets: Sequence[PredictionSet]) -> List[dict]:
    return [s.to_record(i) for i, s in zip(ids, sets)]


def write_jsonl(path: str, records: Iterable[Mapping[str, Any]], config_hash: Optional[str] = None) -> str:
    """config_hash 给出时写入每一行。"""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(p, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            row = dict(rec)
            if config_hash is not None:
                row["config_hash"] = config_hash
            fh.write(canonical_json(_prepare(row)))
            fh.write("\n")
            count += 1
    logger.info(f"已写出 {count} 条预测集合: {p}")
    return str(p)


def write_histogram(path: str, bins: Sequence[Sequence[float]]) -> str:
    """gnuplot 可直接读取的三列文本：左端点 右端点 计数。"""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8") as fh:
        fh.write("# left\tright\tcount\n")
        for left, right, count in bins:
            fh.write(f"{left:.6f}\t{right:.6f}\t{int(count)}\n")
    logger.info(f"已写出覆盖率直方图: {p}")
    return str(p)
