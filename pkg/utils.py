"""
公共工具函数：规范化 JSON、配置哈希、数值取整，供 config、artifact_writer、pipeline 统一调用。
"""

import hashlib
import json
from decimal import Decimal, ROUND_HALF_EVEN
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np


def to_jsonable(obj: Any) -> Any:
    """numpy 标量 / 数组、枚举、Path、集合转为 JSON 原生类型。"""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, (set, frozenset)):
        return sorted(to_jsonable(v) for v in obj)
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, Path):
        return str(obj)
    return obj


def canonical_json(obj: Any) -> str:
    """键排序、无多余空白；同一对象总是得到同一字符串。"""
    return json.dumps(to_jsonable(obj), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_hash(obj: Any) -> str:
    """规范化 JSON 的 SHA-256（十六进制）。"""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def round_half_even(value: float, digits: int = 6) -> float:
    """
    按十进制银行家舍入保留 digits 位小数。

    Args:
        value: 原始数值
        digits: 小数位数

    Returns:
        取整后的数值；NaN / inf 原样返回
    """
    if not np.isfinite(value):
        return float(value)
    quantum = Decimal(1).scaleb(-digits)
    return float(Decimal(repr(float(value))).quantize(quantum, rounding=ROUND_HALF_EVEN))
