"""
输入 / 输出文件读写

文件格式：
- 标签图: TSV，每行 parent<TAB>child，首个非空白字符为 # 的行是注释，无表头
- 概率: CSV，表头为类别名；可选 id 列、label 列（真实标签）
- 标签: CSV，必须有 label 列；可选 id 列
- 特征: CSV，表头为特征名；可选 id 列、label 列
- 预测集合: JSONL，每行一个对象（id, leaves, ...）
"""

import csv
import io
import json
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from logic.classifier import FeatureMatrix
from logic.errors import ConfigError, DataError
from logic.label_graph import LabelGraph, build_graph
from logic.scores import ProbMatrix

logger = logging.getLogger(__name__)

ID_COLUMN = "id"
LABEL_COLUMN = "label"


def _check_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ConfigError("InvalidConfig", f"文件不存在: {path}")
    return p


def _parse(source, path: str, **kwargs) -> pd.DataFrame:
    try:
        return pd.read_csv(source, **kwargs)
    except pd.errors.EmptyDataError as e:
        raise DataError("EmptyInput", f"文件为空: {path}") from e
    except pd.errors.ParserError as e:
        raise DataError("InvalidShape", f"无法解析 {path}: {e}") from e


def _read_csv(path: str, **kwargs) -> pd.DataFrame:
    return _parse(_check_file(path), path, **kwargs)


def _read_table(path: str) -> pd.DataFrame:
    """id / label 列按字符串读取（保留前导零），其余列交给 _numeric。"""
    header = _read_csv(path, nrows=0)
    dtype = {c: str for c in (ID_COLUMN, LABEL_COLUMN) if c in header.columns}
    return _read_csv(path, dtype=dtype, keep_default_na=False)


def _split_meta(df: pd.DataFrame) -> Tuple[List[str], Optional[List[str]], pd.DataFrame]:
    """拆出 id / label 列；没有 id 列时按行号生成。"""
    if ID_COLUMN in df.columns:
        ids = [str(v) for v in df[ID_COLUMN]]
        if len(set(ids)) != len(ids):
            raise DataError("InvalidIdentifier", "id 列存在重复值")
    else:
        width = max(5, len(str(len(df) - 1)))
        ids = [f"row_{i:0{width}d}" for i in range(len(df))]
    labels = [str(v) for v in df[LABEL_COLUMN]] if LABEL_COLUMN in df.columns else None
    body = df.drop(columns=[c for c in (ID_COLUMN, LABEL_COLUMN) if c in df.columns])
    return ids, labels, body


def _numeric(body: pd.DataFrame, path: str) -> np.ndarray:
    try:
        values = body.apply(pd.to_numeric, errors="raise").to_numpy(dtype=np.float64)
    except (ValueError, TypeError) as e:
        raise DataError("NonFiniteInput", f"{path} 含非数值单元: {e}") from e
    if not np.all(np.isfinite(values)):
        raise DataError("NonFiniteInput", f"{path} 含缺失或非有限值")
    return values


# ============================================================================
# 读取
# ============================================================================

def read_edges(path: str) -> List[Tuple[str, str]]:
    """只有首个非空白字符为 # 的整行才是注释，节点名中间的 # 原样保留。"""
    text = _check_file(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    df = _parse(
        io.StringIO("\n".join(lines)),
        path,
        sep="\t",
        header=None,
        dtype=str,
        quoting=csv.QUOTE_NONE,
        keep_default_na=False,
    )
    if df.shape[1] != 2:
        raise DataError("InvalidIdentifier", f"边表必须恰好两列，当前 {df.shape[1]} 列: {path}")
    edges = [(str(a), str(b)) for a, b in df.itertuples(index=False, name=None)]
    logger.debug(f"读取边表 {path}: {len(edges)} 条")
    return edges


def read_graph(path: str) -> LabelGraph:
    return build_graph(read_edges(path))


def read_probs(path: str) -> Tuple[List[str], ProbMatrix, Optional[List[str]]]:
    """返回 (ids, 概率矩阵, 可选的真实标签)。"""
    df = _read_table(path)
    ids, labels, body = _split_meta(df)
    if body.shape[0] == 0:
        raise DataError("EmptyInput", f"概率文件没有数据行: {path}")
    probs = ProbMatrix(tuple(str(c) for c in body.columns), _numeric(body, path))
    logger.info(f"读取概率 {path}: n={probs.n}, K={probs.k}, 含标签={labels is not None}")
    return ids, probs, labels


def read_labels(path: str, ids: Optional[Sequence[str]] = None) -> List[str]:
    """有 id 列且给出 ids 时按 ids 对齐，否则按行序。"""
    df = _read_csv(path, dtype=str, keep_default_na=False)
    if LABEL_COLUMN not in df.columns:
        if df.shape[1] != 1:
            raise DataError("InvalidShape", f"标签文件缺少 {LABEL_COLUMN} 列: {path}")
        # 无表头：每行一个标签
        df = _read_csv(path, header=None, names=[LABEL_COLUMN], dtype=str, keep_default_na=False)
    if ids is not None and ID_COLUMN in df.columns:
        lookup = dict(zip(df[ID_COLUMN], df[LABEL_COLUMN]))
        missing = [i for i in ids if i not in lookup]
        if missing:
            raise DataError("LengthMismatch", f"标签文件缺少 id: {missing[:5]}")
        return [str(lookup[i]) for i in ids]
    labels = [str(v) for v in df[LABEL_COLUMN]]
    if ids is not None and len(labels) != len(ids):
        raise DataError("LengthMismatch", f"标签数 {len(labels)} 与行数 {len(ids)} 不一致")
    return labels


def read_features(path: str) -> Tuple[FeatureMatrix, Optional[List[str]]]:
    df = _read_table(path)
    ids, labels, body = _split_meta(df)
    if body.shape[0] == 0 or body.shape[1] == 0:
        raise DataError("EmptyInput", f"特征文件为空: {path}")
    x = FeatureMatrix(tuple(ids), tuple(str(c) for c in body.columns), _numeric(body, path))
    logger.info(f"读取特征 {path}: n={x.n}, p={x.p}, 含标签={labels is not None}")
    return x, labels


def read_sets(path: str) -> List[dict]:
    p = _check_file(path)
    records = []
    with open(p, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError("InvalidShape", f"{path}:{lineno} 不是合法 JSON: {e}") from e
            if "leaves" not in rec:
                raise DataError("InvalidShape", f"{path}:{lineno} 缺少 leaves 字段")
            records.append(rec)
    if not records:
        raise DataError("EmptyInput", f"集合文件为空: {path}")
    return records


# ============================================================================
# 写出
# ============================================================================

def _ensure_parent(path: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)


def write_edges(path: str, edges: Sequence[Tuple[str, str]]) -> None:
    _ensure_parent(path)
    pd.DataFrame(list(edges)).to_csv(path, sep="\t", header=False, index=False)


def write_probs(
    path: str,
    ids: Sequence[str],
    probs: ProbMatrix,
    labels: Optional[Sequence[str]] = None,
) -> None:
    df = pd.DataFrame(probs.rows, columns=list(probs.class_names))
    df.insert(0, ID_COLUMN, list(ids))
    if labels is not None:
        df.insert(1, LABEL_COLUMN, list(labels))
    _ensure_parent(path)
    df.to_csv(path, index=False, float_format="%.10g")


def write_features(path: str, x: FeatureMatrix, labels: Optional[Sequence[str]] = None) -> None:
    df = pd.DataFrame(x.values, columns=list(x.feature_names))
    df.insert(0, ID_COLUMN, list(x.ids))
    if labels is not None:
        df.insert(1, LABEL_COLUMN, list(labels))
    _ensure_parent(path)
    df.to_csv(path, index=False, float_format="%.10g")
