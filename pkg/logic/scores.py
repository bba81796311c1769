"""
概率矩阵 / 一致性分数 / 点预测 / 节点分数 g(v, x)

* ProbMatrix: n × K 概率矩阵，加载时校验每行和为 1（容差 1e-6），不做静默归一化
* LabeledBatch: 概率矩阵 + 真实标签
* 节点分数只对 ŷ 的祖先计算：按 ŷ 分组，一次矩阵乘法得到整组行的祖先分数
"""
from __future__ import annotations

import threading
import weakref
from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import numpy as np

from logic.constants import ROW_SUM_TOL, SCORE_ROUND_DIGITS
from logic.errors import DataError
from logic.label_graph import LabelGraph


@dataclass(frozen=True, eq=False)
class ProbMatrix:
    class_names: Tuple[str, ...]
    rows: np.ndarray

    def __post_init__(self) -> None:
        names = tuple(str(c) for c in self.class_names)
        arr = np.array(self.rows, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise DataError("InvalidShape", f"概率矩阵必须是二维，当前维度 {arr.ndim}")
        if len(names) < 2:
            raise DataError("InvalidShape", f"至少需要 2 个类别，当前 {len(names)}")
        if len(set(names)) != len(names):
            raise DataError("InvalidShape", "类别名重复")
        if arr.shape[1] != len(names):
            raise DataError("InvalidShape", f"列数 {arr.shape[1]} 与类别数 {len(names)} 不一致")
        if not np.all(np.isfinite(arr)):
            raise DataError("NonFiniteInput", "概率矩阵含有非有限值")
        if arr.size and (arr.min() < -ROW_SUM_TOL or arr.max() > 1 + ROW_SUM_TOL):
            raise DataError("RowNotNormalized", "概率必须位于 [0, 1]")
        sums = arr.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
        if bad.size:
            i = int(bad[0])
            raise DataError(
                "RowNotNormalized",
                f"第 {i} 行概率和为 {sums[i]:.8f}，超出容差 {ROW_SUM_TOL}（共 {bad.size} 行）",
            )
        arr.setflags(write=False)
        object.__setattr__(self, "class_names", names)
        object.__setattr__(self, "rows", arr)

    @property
    def n(self) -> int:
        return int(self.rows.shape[0])

    @property
    def k(self) -> int:
        return len(self.class_names)

    def class_index(self) -> Dict[str, int]:
        return {c: j for j, c in enumerate(self.class_names)}

    def take(self, idx: Sequence[int]) -> "ProbMatrix":
        return ProbMatrix(self.class_names, self.rows[np.asarray(idx, dtype=np.int64)])

    def with_classes(self, names: Sequence[str]) -> "ProbMatrix":
        """扩展到更大的类别列表，新增类别概率为 0。"""
        names = tuple(str(c) for c in names)
        missing = [c for c in self.class_names if c not in set(names)]
        if missing:
            raise DataError("LabelNotInClasses", f"类别不在目标类别列表中: {missing[:5]}")
        pos = self.class_index()
        out = np.zeros((self.n, len(names)), dtype=np.float64)
        for j, c in enumerate(names):
            if c in pos:
                out[:, j] = self.rows[:, pos[c]]
        return ProbMatrix(names, out)

    def point_predictions(self) -> np.ndarray:
        # np.argmax 平局时取第一个，即 class_names 顺序中靠前者
        return np.argmax(self.rows, axis=1)

    def in_leaf_space(self, graph: LabelGraph) -> np.ndarray:
        """按 graph.leaves 的列顺序重排概率；图中有而模型没有的叶概率为 0。"""
        leaf_pos = {leaf: j for j, leaf in enumerate(graph.leaves)}
        missing = [c for c in self.class_names if c not in leaf_pos]
        if missing:
            raise DataError("GraphClassMismatch", f"类别不是图的叶节点: {missing[:5]}")
        out = np.zeros((self.n, len(graph.leaves)), dtype=np.float64)
        cols = [leaf_pos[c] for c in self.class_names]
        out[:, cols] = self.rows
        return out


@dataclass(frozen=True, eq=False)
class LabeledBatch:
    probs: ProbMatrix
    labels: Tuple[str, ...]

    def __post_init__(self) -> None:
        labels = tuple(str(y) for y in self.labels)
        if len(labels) != self.probs.n:
            raise DataError("LengthMismatch", f"标签数 {len(labels)} 与概率行数 {self.probs.n} 不一致")
        pos = self.probs.class_index()
        unknown = sorted({y for y in labels if y not in pos})
        if unknown:
            raise DataError("LabelNotInClasses", f"标签不在类别列表中: {unknown[:5]}")
        idx = np.fromiter((pos[y] for y in labels), dtype=np.int64, count=len(labels))
        idx.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "_label_index", idx)

    @property
    def n(self) -> int:
        return self.probs.n

    @property
    def label_index(self) -> np.ndarray:
        return self._label_index  # type: ignore[attr-defined]

    def take(self, idx: Sequence[int]) -> "LabeledBatch":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledBatch(self.probs.take(idx), tuple(self.labels[i] for i in idx))

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.label_index, minlength=self.probs.k)


# ── 分数 ──────────────────────────────────────────────────────────

def conformal_scores(b: LabeledBatch) -> np.ndarray:
    """s_i = 1 − f̂(X_i)_{Y_i}"""
    return 1.0 - b.probs.rows[np.arange(b.n), b.label_index]


def point_prediction(p: ProbMatrix, i: int) -> str:
    _check_row(p, i)
    return p.class_names[int(np.argmax(p.rows[i]))]


def node_score(g: LabelGraph, p: ProbMatrix, i: int, v: str) -> float:
    """g(v, x_i) = Σ_{j ∈ ℒ(v)} f̂(x_i)_j，保留 12 位小数并截断到 [0, 1]，根节点恰为 1。"""
    _check_row(p, i)
    leaves = g.leaf_descendants(v)
    pos = p.class_index()
    missing = [c for c in p.class_names if c not in g.leaf_set]
    if missing:
        raise DataError("GraphClassMismatch", f"类别不是图的叶节点: {missing[:5]}")
    if v == g.root:
        return 1.0
    total = sum(p.rows[i, pos[leaf]] for leaf in sorted(leaves) if leaf in pos)
    return float(np.clip(np.round(total, SCORE_ROUND_DIGITS), 0.0, 1.0))


def _check_row(p: ProbMatrix, i: int) -> None:
    if not 0 <= i < p.n:
        raise DataError("IndexOutOfRange", f"行号 {i} 超出范围 [0, {p.n})")


# ── 祖先分数表（批量）──────────────────────────────────────────────

@dataclass(frozen=True)
class AncestorTable:
    """
    某个叶节点 ŷ 的自反祖先表。

    nodes 按平局规则排序：(|ℒ(v)|, 名称)；member[a, j] 表示叶 j ∈ ℒ(nodes[a])。
    """
    nodes: Tuple[str, ...]
    member: np.ndarray
    root_pos: int


_TABLES: "weakref.WeakKeyDictionary[LabelGraph, Dict[str, AncestorTable]]" = weakref.WeakKeyDictionary()
_TABLES_LOCK = threading.Lock()


def ancestor_table(g: LabelGraph, leaf: str) -> AncestorTable:
    with _TABLES_LOCK:
        per_graph = _TABLES.setdefault(g, {})
        table = per_graph.get(leaf)
    if table is not None:
        return table

    leaf_pos = {name: j for j, name in enumerate(g.leaves)}
    nodes = sorted(g.ancestors(leaf, reflexive=True), key=lambda v: (len(g.leaf_descendants(v)), v))
    member = np.zeros((len(nodes), len(g.leaves)), dtype=bool)
    for a, v in enumerate(nodes):
        for name in g.leaf_descendants(v):
            member[a, leaf_pos[name]] = True
    member.setflags(write=False)
    table = AncestorTable(tuple(nodes), member, nodes.index(g.root))
    with _TABLES_LOCK:
        return per_graph.setdefault(leaf, table)


def ancestor_scores(table: AncestorTable, leaf_probs: np.ndarray) -> np.ndarray:
    """leaf_probs: (rows × |N|)，返回 (rows × |𝒜(ŷ)|) 的 g 值。"""
    scores = leaf_probs @ table.member.T.astype(np.float64)
    scores = np.clip(np.round(scores, SCORE_ROUND_DIGITS), 0.0, 1.0)
    scores[:, table.root_pos] = 1.0
    return scores
