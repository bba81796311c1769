"""
枚举、数值容差、默认参数与共享数据类

集中存放各模块共用的常量与 PredictionSet / SetBatch，避免模块间循环引用。
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple

import numpy as np

if TYPE_CHECKING:
    from logic.label_graph import LabelGraph


# ── 枚举 ──────────────────────────────────────────────────────────────

class Method(Enum):
    SPLIT = "split"
    GRAPH = "graph"


class Correction(Enum):
    NONE = "none"
    TWO_FOLD = "two_fold"
    ORACLE = "oracle"


class Estimator(Enum):
    SOFT = "soft"
    HARD = "hard"
    EM = "em"
    BBSE = "bbse"


# ── 数值容差 ──────────────────────────────────────────────────────────

ROW_SUM_TOL: float = 1e-6
PROPS_SUM_TOL: float = 1e-6
SOFTMAX_TOL: float = 1e-9
# ⌈(1−α)(n+1)⌉ / ⌊(n+1)α⌋ 先按此位数取整，消除 0.9*10=9.000000000000002 之类的浮点毛刺
INDEX_ROUND_DIGITS: int = 9
# 节点分数保留 12 位小数：网格概率求和的末位误差不影响 ≥ λ / ≤ λ 判断
SCORE_ROUND_DIGITS: int = 12

# ── 图 ────────────────────────────────────────────────────────────────

VIRTUAL_ROOT: str = "__root__"

# ── 默认参数（与参考实验协议一致）──────────────────────────────────────

DEFAULT_ALPHA: float = 0.1
LOSS_BOUND_B: float = 1.0
DEFAULT_TRAIN_N: int = 500
DEFAULT_CALIB_N: int = 1000
DEFAULT_SYNTH_N: int = 5136
DEFAULT_K_FEATURES: int = 50
DEFAULT_L2: float = 0.01
DEFAULT_MAX_ITER: int = 2000
DEFAULT_TOL: float = 1e-6
DEFAULT_TRIALS: int = 100
DEFAULT_SEPARATION: float = 3.0
DEFAULT_N_FEATURES: int = 100
DEFAULT_N_INFORMATIVE: int = 30
DEFAULT_SEED: int = 20240601

# 参考数据集（小鼠回肠 15 种细胞类型）的细胞计数，合成数据默认类别分布
MOUSE_ILEUM_COUNTS: Tuple[Tuple[str, int], ...] = (
    ("B cell", 536),
    ("Endothelial", 231),
    ("Enterocyte", 1257),
    ("Goblet", 299),
    ("ICC", 31),
    ("Macrophage + DC", 427),
    ("Paneth", 328),
    ("Pericyte", 102),
    ("Smooth Muscle", 428),
    ("Stem + TA", 580),
    ("Stromal", 489),
    ("T (CD4+)", 197),
    ("T (CD8+)", 125),
    ("Telocyte", 115),
    ("Tuft", 18),
)

# 上述 15 种细胞类型的示意本体（与 data/mouse_ileum_ontology.tsv 一致）
MOUSE_ILEUM_EDGES: Tuple[Tuple[str, str], ...] = (
    ("cell", "epithelial cell"),
    ("epithelial cell", "intestinal epithelial cell"),
    ("intestinal epithelial cell", "Enterocyte"),
    ("intestinal epithelial cell", "Stem + TA"),
    ("intestinal epithelial cell", "secretory cell"),
    ("secretory cell", "Goblet"),
    ("secretory cell", "Paneth"),
    ("secretory cell", "Tuft"),
    ("cell", "hematopoietic cell"),
    ("hematopoietic cell", "leukocyte"),
    ("leukocyte", "lymphocyte"),
    ("leukocyte", "Macrophage + DC"),
    ("lymphocyte", "B cell"),
    ("lymphocyte", "T cell"),
    ("T cell", "T (CD4+)"),
    ("T cell", "T (CD8+)"),
    ("cell", "Endothelial"),
    ("cell", "connective tissue cell"),
    ("connective tissue cell", "Stromal"),
    ("connective tissue cell", "Telocyte"),
    ("connective tissue cell", "Pericyte"),
    ("cell", "contractile cell"),
    ("contractile cell", "Smooth Muscle"),
    ("contractile cell", "Pericyte"),
    ("contractile cell", "ICC"),
)


# ── 数据类 ────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class PredictionSet:
    leaves: frozenset
    anchor_node: Optional[str] = None        # 图方法中产生集合的祖先 v；split 方法为 None
    summary: Optional[Tuple[str, ...]] = None  # summarize_set 的结果
    size: int = 0
    homogeneity: Optional[float] = None      # 平均两两最短路；单元素集合为 0

    def contains(self, label: str) -> bool:
        return label in self.leaves

    def to_record(self, row_id: str) -> dict:
        anchor: object = None
        if self.summary:
            anchor = self.summary[0] if len(self.summary) == 1 else list(self.summary)
        return {
            "id": row_id,
            "leaves": sorted(self.leaves),
            "anchor": anchor,
            "seed_node": self.anchor_node,
            "size": self.size,
            "homogeneity": self.homogeneity,
        }


@dataclass(frozen=True)
class SetBatch:
    """
    批量预测集合：columns 为有序叶标签，mask[i, j] 表示第 i 行集合包含 columns[j]。
    anchors 为图方法每行的种子祖先。
    """
    columns: Tuple[str, ...]
    mask: np.ndarray
    anchors: Optional[Tuple[str, ...]] = None

    def __len__(self) -> int:
        return int(self.mask.shape[0])

    def sizes(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    def covers(self, labels: Sequence[str]) -> np.ndarray:
        col = {c: j for j, c in enumerate(self.columns)}
        out = np.zeros(len(labels), dtype=bool)
        for i, y in enumerate(labels):
            j = col.get(y)
            if j is not None:
                out[i] = bool(self.mask[i, j])
        return out

    def homogeneity(self, graph: "LabelGraph") -> np.ndarray:
        dist = graph.leaf_distance_matrix(self.columns)
        m = self.mask.astype(np.float64)
        pair_sum = 0.5 * np.einsum("ij,jk,ik->i", m, dist, m)
        s = self.mask.sum(axis=1)
        n_pairs = s * (s - 1) / 2.0
        out = np.zeros(len(s), dtype=np.float64)
        multi = n_pairs > 0
        out[multi] = pair_sum[multi] / n_pairs[multi]
        return out

    def take(self, rows: Sequence[int]) -> "SetBatch":
        rows = np.asarray(rows, dtype=np.int64)
        anchors = None
        if self.anchors is not None:
            anchors = tuple(self.anchors[i] for i in rows)
        return SetBatch(self.columns, self.mask[rows], anchors)

    def to_prediction_sets(self, graph: Optional["LabelGraph"] = None) -> List[PredictionSet]:
        homog = self.homogeneity(graph) if graph is not None else None
        out: List[PredictionSet] = []
        cols = np.asarray(self.columns, dtype=object)
        for i in range(len(self)):
            leaves = frozenset(cols[self.mask[i]].tolist())
            summary = None
            if graph is not None and leaves:
                summary = tuple(graph.summarize_set(leaves))
            out.append(PredictionSet(
                leaves=leaves,
                anchor_node=self.anchors[i] if self.anchors is not None else None,
                summary=summary,
                size=len(leaves),
                homogeneity=float(homog[i]) if homog is not None else None,
            ))
        return out


def stack_batches(parts: Sequence[Tuple[np.ndarray, SetBatch]], n_rows: int) -> SetBatch:
    """按原始行号把多个折的 SetBatch 拼回原顺序。"""
    columns = parts[0][1].columns
    mask = np.zeros((n_rows, len(columns)), dtype=bool)
    anchors: Optional[list] = [None] * n_rows if parts[0][1].anchors is not None else None
    for rows, batch in parts:
        mask[rows] = batch.mask
        if anchors is not None and batch.anchors is not None:
            for r, a in zip(rows, batch.anchors):
                anchors[int(r)] = a
    return SetBatch(columns, mask, tuple(anchors) if anchors is not None else None)
