"""
图结构标签上的 conformal risk control

集合构造（对每行 x）:
    ŷ = argmax f̂(x)，A = 𝒜(ŷ) ∪ {ŷ}
    v = argmin { g(a, x) : a ∈ A, g(a, x) ≥ λ }，平局取 |ℒ(a)| 小者，再按名称
    C_λ(x) = ℒ(v) ∪ ⋃ { ℒ(a) : a ∈ A, g(a, x) ≤ λ }
两个比较都取等号；没有节点满足 g ≥ λ 时 v = 根。

校准:
    每个校准点的临界 λ*（最小的覆盖 λ）构成阶梯函数 R̂_n(λ) = mean(λ* > λ)，
    λ̂ = 候选 {0} ∪ {λ*} ∪ {1} 中满足 R̂_n(λ) ≤ α − (B−α)/n 的最小者。
由嵌套性，任意点在 λ 处被覆盖 ⇔ λ* ≤ λ。
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

import numpy as np

from logic.constants import INDEX_ROUND_DIGITS, LOSS_BOUND_B, SCORE_ROUND_DIGITS, PredictionSet, SetBatch
from logic.errors import CalibrationError, DataError
from logic.label_graph import LabelGraph
from logic.scores import (
    AncestorTable,
    LabeledBatch,
    ProbMatrix,
    ancestor_scores,
    ancestor_table,
)
from logic.split_conformal import check_alpha

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LambdaCalibration:
    lambda_hat: float
    alpha: float
    B: float
    n: int
    risk_curve: Tuple[Tuple[float, float], ...]
    critical: np.ndarray = field(repr=False)

    @property
    def bound(self) -> float:
        return self.alpha - (self.B - self.alpha) / self.n

    def to_dict(self) -> dict:
        return {
            "method": "graph",
            "lambda_hat": float(self.lambda_hat),
            "alpha": float(self.alpha),
            "B": float(self.B),
            "n": int(self.n),
            "bound": float(self.bound),
            "risk_curve": [[float(lam), float(r)] for lam, r in self.risk_curve],
            "critical_lambdas": [float(v) for v in self.critical],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LambdaCalibration":
        try:
            critical = np.sort(np.asarray(data.get("critical_lambdas", []), dtype=np.float64))
            return cls(
                lambda_hat=float(data["lambda_hat"]),
                alpha=check_alpha(data["alpha"]),
                B=float(data.get("B", LOSS_BOUND_B)),
                n=int(data["n"]),
                risk_curve=tuple((float(a), float(b)) for a, b in data.get("risk_curve", [])),
                critical=critical,
            )
        except KeyError as e:
            raise DataError("InvalidConfig", f"校准文件缺少字段: {e}") from e


# ── 分组 ──────────────────────────────────────────────────────────

@dataclass
class _Group:
    leaf: str
    table: AncestorTable
    rows: np.ndarray
    scores: np.ndarray  # (rows × |A|)


def _groups(g: LabelGraph, p: ProbMatrix) -> Iterator[_Group]:
    """按 ŷ 分组，每组一次性算出全部祖先分数。"""
    leaf_probs = p.in_leaf_space(g)
    yhat = p.point_predictions()
    for j in np.unique(yhat):
        rows = np.flatnonzero(yhat == j)
        leaf = p.class_names[int(j)]
        table = ancestor_table(g, leaf)
        yield _Group(leaf, table, rows, ancestor_scores(table, leaf_probs[rows]))


def _anchor_positions(scores: np.ndarray, root_pos: int, lam: float) -> np.ndarray:
    # 表内节点已按 (|ℒ|, 名称) 排序，argmin 取第一个即为平局规则
    masked = np.where(scores >= lam, scores, np.inf)
    pos = np.argmin(masked, axis=1)
    none_valid = np.isinf(masked[np.arange(len(pos)), pos])
    return np.where(none_valid, root_pos, pos)


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not 0.0 <= lam <= 1.0 or math.isnan(lam):
        raise DataError("InvalidConfig", f"λ 必须位于 [0, 1]，当前 {lam}")
    return lam


# ── 集合构造 ──────────────────────────────────────────────────────

def graph_sets(g: LabelGraph, p: ProbMatrix, lam: float) -> SetBatch:
    lam = _check_lambda(lam)
    mask = np.zeros((p.n, len(g.leaves)), dtype=bool)
    anchors: List[Optional[str]] = [None] * p.n
    for grp in _groups(g, p):
        pos = _anchor_positions(grp.scores, grp.table.root_pos, lam)
        member = grp.table.member
        below = (grp.scores <= lam).astype(np.float64) @ member.astype(np.float64) > 0
        mask[grp.rows] = member[pos] | below
        for r, a in zip(grp.rows, pos):
            anchors[int(r)] = grp.table.nodes[int(a)]
    n_all = int(mask.all(axis=1).sum())
    if n_all:
        logger.debug(f"λ={lam:.4f}: {n_all}/{p.n} 行为全叶集合")
    return SetBatch(columns=g.leaves, mask=mask, anchors=tuple(anchors))


def graph_set(g: LabelGraph, p: ProbMatrix, i: int, lam: float) -> PredictionSet:
    if not 0 <= i < p.n:
        raise DataError("IndexOutOfRange", f"行号 {i} 超出范围 [0, {p.n})")
    batch = graph_sets(g, p.take([i]), lam)
    return batch.to_prediction_sets(g)[0]


def miscoverage_loss(s: PredictionSet, y: str, g: Optional[LabelGraph] = None) -> int:
    if g is not None and y not in g:
        raise DataError("UnknownNode", f"未知节点: {y!r}")
    return 0 if s.contains(y) else 1


# ── 临界 λ 与校准 ─────────────────────────────────────────────────

def critical_lambdas(g: LabelGraph, b: LabeledBatch) -> np.ndarray:
    """
    每个点的最小覆盖 λ。

    y 被覆盖有两条途径：
      * 某个包含 y 的祖先 a 满足 g(a) ≤ λ，即 λ ≥ min g(a)
      * 锚点 v(λ) 包含 y；v 在区间 (c_{k−1}, c_k] 上恒为 c_k 档的胜者，
        该区间在分数网格（12 位小数）上的第一个点即为此途径的临界值（第一档从 0 开始）
    """
    p = b.probs
    leaf_pos = {leaf: j for j, leaf in enumerate(g.leaves)}
    y_leaf = np.fromiter((leaf_pos[y] for y in b.labels), dtype=np.int64, count=b.n)
    out = np.ones(b.n, dtype=np.float64)
    for grp in _groups(g, p):
        G = grp.scores
        m = G.shape[1]
        contains = grp.table.member[:, y_leaf[grp.rows]].T  # (rows × |A|)

        via_below = np.where(contains, G, np.inf).min(axis=1)

        same = G[:, :, None] == G[:, None, :]
        earlier = np.tril(np.ones((m, m), dtype=bool), k=-1)  # earlier[a, b] ⇔ b < a
        is_winner = ~(same & earlier[None, :, :]).any(axis=2)
        lower = np.where(G[:, None, :] < G[:, :, None], G[:, None, :], -np.inf).max(axis=2)
        # 分数都在 12 位小数网格上，取 lower 之后的下一个网格点，写入 JSON 后不变
        step = 10.0 ** -SCORE_ROUND_DIGITS
        start = np.where(np.isneginf(lower), 0.0, np.round(lower + step, SCORE_ROUND_DIGITS))
        via_anchor = np.where(is_winner & contains, start, np.inf).min(axis=1)

        out[grp.rows] = np.minimum(np.minimum(via_below, via_anchor), 1.0)
    return out


def _max_misses(n: int, alpha: float, B: float) -> int:
    """R̂_n ≤ α − (B−α)/n 等价于未覆盖数 ≤ ⌊nα − (B−α)⌋。"""
    return int(math.floor(round(n * alpha - (B - alpha), INDEX_ROUND_DIGITS)))


def _risk_curve(critical: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    n = len(critical)
    candidates = np.unique(np.concatenate([[0.0], critical, [1.0]]))
    misses = n - np.searchsorted(critical, candidates, side="right")
    return candidates, misses


def calibrate_lambda(
    g: LabelGraph,
    b: LabeledBatch,
    alpha: float,
    B: float = LOSS_BOUND_B,
) -> LambdaCalibration:
    alpha = check_alpha(alpha)
    n = b.n
    if n == 0:
        raise DataError("EmptyInput", "校准集为空")
    bound = alpha - (B - alpha) / n
    if bound <= 0:
        raise CalibrationError(
            "BoundUnachievable",
            f"α − (B−α)/n = {bound:.6f} ≤ 0 (n={n}, α={alpha}, B={B})",
        )

    critical = np.sort(critical_lambdas(g, b))
    candidates, misses = _risk_curve(critical)
    allowed = _max_misses(n, alpha, B)
    ok = np.flatnonzero(misses <= allowed)
    lambda_hat = float(candidates[ok[0]]) if ok.size else 1.0

    if lambda_hat >= 1.0:
        logger.warning(f"λ̂ 退回 1（全叶集合）: n={n}, α={alpha}")
    logger.info(
        f"CRC 校准完成: n={n}, α={alpha}, B={B}, 界={bound:.6f}, "
        f"λ̂={lambda_hat:.6f}, 断点数={len(candidates)}"
    )
    curve = tuple((float(lam), float(miss) / n) for lam, miss in zip(candidates, misses))
    return LambdaCalibration(
        lambda_hat=lambda_hat,
        alpha=alpha,
        B=float(B),
        n=n,
        risk_curve=curve,
        critical=critical,
    )


def risk_at(c: LambdaCalibration, lam: float) -> float:
    """
    校准集上的经验未覆盖率 R̂(λ)。

    λ 的分辨率为 1e-12：λ 严格落在 c_{k−1} 与 c_{k−1} + 1e-12 之间时，这里按未覆盖计，
    而 graph_sets 已覆盖。λ̂ 与全部临界值都在分数网格上，两者在网格点上一致。
    """
    if c.n == 0:
        return 0.0
    misses = c.n - int(np.searchsorted(c.critical, float(lam), side="right"))
    return misses / c.n


def covered_at(g: LabelGraph, b: LabeledBatch, lam: float) -> np.ndarray:
    """逐点覆盖指示，不必构造集合。"""
    return critical_lambdas(g, b) <= lam

