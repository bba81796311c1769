"""
标准 split conformal 分类（平坦集合基线）

校准: k = ⌈(1−α)(n+1)⌉，q̂ = 第 k 小的分数；k > n 时无法校准
预测: C(x) = { y : 1 − f̂(x)_y ≤ q̂ }，与 f̂(x)_y ≥ 1 − q̂ 等价，但和校准分数用同一表达式比较
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from logic.constants import INDEX_ROUND_DIGITS, PredictionSet, SetBatch
from logic.errors import CalibrationError, DataError
from logic.scores import LabeledBatch, ProbMatrix, conformal_scores

logger = logging.getLogger(__name__)


def check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not (0.0 < alpha < 1.0) or math.isnan(alpha):
        raise CalibrationError("InvalidAlpha", f"α 必须位于 (0, 1)，当前 {alpha}")
    return alpha


def quantile_index(n: int, alpha: float) -> int:
    """⌈(1−α)(n+1)⌉，乘积先四舍五入到 9 位小数。"""
    return int(math.ceil(round((1.0 - alpha) * (n + 1), INDEX_ROUND_DIGITS)))


@dataclass(frozen=True)
class SplitCalibration:
    q_hat: float
    n: int
    alpha: float
    sorted_scores: np.ndarray = field(repr=False)

    @property
    def k(self) -> int:
        return quantile_index(self.n, self.alpha)

    def to_dict(self, include_scores: bool = False) -> dict:
        out = {
            "method": "split",
            "q_hat": float(self.q_hat),
            "n": int(self.n),
            "alpha": float(self.alpha),
            "k": self.k,
        }
        if include_scores:
            out["sorted_scores"] = [float(s) for s in self.sorted_scores]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SplitCalibration":
        try:
            scores = np.asarray(data.get("sorted_scores", []), dtype=np.float64)
            return cls(
                q_hat=float(data["q_hat"]),
                n=int(data["n"]),
                alpha=check_alpha(data["alpha"]),
                sorted_scores=scores,
            )
        except KeyError as e:
            raise DataError("InvalidConfig", f"校准文件缺少字段: {e}") from e


def calibrate_split(b: LabeledBatch, alpha: float) -> SplitCalibration:
    alpha = check_alpha(alpha)
    n = b.n
    k = quantile_index(n, alpha)
    if k > n:
        raise CalibrationError(
            "CalibrationTooSmall",
            f"校准集过小: n={n}, α={alpha} 需要第 {k} 个顺序统计量",
        )
    scores = np.sort(conformal_scores(b))
    q_hat = float(scores[k - 1])
    logger.info(f"split 校准完成: n={n}, α={alpha}, k={k}, q̂={q_hat:.6f}")
    return SplitCalibration(q_hat=q_hat, n=n, alpha=alpha, sorted_scores=scores)


def split_predict_set(c: SplitCalibration, p: ProbMatrix, i: int) -> PredictionSet:
    if not 0 <= i < p.n:
        raise DataError("IndexOutOfRange", f"行号 {i} 超出范围 [0, {p.n})")
    keep = (1.0 - p.rows[i]) <= c.q_hat
    leaves = frozenset(name for name, k in zip(p.class_names, keep) if k)
    return PredictionSet(leaves=leaves, size=len(leaves))


def split_sets(c: SplitCalibration, p: ProbMatrix, q_hat: Optional[float] = None) -> SetBatch:
    """全部行的 split 集合；q_hat 可覆盖校准值（用于单调性检查）。"""
    threshold = c.q_hat if q_hat is None else q_hat
    mask = (1.0 - p.rows) <= threshold
    empty = int((~mask.any(axis=1)).sum())
    if empty:
        logger.debug(f"split 集合: {empty}/{p.n} 行为空集")
    return SetBatch(columns=p.class_names, mask=mask)
