"""
内置多项 logit（softmax 回归）

* 特征按样本方差取前 k 个（平局按名称）
* 训练前标准化（均值 0、标准差 1），常数特征丢弃；标准化参数随模型保存
* 目标函数: 平均负对数似然 + (l2/2)·‖W‖²（截距不参与惩罚）
* 全批量梯度下降 + Armijo 回溯线搜索；梯度最大分量 < tol 或达到 max_iter 时停止
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp, softmax

from logic.constants import DEFAULT_L2, DEFAULT_MAX_ITER, DEFAULT_TOL
from logic.errors import DataError
from logic.scores import ProbMatrix

logger = logging.getLogger(__name__)

_ARMIJO_C = 1e-4
_BACKTRACK = 0.5
_MAX_STEP = 64.0
_MIN_STEP = 1e-12


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    ids: Tuple[str, ...]
    feature_names: Tuple[str, ...]
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        arr = np.array(self.values, dtype=np.float64, copy=True)
        names = tuple(str(f) for f in self.feature_names)
        ids = tuple(str(i) for i in self.ids)
        if arr.ndim != 2 or arr.shape != (len(ids), len(names)):
            raise DataError(
                "InvalidShape",
                f"特征矩阵形状 {arr.shape} 与 ids={len(ids)} / 特征={len(names)} 不一致",
            )
        if len(set(names)) != len(names):
            raise DataError("InvalidShape", "特征名重复")
        if not np.all(np.isfinite(arr)):
            raise DataError("NonFiniteInput", "特征矩阵含有非有限值")
        arr.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "values", arr)

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def p(self) -> int:
        return len(self.feature_names)

    def take(self, rows: Sequence[int]) -> "FeatureMatrix":
        rows = np.asarray(rows, dtype=np.int64)
        return FeatureMatrix(tuple(self.ids[i] for i in rows), self.feature_names, self.values[rows])

    def columns(self, names: Sequence[str]) -> np.ndarray:
        pos = {f: j for j, f in enumerate(self.feature_names)}
        missing = [f for f in names if f not in pos]
        if missing:
            raise DataError("MissingFeature", f"缺少特征: {missing[:5]}")
        return self.values[:, [pos[f] for f in names]]


@dataclass
class LogitModel:
    weights: np.ndarray  # K × (p'+1)，第 0 列为截距
    selected_features: List[str]
    classes: List[str]
    l2: float
    means: np.ndarray
    scales: np.ndarray
    training_log: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "selected_features": list(self.selected_features),
            "l2": float(self.l2),
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "scales": self.scales.tolist(),
            "training_log": dict(self.training_log),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LogitModel":
        try:
            features = list(data["selected_features"])
            classes = list(data["classes"])
            weights = np.asarray(data["weights"], dtype=np.float64).reshape(len(classes), len(features) + 1)
            return cls(
                weights=weights,
                selected_features=features,
                classes=classes,
                l2=float(data["l2"]),
                means=np.asarray(data["means"], dtype=np.float64),
                scales=np.asarray(data["scales"], dtype=np.float64),
                training_log=dict(data.get("training_log", {})),
            )
        except (KeyError, ValueError) as e:
            raise DataError("InvalidConfig", f"模型文件格式错误: {e}") from e


# ── 特征选择 ──────────────────────────────────────────────────────

def select_top_variance(x: FeatureMatrix, k: int) -> List[str]:
    if not 1 <= k <= x.p:
        raise DataError("KTooLarge", f"k={k} 超出范围 [1, {x.p}]")
    ddof = 1 if x.n > 1 else 0
    var = x.values.var(axis=0, ddof=ddof)
    order = sorted(range(x.p), key=lambda j: (-var[j], x.feature_names[j]))
    return [x.feature_names[j] for j in order[:k]]


# ── 目标函数 ──────────────────────────────────────────────────────

def _design(z: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((z.shape[0], 1)), z])


def logit_objective(W: np.ndarray, Z: np.ndarray, y: np.ndarray, l2: float) -> float:
    """Z 为含截距列的设计矩阵，y 为类别下标。"""
    logits = Z @ W.T
    nll = logsumexp(logits, axis=1) - logits[np.arange(len(y)), y]
    penalty = 0.5 * l2 * float(np.sum(W[:, 1:] ** 2))
    return float(nll.mean()) + penalty


def logit_gradient(W: np.ndarray, Z: np.ndarray, y: np.ndarray, l2: float) -> np.ndarray:
    probs = softmax(Z @ W.T, axis=1)
    probs[np.arange(len(y)), y] -= 1.0
    grad = probs.T @ Z / len(y)
    grad[:, 1:] += l2 * W[:, 1:]
    return grad


# ── 训练 / 预测 ───────────────────────────────────────────────────

def fit_logit(
    x: FeatureMatrix,
    labels: Sequence[str],
    l2: float = DEFAULT_L2,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    k_features: Optional[int] = None,
    classes: Optional[Sequence[str]] = None,
) -> LogitModel:
    labels = [str(v) for v in labels]
    if len(labels) != x.n:
        raise DataError("LengthMismatch", f"标签数 {len(labels)} 与特征行数 {x.n} 不一致")
    if l2 < 0:
        raise DataError("InvalidConfig", f"l2 必须非负，当前 {l2}")
    present = sorted(set(labels))
    if len(present) < 2:
        raise DataError("SingleClass", f"训练集只有一个类别: {present}")
    class_list = list(classes) if classes is not None else present
    pos = {c: j for j, c in enumerate(class_list)}
    unknown = [c for c in present if c not in pos]
    if unknown:
        raise DataError("LabelNotInClasses", f"训练标签不在类别列表中: {unknown[:5]}")
    if x.n < len(class_list):
        raise DataError("InvalidShape", f"训练样本数 {x.n} 少于类别数 {len(class_list)}")

    names = select_top_variance(x, k_features) if k_features else list(x.feature_names)
    raw = x.columns(names)
    means = raw.mean(axis=0)
    scales = raw.std(axis=0)
    keep = scales > 0
    if not keep.all():
        logger.info(f"丢弃 {int((~keep).sum())} 个常数特征")
    names = [f for f, k in zip(names, keep) if k]
    means, scales = means[keep], scales[keep]
    Z = _design((raw[:, keep] - means) / scales)
    y = np.fromiter((pos[c] for c in labels), dtype=np.int64, count=len(labels))

    W = np.zeros((len(class_list), Z.shape[1]))
    f = logit_objective(W, Z, y, l2)
    step = 1.0
    converged = False
    it = 0
    grad_max = float("inf")
    for it in range(1, max_iter + 1):
        grad = logit_gradient(W, Z, y, l2)
        grad_max = float(np.abs(grad).max())
        if grad_max < tol:
            converged = True
            break
        g2 = float(np.sum(grad ** 2))
        while True:
            W_new = W - step * grad
            f_new = logit_objective(W_new, Z, y, l2)
            if f_new <= f - _ARMIJO_C * step * g2 or step < _MIN_STEP:
                break
            step *= _BACKTRACK
        if f_new > f:
            logger.warning(f"线搜索无法继续下降，第 {it} 轮停止")
            break
        W, f = W_new, f_new
        step = min(step * 2.0, _MAX_STEP)

    acc = float((np.argmax(Z @ W.T, axis=1) == y).mean())
    if not converged:
        logger.warning(f"logit 未收敛: {max_iter} 轮后梯度最大分量 {grad_max:.2e} ≥ tol={tol:.0e}")
    logger.info(
        f"logit 训练完成: n={x.n}, K={len(class_list)}, p'={len(names)}, l2={l2}, "
        f"轮数={it}, 目标={f:.6f}, 训练准确率={acc:.3f}"
    )
    return LogitModel(
        weights=W,
        selected_features=names,
        classes=class_list,
        l2=float(l2),
        means=means,
        scales=scales,
        training_log={
            "iterations": it,
            "objective": f,
            "converged": converged,
            "grad_max": grad_max,
            "train_accuracy": acc,
        },
    )


def predict_probs(m: LogitModel, x: FeatureMatrix) -> ProbMatrix:
    raw = x.columns(m.selected_features)
    Z = _design((raw - m.means) / m.scales) if m.selected_features else np.ones((x.n, 1))
    probs = softmax(Z @ m.weights.T, axis=1)
    return ProbMatrix(tuple(m.classes), probs)
