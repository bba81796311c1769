"""
标签偏移校正：双折重采样

流程（种子 → SeedSequence 派生三条流：分折 / 折 1 / 折 2）:
    1. 测试行随机均分为 S₁、S₂
    2. 用 S₂ 的模型输出估计类别比例 p̂(Y=i)（默认 bbse，按校准集混淆矩阵校正），
       按此比例分层有放回地重采样校准集，校准后为 S₁ 预测
    3. 交换 S₁、S₂ 重复
oracle 校正直接用测试集真实标签频率重采样，只用于评估。
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import optimize

from logic.constants import (
    LOSS_BOUND_B,
    PROPS_SUM_TOL,
    Correction,
    Estimator,
    Method,
    SetBatch,
    stack_batches,
)
from logic.errors import DataError
from logic.graph_crc import LambdaCalibration, calibrate_lambda, graph_sets
from logic.label_graph import LabelGraph
from logic.scores import LabeledBatch, ProbMatrix
from logic.split_conformal import SplitCalibration, calibrate_split, split_sets

logger = logging.getLogger(__name__)

Calibration = Union[SplitCalibration, LambdaCalibration]
SeedLike = Union[int, np.random.SeedSequence, None]

_EM_MAX_ITER = 1000
_EM_TOL = 1e-8


@dataclass(frozen=True)
class ShiftCorrectionPlan:
    class_names: Tuple[str, ...]
    fold_assignment: np.ndarray = field(repr=False)
    estimated_props_per_fold: Tuple[np.ndarray, ...]
    resample_counts_per_fold: Tuple[np.ndarray, ...]
    resample_size: int
    seed: Optional[int]
    estimator: Optional[Estimator]
    dropped_classes: Tuple[str, ...] = ()

    def fold_sizes(self) -> Tuple[int, ...]:
        return tuple(int(c) for c in np.bincount(self.fold_assignment)[1:])

    def to_audit(self) -> dict:
        return {
            "fold_sizes": list(self.fold_sizes()),
            "estimator": self.estimator.value if self.estimator else "oracle",
            "resample_size": self.resample_size,
            "seed": self.seed,
            "estimated_props": [
                {c: float(v) for c, v in zip(self.class_names, props)}
                for props in self.estimated_props_per_fold
            ],
            "resample_counts": [
                {c: int(v) for c, v in zip(self.class_names, counts)}
                for counts in self.resample_counts_per_fold
            ],
            "dropped_classes": list(self.dropped_classes),
        }


@dataclass(frozen=True)
class CorrectionResult:
    sets: SetBatch
    calibrations: Tuple[Calibration, ...]
    plan: Optional[ShiftCorrectionPlan] = None


# ── 比例估计 ──────────────────────────────────────────────────────

def estimate_class_proportions(
    p: ProbMatrix,
    estimator: Estimator = Estimator.SOFT,
    train_priors: Optional[np.ndarray] = None,
    reference: Optional[LabeledBatch] = None,
) -> np.ndarray:
    """
    soft: 平均预测概率
    hard: argmax 频率
    em:   按训练先验做后验重加权的 EM，train_priors 缺省时取均匀分布
    bbse: 用带标签参照集（校准集）的混淆矩阵校正平均预测概率

    模型在校准分布上训练时，soft / hard 估计会被拉向训练先验；
    bbse 在 p(x|y) 不变的前提下无此偏差，双折校正默认使用它。
    """
    if p.n == 0:
        raise DataError("EmptyFold", "估计类别比例的折为空")
    if estimator is Estimator.SOFT:
        return p.rows.mean(axis=0)
    if estimator is Estimator.HARD:
        return np.bincount(p.point_predictions(), minlength=p.k) / p.n
    if estimator is Estimator.BBSE:
        if reference is None:
            raise DataError("InvalidConfig", "bbse 估计需要带标签的参照集")
        if reference.probs.class_names != p.class_names:
            raise DataError("GraphClassMismatch", "参照集与待估计折的类别顺序不一致")
        return _bbse_props(p.rows, reference)
    return _em_priors(p.rows, train_priors)


def confusion_means(reference: LabeledBatch) -> Tuple[np.ndarray, np.ndarray]:
    """C[i, :] = 真实标签为 i 的参照行的平均预测概率；返回 (C, 有样本的类别掩码)。"""
    k = reference.probs.k
    counts = reference.class_counts()
    sums = np.zeros((k, k))
    np.add.at(sums, reference.label_index, reference.probs.rows)
    present = counts > 0
    c = np.zeros((k, k))
    c[present] = sums[present] / counts[present, None]
    return c, present


def _bbse_props(rows: np.ndarray, reference: LabeledBatch) -> np.ndarray:
    # 解 Cᵀq ≈ μ，q ≥ 0，附加一行 Σq = 1；参照集中没有样本的类别取 0
    c, present = confusion_means(reference)
    mu = rows.mean(axis=0)
    m = int(present.sum())
    a = np.vstack([c[present].T, np.ones((1, m))])
    rhs = np.concatenate([mu, [1.0]])
    q_present, resid = optimize.nnls(a, rhs)
    total = q_present.sum()
    if total <= 0:
        logger.warning("bbse 估计退化（全零解），改用平均预测概率")
        return mu
    q = np.zeros(rows.shape[1])
    q[present] = q_present / total
    logger.debug(f"bbse 估计: {m} 个有样本类别, 残差 {resid:.3e}")
    return q


def _em_priors(rows: np.ndarray, train_priors: Optional[np.ndarray]) -> np.ndarray:
    k = rows.shape[1]
    base = np.full(k, 1.0 / k) if train_priors is None else np.asarray(train_priors, dtype=np.float64)
    ratio_base = np.where(base > 0, base, 1.0)
    q = base.copy()
    for it in range(_EM_MAX_ITER):
        w = np.where(base > 0, q / ratio_base, 0.0)
        post = rows * w
        s = post.sum(axis=1, keepdims=True)
        post = np.divide(post, s, out=np.zeros_like(post), where=s > 0)
        q_new = post.mean(axis=0)
        if np.abs(q_new - q).max() < _EM_TOL:
            logger.debug(f"EM 先验估计收敛: {it + 1} 轮")
            return q_new
        q = q_new
    logger.warning(f"EM 先验估计未在 {_EM_MAX_ITER} 轮内收敛")
    return q


# ── 重采样 ────────────────────────────────────────────────────────

def _validate_props(props: Sequence[float], k: int) -> np.ndarray:
    arr = np.asarray(props, dtype=np.float64)
    if arr.shape != (k,):
        raise DataError("InvalidProps", f"比例向量长度 {arr.shape} 与类别数 {k} 不一致")
    if not np.all(np.isfinite(arr)) or (arr < 0).any():
        raise DataError("InvalidProps", "比例向量含负值或非有限值")
    total = arr.sum()
    if abs(total - 1.0) > PROPS_SUM_TOL:
        raise DataError("InvalidProps", f"比例向量和为 {total:.8f}，应为 1")
    return arr / total


def _resample_indices(
    b: LabeledBatch,
    props: np.ndarray,
    size: int,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    props = _validate_props(props, b.probs.k)
    if size < 1:
        raise DataError("InvalidConfig", f"重采样大小必须 ≥ 1，当前 {size}")
    counts_have = b.class_counts()
    missing = [b.probs.class_names[j] for j in np.flatnonzero((props > 0) & (counts_have == 0))]
    if missing:
        raise DataError("MissingStratum", f"校准集缺少需要的类别: {missing[:5]}")

    counts = rng.multinomial(size, props)
    parts = []
    for j in np.flatnonzero(counts):
        stratum = np.flatnonzero(b.label_index == j)
        parts.append(rng.choice(stratum, size=int(counts[j]), replace=True))
    idx = rng.permutation(np.concatenate(parts))
    return idx, counts


def resample_calibration(
    b: LabeledBatch,
    props: Sequence[float],
    size: Optional[int] = None,
    seed: SeedLike = None,
) -> LabeledBatch:
    rng = np.random.default_rng(seed)
    idx, _ = _resample_indices(b, np.asarray(props, dtype=np.float64), size or b.n, rng)
    return b.take(idx)


def _drop_absent(props: np.ndarray, b: LabeledBatch) -> Tuple[np.ndarray, Tuple[str, ...]]:
    """估计比例在校准集没有样本的类别上置零并重新归一化。"""
    absent = (b.class_counts() == 0) & (props > 0)
    if not absent.any():
        return props, ()
    names = tuple(b.probs.class_names[j] for j in np.flatnonzero(absent))
    kept = np.where(absent, 0.0, props)
    if kept.sum() <= 0:
        raise DataError("MissingStratum", f"校准集不含任何估计比例为正的类别: {names[:5]}")
    logger.warning(f"校准集缺少类别 {list(names)}，其估计比例 {props[absent].sum():.4f} 已置零")
    return kept / kept.sum(), names


# ── 校准 / 预测分派 ───────────────────────────────────────────────

def calibrate_with(
    method: Method,
    g: Optional[LabelGraph],
    b: LabeledBatch,
    alpha: float,
    B: float = LOSS_BOUND_B,
) -> Calibration:
    if method is Method.SPLIT:
        return calibrate_split(b, alpha)
    if g is None:
        raise DataError("InvalidConfig", "graph 方法需要标签图")
    return calibrate_lambda(g, b, alpha, B)


def predict_with(cal: Calibration, g: Optional[LabelGraph], p: ProbMatrix) -> SetBatch:
    if isinstance(cal, SplitCalibration):
        return split_sets(cal, p)
    if g is None:
        raise DataError("InvalidConfig", "graph 方法需要标签图")
    return graph_sets(g, p, cal.lambda_hat)


# ── 校正 ──────────────────────────────────────────────────────────

def _seed_value(seed: SeedLike) -> Optional[int]:
    if isinstance(seed, np.random.SeedSequence):
        return int(seed.entropy) if isinstance(seed.entropy, int) else None
    return seed


def two_fold_correct(
    g: Optional[LabelGraph],
    calib: LabeledBatch,
    test_probs: ProbMatrix,
    alpha: float,
    method: Method,
    seed: SeedLike = None,
    estimator: Estimator = Estimator.BBSE,
    size: Optional[int] = None,
    B: float = LOSS_BOUND_B,
) -> CorrectionResult:
    n = test_probs.n
    if n < 2:
        raise DataError("EmptyFold", f"双折校正至少需要 2 个测试行，当前 {n}")
    if test_probs.class_names != calib.probs.class_names:
        raise DataError("GraphClassMismatch", "校准集与测试集的类别顺序不一致")
    size = size or calib.n
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    split_ss, *fold_ss = ss.spawn(3)

    order = np.random.default_rng(split_ss).permutation(n)
    fold = np.empty(n, dtype=np.int8)
    half = (n + 1) // 2
    fold[order[:half]] = 1
    fold[order[half:]] = 2

    train_priors = calib.class_counts() / calib.n
    props_list, counts_list, cals, parts = [], [], [], []
    dropped: Tuple[str, ...] = ()
    for f, f_ss in zip((1, 2), fold_ss):
        rows = np.flatnonzero(fold == f)
        other = np.flatnonzero(fold != f)
        props = estimate_class_proportions(
            test_probs.take(other), estimator, train_priors, reference=calib
        )
        props, absent = _drop_absent(props, calib)
        dropped = tuple(sorted(set(dropped) | set(absent)))
        idx, counts = _resample_indices(calib, props, size, np.random.default_rng(f_ss))
        cal = calibrate_with(method, g, calib.take(idx), alpha, B)
        parts.append((rows, predict_with(cal, g, test_probs.take(rows))))
        props_list.append(props)
        counts_list.append(counts)
        cals.append(cal)
        logger.debug(f"折 {f}: {len(rows)} 行, 估计比例来自另一折 {len(other)} 行")

    plan = ShiftCorrectionPlan(
        class_names=calib.probs.class_names,
        fold_assignment=fold,
        estimated_props_per_fold=tuple(props_list),
        resample_counts_per_fold=tuple(counts_list),
        resample_size=size,
        seed=_seed_value(seed),
        estimator=estimator,
        dropped_classes=dropped,
    )
    return CorrectionResult(stack_batches(parts, n), tuple(cals), plan)


def oracle_correct(
    g: Optional[LabelGraph],
    calib: LabeledBatch,
    test: LabeledBatch,
    alpha: float,
    method: Method,
    seed: SeedLike = None,
    size: Optional[int] = None,
    B: float = LOSS_BOUND_B,
) -> CorrectionResult:
    if test.n == 0:
        raise DataError("EmptyFold", "oracle 校正的测试集为空")
    size = size or calib.n
    props = test.class_counts() / test.n
    idx, counts = _resample_indices(calib, props, size, np.random.default_rng(seed))
    cal = calibrate_with(method, g, calib.take(idx), alpha, B)
    plan = ShiftCorrectionPlan(
        class_names=calib.probs.class_names,
        fold_assignment=np.ones(test.n, dtype=np.int8),
        estimated_props_per_fold=(props,),
        resample_counts_per_fold=(counts,),
        resample_size=size,
        seed=_seed_value(seed),
        estimator=None,
    )
    return CorrectionResult(predict_with(cal, g, test.probs), (cal,), plan)


def apply_correction(
    correction: Correction,
    g: Optional[LabelGraph],
    calib: LabeledBatch,
    test: Union[LabeledBatch, ProbMatrix],
    alpha: float,
    method: Method,
    seed: SeedLike = None,
    estimator: Estimator = Estimator.BBSE,
    B: float = LOSS_BOUND_B,
) -> CorrectionResult:
    """三种校正方式的统一入口；oracle 需要带标签的测试集。"""
    test_probs = test.probs if isinstance(test, LabeledBatch) else test
    if correction is Correction.NONE:
        cal = calibrate_with(method, g, calib, alpha, B)
        return CorrectionResult(predict_with(cal, g, test_probs), (cal,))
    if correction is Correction.TWO_FOLD:
        return two_fold_correct(g, calib, test_probs, alpha, method, seed, estimator, B=B)
    if not isinstance(test, LabeledBatch):
        raise DataError("InvalidConfig", "oracle 校正需要测试集真实标签")
    return oracle_correct(g, calib, test, alpha, method, seed, B=B)
