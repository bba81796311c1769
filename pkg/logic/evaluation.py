"""
评估指标与覆盖率模拟

* evaluate: 经验覆盖率 / 平均集合大小 / 平均同质性（集合内两两最短路均值）
* beta_reference: split conformal 单次试验覆盖率的理论分布 Beta(n+1−l, l)，l = ⌊(n+1)α⌋
* run_study: 训练一次模型，R 次独立抽取校准 / 测试集，记录每次试验的覆盖率、
  大小与同质性；split 方法额外给出与 Beta 参考分布的 KS 距离
"""
from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special, stats

from logic.classifier import LogitModel, fit_logit, predict_probs
from logic.constants import (
    DEFAULT_ALPHA,
    DEFAULT_CALIB_N,
    DEFAULT_K_FEATURES,
    DEFAULT_L2,
    DEFAULT_MAX_ITER,
    DEFAULT_SYNTH_N,
    DEFAULT_TOL,
    DEFAULT_TRAIN_N,
    INDEX_ROUND_DIGITS,
    LOSS_BOUND_B,
    Correction,
    Estimator,
    Method,
    PredictionSet,
    SetBatch,
)
from logic.errors import CalibrationError, DataError
from logic.label_graph import LabelGraph
from logic.label_shift import apply_correction
from logic.scores import LabeledBatch
from logic.split_conformal import check_alpha
from logic.synthgen import SynthConfig, generate, shift_props

logger = logging.getLogger(__name__)


# ── 指标 ──────────────────────────────────────────────────────────

@dataclass(frozen=True)
class EvalReport:
    n: int
    coverage: float
    mean_size: float
    mean_homogeneity: float
    size_histogram: Dict[int, int]
    per_class_coverage: Dict[str, float]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "coverage": self.coverage,
            "mean_size": self.mean_size,
            "mean_homogeneity": self.mean_homogeneity,
            "size_histogram": {str(k): v for k, v in sorted(self.size_histogram.items())},
            "per_class_coverage": dict(sorted(self.per_class_coverage.items())),
        }


def _report(covered: np.ndarray, sizes: np.ndarray, homog: np.ndarray, truth: Sequence[str]) -> EvalReport:
    n = len(truth)
    if n == 0:
        raise DataError("EmptyInput", "评估集为空")
    per_class: Dict[str, List[bool]] = {}
    for y, c in zip(truth, covered):
        per_class.setdefault(y, []).append(bool(c))
    return EvalReport(
        n=n,
        coverage=float(np.mean(covered)),
        mean_size=float(np.mean(sizes)),
        mean_homogeneity=float(np.mean(homog)),
        size_histogram={int(k): int(v) for k, v in Counter(int(s) for s in sizes).items()},
        per_class_coverage={y: float(np.mean(v)) for y, v in per_class.items()},
    )


def evaluate(sets: Sequence[PredictionSet], truth: Sequence[str], g: LabelGraph) -> EvalReport:
    if len(sets) != len(truth):
        raise DataError("LengthMismatch", f"集合数 {len(sets)} 与标签数 {len(truth)} 不一致")
    covered = np.array([s.contains(y) for s, y in zip(sets, truth)], dtype=bool)
    sizes = np.array([len(s.leaves) for s in sets], dtype=np.int64)
    homog = np.array([
        s.homogeneity if s.homogeneity is not None else g.set_homogeneity(s.leaves)
        for s in sets
    ], dtype=np.float64)
    return _report(covered, sizes, homog, list(truth))


def evaluate_batch(batch: SetBatch, truth: Sequence[str], g: Optional[LabelGraph] = None) -> EvalReport:
    """没有标签图时同质性记为 NaN。"""
    if len(batch) != len(truth):
        raise DataError("LengthMismatch", f"集合数 {len(batch)} 与标签数 {len(truth)} 不一致")
    homog = batch.homogeneity(g) if g is not None else np.full(len(batch), np.nan)
    return _report(batch.covers(truth), batch.sizes(), homog, list(truth))


# ── Beta 参考分布 ─────────────────────────────────────────────────

def beta_reference(n: int, alpha: float) -> Tuple[int, int]:
    alpha = check_alpha(alpha)
    if n < 1:
        raise CalibrationError("DegenerateL", f"校准集大小必须 ≥ 1，当前 {n}")
    l = int(math.floor(round((n + 1) * alpha, INDEX_ROUND_DIGITS)))
    if l < 1:
        raise CalibrationError("DegenerateL", f"l = ⌊(n+1)α⌋ = 0 (n={n}, α={alpha})")
    return n + 1 - l, l


def beta_cdf(x: Union[float, np.ndarray], a: float, b: float) -> Union[float, np.ndarray]:
    """正则化不完全 Beta 函数 I_x(a, b)。"""
    out = special.betainc(a, b, np.clip(x, 0.0, 1.0))
    return float(out) if np.ndim(out) == 0 else out


def ks_statistic(samples: Sequence[float], a: float, b: float) -> float:
    result = stats.kstest(np.asarray(samples, dtype=np.float64), lambda x: beta_cdf(x, a, b))
    return float(result.statistic)


# ── 模拟研究 ──────────────────────────────────────────────────────

PropsLike = Union[Sequence[float], Mapping[str, float], None]


@dataclass(frozen=True)
class StudyScenario:
    synth: SynthConfig = field(default_factory=SynthConfig)
    train_n: int = DEFAULT_TRAIN_N
    calib_n: int = DEFAULT_CALIB_N
    test_n: int = DEFAULT_SYNTH_N - DEFAULT_TRAIN_N - DEFAULT_CALIB_N
    alpha: float = DEFAULT_ALPHA
    method: Method = Method.SPLIT
    correction: Correction = Correction.NONE
    estimator: Estimator = Estimator.BBSE
    calib_props: PropsLike = None
    test_props: PropsLike = None
    k_features: int = DEFAULT_K_FEATURES
    l2: float = DEFAULT_L2
    B: float = LOSS_BOUND_B
    max_iter: int = DEFAULT_MAX_ITER
    tol: float = DEFAULT_TOL

    def __post_init__(self) -> None:
        check_alpha(self.alpha)
        for name in ("train_n", "calib_n", "test_n"):
            if getattr(self, name) < 1:
                raise DataError("InvalidConfig", f"{name} 必须 ≥ 1")

    def calib_config(self) -> SynthConfig:
        return self.synth if self.calib_props is None else shift_props(self.synth, self.calib_props)

    def test_config(self) -> SynthConfig:
        return self.synth if self.test_props is None else shift_props(self.synth, self.test_props)

    def to_dict(self) -> dict:
        return {
            "synth": self.synth.to_dict(),
            "train_n": self.train_n,
            "calib_n": self.calib_n,
            "test_n": self.test_n,
            "alpha": self.alpha,
            "method": self.method.value,
            "correction": self.correction.value,
            "estimator": self.estimator.value,
            "calib_props": self.calib_config().props_dict(),
            "test_props": self.test_config().props_dict(),
            "k_features": self.k_features,
            "l2": self.l2,
            "B": self.B,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "StudyScenario":
        try:
            synth = SynthConfig.from_dict(data.get("synth", {}))
            kwargs = {
                key: cast(data[key])
                for key, cast in (
                    ("train_n", int), ("calib_n", int), ("test_n", int), ("alpha", float),
                    ("k_features", int), ("l2", float), ("B", float),
                    ("max_iter", int), ("tol", float),
                    ("method", Method), ("correction", Correction), ("estimator", Estimator),
                )
                if key in data
            }
        except (ValueError, TypeError, KeyError) as e:
            raise DataError("InvalidConfig", f"研究场景格式错误: {e}") from e
        return cls(
            synth=synth,
            calib_props=data.get("calib_props"),
            test_props=data.get("test_props"),
            **kwargs,
        )


@dataclass(frozen=True)
class TrialResult:
    coverage: float
    mean_size: float
    mean_homogeneity: float


@dataclass(frozen=True)
class StudyContext:
    """一次研究中各试验共享的只读状态。"""
    scenario: StudyScenario
    model: LogitModel
    calib_cfg: SynthConfig
    test_cfg: SynthConfig

    @property
    def graph(self) -> LabelGraph:
        return self.scenario.synth.graph


@dataclass(frozen=True)
class CoverageStudy:
    scenario: StudyScenario
    seed: Optional[int]
    n: int
    alpha: float
    per_trial_coverage: np.ndarray = field(repr=False)
    per_trial_size: np.ndarray = field(repr=False)
    per_trial_homogeneity: np.ndarray = field(repr=False)
    beta_params: Optional[Tuple[int, int]] = None
    ks_statistic_vs_beta: Optional[float] = None

    @property
    def trials(self) -> int:
        return len(self.per_trial_coverage)

    @property
    def mean_coverage(self) -> float:
        return float(np.mean(self.per_trial_coverage))

    @property
    def coverage_se(self) -> float:
        if self.trials < 2:
            return 0.0
        return float(np.std(self.per_trial_coverage, ddof=1) / math.sqrt(self.trials))

    @property
    def mean_size(self) -> float:
        return float(np.mean(self.per_trial_size))

    @property
    def mean_homogeneity(self) -> float:
        return float(np.mean(self.per_trial_homogeneity))

    def histogram(self, bins: int = 20) -> List[Tuple[float, float, int]]:
        counts, edges = np.histogram(self.per_trial_coverage, bins=bins)
        return [(float(edges[i]), float(edges[i + 1]), int(c)) for i, c in enumerate(counts)]

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "seed": self.seed,
            "trials": self.trials,
            "n": self.n,
            "alpha": self.alpha,
            "mean_coverage": self.mean_coverage,
            "coverage_se": self.coverage_se,
            "mean_size": self.mean_size,
            "mean_homogeneity": self.mean_homogeneity,
            "beta_params": list(self.beta_params) if self.beta_params else None,
            "ks_statistic_vs_beta": self.ks_statistic_vs_beta,
            "per_trial_coverage": [float(v) for v in self.per_trial_coverage],
            "per_trial_size": [float(v) for v in self.per_trial_size],
            "per_trial_homogeneity": [float(v) for v in self.per_trial_homogeneity],
        }


def prepare_study(scenario: StudyScenario, model_ss: np.random.SeedSequence) -> StudyContext:
    """
    训练集按校准集的类别分布抽取，整个研究共用一个模型。
    训练集中没有出现的类别不参与拟合，预测时概率补 0。
    """
    calib_cfg = scenario.calib_config()
    x, y = generate(calib_cfg, scenario.train_n, np.random.default_rng(model_ss), id_prefix="train")
    k = min(scenario.k_features, x.p)
    model = fit_logit(
        x, y,
        l2=scenario.l2,
        max_iter=scenario.max_iter,
        tol=scenario.tol,
        k_features=k,
    )
    return StudyContext(scenario, model, calib_cfg, scenario.test_config())


def run_trial(ctx: StudyContext, trial_ss: np.random.SeedSequence) -> TrialResult:
    sc = ctx.scenario
    calib_ss, test_ss, corr_ss = trial_ss.spawn(3)
    xc, yc = generate(ctx.calib_cfg, sc.calib_n, np.random.default_rng(calib_ss), id_prefix="calib")
    xt, yt = generate(ctx.test_cfg, sc.test_n, np.random.default_rng(test_ss), id_prefix="test")
    names = ctx.calib_cfg.class_names
    calib = LabeledBatch(predict_probs(ctx.model, xc).with_classes(names), yc)
    test = LabeledBatch(predict_probs(ctx.model, xt).with_classes(names), yt)
    result = apply_correction(
        sc.correction, ctx.graph, calib, test, sc.alpha, sc.method,
        seed=corr_ss, estimator=sc.estimator, B=sc.B,
    )
    batch = result.sets
    return TrialResult(
        coverage=float(batch.covers(yt).mean()),
        mean_size=float(batch.sizes().mean()),
        mean_homogeneity=float(batch.homogeneity(ctx.graph).mean()),
    )


TrialMap = Callable[[Callable[[np.random.SeedSequence], TrialResult], Sequence[np.random.SeedSequence]], Iterable[TrialResult]]


def run_study(
    scenario: StudyScenario,
    R: int,
    seed: Optional[int],
    trial_map: Optional[TrialMap] = None,
) -> CoverageStudy:
    """
    trial_map(fn, seeds) 负责执行各次试验并按 seeds 顺序返回结果，缺省为顺序执行。
    每次试验的随机流由主种子派生，与执行顺序无关。
    """
    if R < 1:
        raise DataError("InvalidConfig", f"试验次数必须 ≥ 1，当前 {R}")
    model_ss, trials_ss = np.random.SeedSequence(seed).spawn(2)
    ctx = prepare_study(scenario, model_ss)
    seeds = trials_ss.spawn(R)

    def one(ss: np.random.SeedSequence) -> TrialResult:
        return run_trial(ctx, ss)

    mapper = trial_map or (lambda fn, items: [fn(s) for s in items])
    results = list(mapper(one, seeds))

    cov = np.array([r.coverage for r in results])
    size = np.array([r.mean_size for r in results])
    homog = np.array([r.mean_homogeneity for r in results])

    beta_params: Optional[Tuple[int, int]] = None
    ks: Optional[float] = None
    if scenario.method is Method.SPLIT:
        beta_params = beta_reference(scenario.calib_n, scenario.alpha)
        ks = ks_statistic(cov, *beta_params)

    study = CoverageStudy(
        scenario=scenario,
        seed=seed,
        n=scenario.calib_n,
        alpha=scenario.alpha,
        per_trial_coverage=cov,
        per_trial_size=size,
        per_trial_homogeneity=homog,
        beta_params=beta_params,
        ks_statistic_vs_beta=ks,
    )
    ks_text = f"{ks:.4f}" if ks is not None else "n/a"
    logger.info(
        f"研究完成: method={scenario.method.value}, correction={scenario.correction.value}, "
        f"R={R}, 平均覆盖率={study.mean_coverage:.4f} (s.e. {study.coverage_se:.4f}), "
        f"平均大小={study.mean_size:.3f}, 平均同质性={study.mean_homogeneity:.3f}, KS={ks_text}"
    )
    return study


def compare_studies(a: CoverageStudy, b: CoverageStudy) -> dict:
    """
    两个研究的差异汇总；试验数相同时还给出逐次配对比较
    （相同主种子下两研究的各次试验抽到的数据相同）。
    """
    target = 1.0 - a.alpha
    out = {
        "mean_coverage_a": a.mean_coverage,
        "mean_coverage_b": b.mean_coverage,
        "coverage_diff": a.mean_coverage - b.mean_coverage,
        "mean_size_diff": a.mean_size - b.mean_size,
        "mean_homogeneity_diff": a.mean_homogeneity - b.mean_homogeneity,
        "ks_a": a.ks_statistic_vs_beta,
        "ks_b": b.ks_statistic_vs_beta,
    }
    if a.trials == b.trials:
        gap_a = np.abs(a.per_trial_coverage - target)
        gap_b = np.abs(b.per_trial_coverage - target)
        out["paired_trials"] = a.trials
        out["frac_a_closer_to_target"] = float(np.mean(gap_a < gap_b))
        out["frac_a_homogeneity_le_b"] = float(np.mean(a.per_trial_homogeneity <= b.per_trial_homogeneity))
    return out
