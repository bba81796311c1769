"""
统计汇总工作者模块
"""

import logging
from typing import List, Optional

from logic.evaluation import CoverageStudy


def study_summary_lines(study: CoverageStudy, label: Optional[str] = None) -> List[str]:
    sc = study.scenario
    title = label or f"{sc.method.value}/{sc.correction.value}"
    target = 1.0 - study.alpha
    lines = [
        f"覆盖率研究 [{title}]: R={study.trials}, n={study.n}, α={study.alpha}, seed={study.seed}",
        f"平均覆盖率: {study.mean_coverage:.4f} (s.e. {study.coverage_se:.4f}), 目标 {target:.4f}, "
        f"偏差 {study.mean_coverage - target:+.4f}",
        f"平均集合大小: {study.mean_size:.3f}, 平均同质性: {study.mean_homogeneity:.3f}",
    ]
    if study.beta_params is not None:
        a, b = study.beta_params
        lines.append(
            f"参考分布 Beta({a}, {b}) 均值 {a / (a + b):.4f}, KS 距离 {study.ks_statistic_vs_beta:.4f}"
        )
    else:
        lines.append("graph 方法没有参考分布，不计算 KS 距离")
    return lines


def log_study_summary(study: CoverageStudy, label: Optional[str] = None, echo: bool = False) -> None:
    """
    打印研究汇总

    - 日志：INFO
    - echo=True 时同时输出到控制台（study 子命令使用）
    """
    sep = "=" * 60
    for line in (sep, *study_summary_lines(study, label), sep):
        logging.info(line)
        if echo:
            print(line)


def log_comparison(summary: dict, label_a: str, label_b: str, echo: bool = False) -> None:
    sep = "=" * 60
    lines = [
        sep,
        f"研究对比: A={label_a}, B={label_b}",
        f"平均覆盖率 A={summary['mean_coverage_a']:.4f}, B={summary['mean_coverage_b']:.4f}, "
        f"差 {summary['coverage_diff']:+.4f}",
        f"平均大小差 {summary['mean_size_diff']:+.3f}, 平均同质性差 {summary['mean_homogeneity_diff']:+.3f}",
    ]
    if "paired_trials" in summary:
        lines.append(
            f"配对 {summary['paired_trials']} 次: A 更接近目标的比例 {summary['frac_a_closer_to_target']:.2f}, "
            f"A 同质性 ≤ B 的比例 {summary['frac_a_homogeneity_le_b']:.2f}"
        )
    lines.append(sep)
    for line in lines:
        logging.info(line)
        if echo:
            print(line)
