"""
工作者模块

包含试验并行执行与研究统计汇总
"""

from .trial_worker import make_trial_map, run_trials, trial_worker
from .stats_worker import log_comparison, log_study_summary, study_summary_lines

__all__ = [
    "make_trial_map",
    "run_trials",
    "trial_worker",
    "log_study_summary",
    "log_comparison",
    "study_summary_lines",
]
