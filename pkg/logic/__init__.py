"""
图结构标签上的 conformal 预测核心模块

模块结构：
- constants: 枚举（Method, Correction, Estimator）、数值容差、默认参数、PredictionSet / SetBatch
- errors: 异常体系（ConfigError / DataError / CalibrationError）
- label_graph: 标签 DAG（祖先、后代、叶集合、无向最短路、公共祖先归纳）
- scores: 概率矩阵、一致性分数、点预测、节点分数 g(v, x)
- split_conformal: 标准 split conformal 校准与预测
- graph_crc: 图结构 conformal risk control（λ̂ 校准 + 祖先遍历集合构造）
- label_shift: 标签偏移的双折重采样校正与 oracle 校正
- classifier: 多项 logit + 方差特征选择
- synthgen: 合成数据生成器
- evaluation: 指标、Beta 参考分布、覆盖率模拟研究
"""

__version__ = "0.3.0"

from .constants import (
    Correction,
    Estimator,
    Method,
    PredictionSet,
    SetBatch,
)
from .errors import CalibrationError, ConfigError, DataError, HiconformError
from .label_graph import LabelGraph, build_graph
from .scores import LabeledBatch, ProbMatrix

__all__ = [
    "__version__",
    "Correction",
    "Estimator",
    "Method",
    "PredictionSet",
    "SetBatch",
    "HiconformError",
    "ConfigError",
    "DataError",
    "CalibrationError",
    "LabelGraph",
    "build_graph",
    "LabeledBatch",
    "ProbMatrix",
]
