"""
hiconform - 图结构标签上的 conformal 预测工具 - 主入口

用法: python main.py <子命令> [参数]

模块结构：
- main.py: 主入口、命令行解析、错误到退出码的转换
- commands.py: 各子命令实现
- pipeline.py: HiconformPipeline（训练 / 校准 / 校正 / 预测 / 评估一条龙）
- config.py: 环境变量、日志、RunConfig
- data_io.py: 标签图 / 特征 / 概率 / 标签文件读写
- artifact_writer.py: JSON / JSONL 产物
- logic/: 核心算法（label_graph, scores, split_conformal, graph_crc, label_shift, classifier, synthgen, evaluation）
- workers/: 并行试验与统计汇总

退出码：0 成功，1 配置错误，2 数据错误，3 校准不可行，4 其他错误；错误详情以一行 JSON 写入 stderr。
"""

import argparse
import json
import logging
import sys
from typing import List, NoReturn, Optional

from logic.constants import (
    DEFAULT_K_FEATURES,
    DEFAULT_L2,
    DEFAULT_MAX_ITER,
    DEFAULT_SYNTH_N,
    DEFAULT_TOL,
    DEFAULT_TRIALS,
    LOSS_BOUND_B,
    Correction,
    Estimator,
    Method,
)
from logic.errors import ConfigError, HiconformError

PROG = "hiconform"


class _Parser(argparse.ArgumentParser):
    """参数错误按配置错误处理（退出码 1），而不是 argparse 默认的 2。"""

    def error(self, message: str) -> NoReturn:
        raise ConfigError("InvalidConfig", f"{self.prog}: {message}")


def _choices(enum_cls) -> List[str]:
    return [e.value for e in enum_cls]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=PROG, description="图结构标签上的 conformal 预测与风险控制")
    parser.add_argument("--threads", type=int, default=None, help="工作线程上限（默认 HICONFORM_THREADS）")
    parser.add_argument("--log-level", default=None, help="日志级别（默认 LOG_LEVEL）")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    # ── synth ──
    p = sub.add_parser("synth", help="生成合成数据（特征 CSV + 本体 TSV）")
    p.add_argument("--config", help="SynthConfig JSON")
    p.add_argument("--n", type=int, default=DEFAULT_SYNTH_N)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--props", help="类别比例 JSON {类别: 比例}")
    p.add_argument("--out", required=True, help="输出目录")
    p.set_defaults(func="cmd_synth")

    # ── train ──
    p = sub.add_parser("train", help="训练多项 logit")
    p.add_argument("--features", required=True)
    p.add_argument("--labels")
    p.add_argument("--graph")
    p.add_argument("--k-features", type=int, default=DEFAULT_K_FEATURES)
    p.add_argument("--l2", type=float, default=DEFAULT_L2)
    p.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--out", required=True, help="模型 JSON")
    p.set_defaults(func="cmd_train")

    # ── predict-probs ──
    p = sub.add_parser("predict-probs", help="用已保存的模型输出概率 CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--graph")
    p.add_argument("--out", required=True)
    p.set_defaults(func="cmd_predict_probs")

    # ── 校准 ──
    p = sub.add_parser("split-calibrate", help="split conformal 校准")
    p.add_argument("--probs", required=True)
    p.add_argument("--labels")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func="cmd_split_calibrate")

    p = sub.add_parser("crc-calibrate", help="图结构 CRC 校准 λ̂")
    p.add_argument("--graph", required=True)
    p.add_argument("--probs", required=True)
    p.add_argument("--labels")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--B", type=float, default=LOSS_BOUND_B)
    p.add_argument("--out", required=True)
    p.set_defaults(func="cmd_crc_calibrate")

    # ── 预测 ──
    p = sub.add_parser("split-predict", help="按 split 校准构造预测集合")
    p.add_argument("--calibration", required=True)
    p.add_argument("--probs", required=True)
    p.add_argument("--graph")
    p.add_argument("--out", required=True, help="JSONL")
    p.set_defaults(func="cmd_split_predict")

    p = sub.add_parser("crc-predict", help="按 λ̂ 构造图结构预测集合")
    p.add_argument("--graph", required=True)
    p.add_argument("--calibration", required=True)
    p.add_argument("--probs", required=True)
    p.add_argument("--out", required=True, help="JSONL")
    p.set_defaults(func="cmd_crc_predict")

    # ── correct ──
    p = sub.add_parser("correct", help="标签偏移校正（双折估计或 oracle）")
    p.add_argument("--graph")
    p.add_argument("--calib-probs", required=True)
    p.add_argument("--calib-labels")
    p.add_argument("--probs", required=True)
    p.add_argument("--method", choices=_choices(Method), default=Method.GRAPH.value)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--estimator", choices=_choices(Estimator), default=Estimator.BBSE.value)
    p.add_argument("--oracle-labels", help="测试集真实标签；给出时使用 oracle 校正")
    p.add_argument("--B", type=float, default=LOSS_BOUND_B)
    p.add_argument("--out", required=True, help="输出目录")
    p.set_defaults(func="cmd_correct")

    # ── evaluate ──
    p = sub.add_parser("evaluate", help="评估预测集合")
    p.add_argument("--graph", required=True)
    p.add_argument("--sets", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func="cmd_evaluate")

    # ── study ──
    p = sub.add_parser("study", help="覆盖率模拟研究")
    p.add_argument("--scenario", help="StudyScenario JSON（缺省为默认场景）")
    p.add_argument("--trials", type=int, default=DEFAULT_TRIALS)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--compare", help="第二个场景 JSON，同种子配对比较")
    p.add_argument("--emit-hist", help="输出 gnuplot 可读的覆盖率直方图")
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--out", required=True)
    p.set_defaults(func="cmd_study")

    # ── pipeline ──
    p = sub.add_parser("pipeline", help="训练 / 校准 / 校正 / 预测 / 评估")
    p.add_argument("--config", help="RunConfig JSON")
    p.add_argument("--graph")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--features")
    src.add_argument("--probs")
    p.add_argument("--labels")
    p.add_argument("--alpha", type=float)
    p.add_argument("--method", choices=_choices(Method))
    p.add_argument("--correction", choices=_choices(Correction))
    p.add_argument("--estimator", choices=_choices(Estimator))
    p.add_argument("--seed", type=int)
    p.add_argument("--k-features", type=int)
    p.add_argument("--l2", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--train-n", type=int)
    p.add_argument("--calib-n", type=int)
    p.add_argument("--out-dir")
    p.set_defaults(func="cmd_run_pipeline")

    return parser


def _fail(err: HiconformError) -> int:
    sys.stderr.write(json.dumps(err.to_dict(), ensure_ascii=False) + "\n")
    return err.exit_code


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        # config 在导入时校验环境变量
        import commands
        from config import DEFAULT_SETTINGS, setup_logging

        setup_logging(args.log_level)
        if args.threads is None:
            args.threads = DEFAULT_SETTINGS["threads"]
        if args.threads < 1:
            raise ConfigError("InvalidConfig", f"--threads 必须 ≥ 1，当前 {args.threads}")

        logging.info(f"{PROG} {args.command} 启动")
        return getattr(commands, args.func)(args)
    except HiconformError as e:
        logging.error(f"[{e.code}] {e.message}")
        return _fail(e)
    except Exception as e:
        logging.error(f"未预期的错误: {e}", exc_info=True)
        sys.stderr.write(json.dumps(
            {"error": "InternalError", "message": str(e), "exit_code": 4}, ensure_ascii=False,
        ) + "\n")
        return 4


if __name__ == "__main__":
    sys.exit(main())
