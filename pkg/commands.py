"""
子命令实现

每个 cmd_* 接收 argparse 的 Namespace，返回退出码 0；错误以 HiconformError 抛出，由 main 统一转换。
输出的 JSON 均带 tool_version 与 config_hash（子命令参数的规范化哈希）。
"""

import json
import logging
import os
from argparse import Namespace
from dataclasses import replace
from typing import List, Optional, Sequence

import artifact_writer
import data_io
from config import load_run_config, seed_override
from logic.classifier import LogitModel, fit_logit, predict_probs
from logic.constants import Correction, Estimator, Method, PredictionSet, SetBatch
from logic.errors import ConfigError, DataError
from logic.evaluation import StudyScenario, compare_studies, evaluate, run_study
from logic.graph_crc import LambdaCalibration, calibrate_lambda, graph_sets
from logic.label_graph import LabelGraph
from logic.label_shift import apply_correction
from logic.scores import LabeledBatch
from logic.split_conformal import SplitCalibration, calibrate_split, split_sets
from logic.synthgen import SynthConfig, generate, shift_props
from pipeline import cmd_pipeline
from utils import config_hash
from workers import log_comparison, log_study_summary, make_trial_map

logger = logging.getLogger(__name__)

# 不影响结果的参数，不参与哈希
_UNHASHED = frozenset({"command", "func", "threads", "log_level", "out", "out_dir", "emit_hist"})


def args_hash(args: Namespace) -> str:
    return config_hash({k: v for k, v in vars(args).items() if k not in _UNHASHED and not callable(v)})


def _seed(value: Optional[int]) -> Optional[int]:
    env = seed_override()
    return env if env is not None else value


def _read_json(path: str) -> dict:
    if not os.path.isfile(path):
        raise ConfigError("InvalidConfig", f"文件不存在: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as e:
        raise DataError("InvalidShape", f"{path} 不是合法 JSON: {e}") from e
    if not isinstance(data, dict):
        raise DataError("InvalidShape", f"{path} 顶层必须是对象")
    return data


def _labeled(probs_path: str, labels_path: Optional[str]) -> LabeledBatch:
    ids, probs, inline = data_io.read_probs(probs_path)
    if labels_path is not None:
        labels = data_io.read_labels(labels_path, ids)
    elif inline is not None:
        labels = inline
    else:
        raise DataError("LengthMismatch", f"{probs_path} 没有 label 列，需要 --labels")
    return LabeledBatch(probs, tuple(labels))


def _maybe_graph(path: Optional[str]) -> Optional[LabelGraph]:
    return data_io.read_graph(path) if path else None


def _write_sets(path: str, ids: Sequence[str], batch: SetBatch, g: Optional[LabelGraph], h: str) -> None:
    records = artifact_writer.set_records(ids, batch.to_prediction_sets(g))
    artifact_writer.write_jsonl(path, records, h)


def _load_calibration(path: str):
    data = _read_json(path)
    if "calibrations" in data:
        cals = data["calibrations"]
        if len(cals) != 1:
            raise DataError("InvalidConfig", f"{path} 含 {len(cals)} 个校准（校正结果按折），请使用单一校准文件")
        data = cals[0]
    method = data.get("method")
    if method == Method.SPLIT.value:
        return SplitCalibration.from_dict(data)
    if method == Method.GRAPH.value:
        return LambdaCalibration.from_dict(data)
    raise DataError("InvalidConfig", f"未知校准方法: {method!r}")


# ============================================================================
# 数据 / 模型
# ============================================================================

def cmd_synth(args: Namespace) -> int:
    cfg = SynthConfig.from_dict(_read_json(args.config)) if args.config else SynthConfig()
    seed = _seed(args.seed)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if args.props:
        cfg = shift_props(cfg, _read_json(args.props))
    h = args_hash(args)
    x, labels = generate(cfg, args.n)
    # --out 可以是目录，也可以是特征 CSV 路径（本体与配置写在同一目录）
    if args.out.endswith(".csv"):
        out_dir, features_path = os.path.dirname(args.out) or ".", args.out
    else:
        out_dir, features_path = args.out, os.path.join(args.out, "features.csv")
    os.makedirs(out_dir, exist_ok=True)
    data_io.write_features(features_path, x, labels)
    data_io.write_edges(os.path.join(out_dir, "ontology.tsv"), cfg.edges)
    artifact_writer.write_json(os.path.join(out_dir, "synth.json"), cfg.to_dict(), h, "synth")
    logger.info(f"合成数据已写出: n={x.n}, K={len(cfg.class_names)}, 特征 {features_path}")
    return 0


def cmd_train(args: Namespace) -> int:
    x, inline = data_io.read_features(args.features)
    labels = data_io.read_labels(args.labels, list(x.ids)) if args.labels else inline
    if labels is None:
        raise DataError("LengthMismatch", f"{args.features} 没有 label 列，需要 --labels")
    g = _maybe_graph(args.graph)
    if g is not None:
        unknown = sorted(set(labels) - set(g.leaves))
        if unknown:
            raise DataError("GraphClassMismatch", f"训练标签不是图的叶节点: {unknown[:5]}")
    model = fit_logit(x, labels, l2=args.l2, max_iter=args.max_iter, tol=args.tol, k_features=args.k_features)
    h = args_hash(args)
    artifact_writer.write_json(args.out, model.to_dict(), h, "model")
    return 0


def cmd_predict_probs(args: Namespace) -> int:
    """用已保存的模型输出概率 CSV；给出 --graph 时列扩展到全部叶节点。"""
    model = LogitModel.from_dict(_read_json(args.model))
    x, truth = data_io.read_features(args.features)
    probs = predict_probs(model, x)
    if args.graph:
        probs = probs.with_classes(data_io.read_graph(args.graph).leaves)
    data_io.write_probs(args.out, x.ids, probs, truth)
    return 0


# ============================================================================
# 校准 / 预测
# ============================================================================

def cmd_split_calibrate(args: Namespace) -> int:
    cal = calibrate_split(_labeled(args.probs, args.labels), args.alpha)
    artifact_writer.write_json(args.out, cal.to_dict(include_scores=True), args_hash(args), "calibration")
    return 0


def cmd_crc_calibrate(args: Namespace) -> int:
    g = data_io.read_graph(args.graph)
    cal = calibrate_lambda(g, _labeled(args.probs, args.labels), args.alpha, args.B)
    artifact_writer.write_json(args.out, cal.to_dict(), args_hash(args), "calibration")
    return 0


def cmd_split_predict(args: Namespace) -> int:
    cal = _load_calibration(args.calibration)
    if not isinstance(cal, SplitCalibration):
        raise DataError("InvalidConfig", f"{args.calibration} 不是 split 校准文件")
    ids, probs, _ = data_io.read_probs(args.probs)
    g = _maybe_graph(args.graph)
    _write_sets(args.out, ids, split_sets(cal, probs), g, args_hash(args))
    return 0


def cmd_crc_predict(args: Namespace) -> int:
    cal = _load_calibration(args.calibration)
    if not isinstance(cal, LambdaCalibration):
        raise DataError("InvalidConfig", f"{args.calibration} 不是 graph 校准文件")
    g = data_io.read_graph(args.graph)
    ids, probs, _ = data_io.read_probs(args.probs)
    _write_sets(args.out, ids, graph_sets(g, probs, cal.lambda_hat), g, args_hash(args))
    return 0


def cmd_correct(args: Namespace) -> int:
    method = Method(args.method)
    g = _maybe_graph(args.graph)
    if method is Method.GRAPH and g is None:
        raise ConfigError("InvalidConfig", "graph 方法需要 --graph")
    calib = _labeled(args.calib_probs, args.calib_labels)
    ids, probs, _ = data_io.read_probs(args.probs)
    if args.oracle_labels:
        test = LabeledBatch(probs, tuple(data_io.read_labels(args.oracle_labels, ids)))
        correction = Correction.ORACLE
    else:
        test = probs
        correction = Correction.TWO_FOLD
    result = apply_correction(
        correction, g, calib, test, args.alpha, method,
        seed=_seed(args.seed), estimator=Estimator(args.estimator), B=args.B,
    )
    h = args_hash(args)
    os.makedirs(args.out, exist_ok=True)
    _write_sets(os.path.join(args.out, "sets.jsonl"), ids, result.sets, g, h)
    artifact_writer.write_json(
        os.path.join(args.out, "correction.json"),
        {
            "method": method.value,
            "correction": correction.value,
            "calibrations": [c.to_dict() for c in result.calibrations],
            "audit": result.plan.to_audit() if result.plan is not None else None,
        },
        h,
        "correction",
    )
    return 0


def cmd_evaluate(args: Namespace) -> int:
    g = data_io.read_graph(args.graph)
    records = data_io.read_sets(args.sets)
    ids = [str(r.get("id", i)) for i, r in enumerate(records)]
    truth = data_io.read_labels(args.labels, ids)
    sets: List[PredictionSet] = []
    for r in records:
        leaves = frozenset(str(v) for v in r["leaves"])
        sets.append(PredictionSet(leaves=leaves, size=len(leaves)))
    report = evaluate(sets, truth, g)
    artifact_writer.write_json(args.out, {"report": report.to_dict()}, args_hash(args), "report")
    logger.info(f"评估: n={report.n}, 覆盖率={report.coverage:.4f}, 平均大小={report.mean_size:.3f}")
    return 0


# ============================================================================
# 研究 / 流水线
# ============================================================================

def cmd_study(args: Namespace) -> int:
    scenario = StudyScenario.from_dict(_read_json(args.scenario)) if args.scenario else StudyScenario()
    seed = _seed(args.seed)
    trial_map = make_trial_map(args.threads)
    h = args_hash(args)

    study = run_study(scenario, args.trials, seed, trial_map=trial_map)
    log_study_summary(study, echo=True)
    payload = {"study": study.to_dict()}

    if args.compare:
        other = run_study(StudyScenario.from_dict(_read_json(args.compare)), args.trials, seed, trial_map=trial_map)
        log_study_summary(other, label="compare", echo=True)
        summary = compare_studies(study, other)
        log_comparison(summary, "scenario", "compare", echo=True)
        payload["compare"] = other.to_dict()
        payload["comparison"] = summary

    artifact_writer.write_json(args.out, payload, h, "study")
    if args.emit_hist:
        artifact_writer.write_histogram(args.emit_hist, study.histogram(args.bins))
    return 0


def cmd_run_pipeline(args: Namespace) -> int:
    overrides = {
        "graph": args.graph,
        "features": args.features,
        "probs": args.probs,
        "labels": args.labels,
        "alpha": args.alpha,
        "method": args.method,
        "correction": args.correction,
        "estimator": args.estimator,
        "seed": args.seed,
        "k_features": args.k_features,
        "l2": args.l2,
        "max_iter": args.max_iter,
        "train_n": args.train_n,
        "calib_n": args.calib_n,
        "out_dir": args.out_dir,
    }
    cfg = load_run_config(args.config, overrides)
    result = cmd_pipeline(cfg)
    if result.report is not None:
        print(json.dumps({"coverage": result.report.coverage, "artifacts": result.artifacts}, ensure_ascii=False))
    return 0
