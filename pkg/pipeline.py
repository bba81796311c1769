"""
hiconform 流水线主控

一次 pipeline 运行：
    1. 读取标签图与特征（或直接读取概率）
    2. 按种子随机划分 训练(500) / 校准(1000) / 测试(其余)；给出概率时不训练，只划分校准 / 测试
    3. 训练多项 logit 并输出概率
    4. 校准（split 或 graph CRC），可选标签偏移校正
    5. 逐行构造预测集合并评估
    6. 写出 model.json / calibration.json / sets.jsonl / report.json

随机流：SeedSequence(seed) 派生两条，分别用于划分与校正；同配置同种子的运行逐字节可复现。
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

import artifact_writer
import data_io
from config import RunConfig
from logic.classifier import FeatureMatrix, LogitModel, fit_logit, predict_probs
from logic.constants import Correction, SetBatch
from logic.errors import DataError
from logic.evaluation import EvalReport, evaluate_batch
from logic.label_graph import LabelGraph
from logic.label_shift import CorrectionResult, apply_correction
from logic.scores import LabeledBatch, ProbMatrix

logger = logging.getLogger(__name__)


def class_universe(labels: Sequence[str], graph: Optional[LabelGraph]) -> Tuple[str, ...]:
    """模型输出对齐到的类别列表：图的全部叶节点（有图时）并上数据中出现的标签。"""
    names = set(labels)
    if graph is not None:
        names |= set(graph.leaves)
    return tuple(sorted(names))


def split_rows(n: int, sizes: Sequence[int], rng: np.random.Generator) -> List[np.ndarray]:
    """随机排列后依次切出各段，最后一段取剩余全部行。"""
    total = int(sum(sizes))
    if total >= n:
        raise DataError("InvalidConfig", f"划分大小之和 {total} 不小于样本数 {n}，测试集为空")
    order = rng.permutation(n)
    out, start = [], 0
    for s in sizes:
        out.append(np.sort(order[start:start + s]))
        start += s
    out.append(np.sort(order[start:]))
    return out


@dataclass
class PipelineResult:
    artifacts: Dict[str, str] = field(default_factory=dict)
    report: Optional[EvalReport] = None
    correction: Optional[CorrectionResult] = None
    model: Optional[LogitModel] = None


@dataclass
class HiconformPipeline:
    """
    有状态的流水线。run() 依次执行各阶段，中间结果保存在实例上，便于测试逐段检查。
    """
    cfg: RunConfig

    graph: Optional[LabelGraph] = None
    model: Optional[LogitModel] = None
    calib: Optional[LabeledBatch] = None
    test_probs: Optional[ProbMatrix] = None
    test_ids: Tuple[str, ...] = ()
    test_labels: Optional[Tuple[str, ...]] = None

    _hash: str = ""

    # ── 主入口 ─────────────────────────────────────────────────────

    def run(self) -> PipelineResult:
        cfg = self.cfg
        self._hash = cfg.config_hash()
        logger.info("=" * 60)
        logger.info(
            f"pipeline 启动: method={cfg.method.value}, correction={cfg.correction.value}, "
            f"α={cfg.alpha}, seed={cfg.seed}, config_hash={self._hash[:12]}"
        )
        split_ss, corr_ss = np.random.SeedSequence(cfg.seed).spawn(2)

        if cfg.graph is not None:
            self.graph = data_io.read_graph(cfg.graph)

        result = PipelineResult()
        if cfg.features is not None:
            self._prepare_from_features(np.random.default_rng(split_ss))
            result.model = self.model
        else:
            self._prepare_from_probs(np.random.default_rng(split_ss))

        # 1. 校准 + 校正
        test_input = self._test_batch() if cfg.correction is Correction.ORACLE else self.test_probs
        correction = apply_correction(
            cfg.correction, self.graph, self.calib, test_input, cfg.alpha, cfg.method,
            seed=corr_ss, estimator=cfg.estimator,
        )
        result.correction = correction

        # 2. 评估
        result.report = evaluate_batch(correction.sets, self.test_labels, self.graph)
        logger.info(
            f"测试集: n={result.report.n}, 覆盖率={result.report.coverage:.4f}, "
            f"平均大小={result.report.mean_size:.3f}, 平均同质性={result.report.mean_homogeneity:.3f}"
        )

        # 3. 写出
        result.artifacts = self._write(correction, result.report)
        logger.info(f"pipeline 完成: {len(result.artifacts)} 个产物写入 {cfg.out_dir}")
        logger.info("=" * 60)
        return result

    # ── 数据准备 ───────────────────────────────────────────────────

    def _prepare_from_features(self, rng: np.random.Generator) -> None:
        cfg = self.cfg
        x, labels = data_io.read_features(cfg.features)
        labels = self._labels_for(list(x.ids), labels)
        train_rows, calib_rows, test_rows = split_rows(x.n, (cfg.train_n, cfg.calib_n), rng)
        logger.info(f"划分: 训练 {len(train_rows)}, 校准 {len(calib_rows)}, 测试 {len(test_rows)}")

        self.model = fit_logit(
            x.take(train_rows),
            [labels[i] for i in train_rows],
            l2=cfg.l2,
            max_iter=cfg.max_iter,
            tol=cfg.tol,
            k_features=cfg.k_features,
        )
        universe = class_universe(labels, self.graph)
        self._set_batches(
            self._model_probs(x.take(calib_rows), universe),
            [labels[i] for i in calib_rows],
            self._model_probs(x.take(test_rows), universe),
            [x.ids[i] for i in test_rows],
            [labels[i] for i in test_rows],
        )

    def _prepare_from_probs(self, rng: np.random.Generator) -> None:
        cfg = self.cfg
        ids, probs, labels = data_io.read_probs(cfg.probs)
        labels = self._labels_for(ids, labels)
        calib_rows, test_rows = split_rows(probs.n, (cfg.calib_n,), rng)
        logger.info(f"划分: 校准 {len(calib_rows)}, 测试 {len(test_rows)}（使用外部概率，不训练）")
        self._set_batches(
            probs.take(calib_rows),
            [labels[i] for i in calib_rows],
            probs.take(test_rows),
            [ids[i] for i in test_rows],
            [labels[i] for i in test_rows],
        )

    def _labels_for(self, ids: Sequence[str], inline: Optional[List[str]]) -> List[str]:
        if self.cfg.labels is not None:
            return data_io.read_labels(self.cfg.labels, ids)
        if inline is None:
            raise DataError("LengthMismatch", "需要真实标签：输入文件的 label 列或 --labels")
        return inline

    def _model_probs(self, x: FeatureMatrix, universe: Sequence[str]) -> ProbMatrix:
        return predict_probs(self.model, x).with_classes(universe)

    def _set_batches(
        self,
        calib_probs: ProbMatrix,
        calib_labels: Sequence[str],
        test_probs: ProbMatrix,
        test_ids: Sequence[str],
        test_labels: Sequence[str],
    ) -> None:
        if self.graph is not None:
            calib_probs.in_leaf_space(self.graph)
        self.calib = LabeledBatch(calib_probs, tuple(calib_labels))
        self.test_probs = test_probs
        self.test_ids = tuple(test_ids)
        self.test_labels = tuple(test_labels)

    def _test_batch(self) -> LabeledBatch:
        return LabeledBatch(self.test_probs, self.test_labels)

    # ── 写出 ───────────────────────────────────────────────────────

    def _write(self, correction: CorrectionResult, report: Optional[EvalReport]) -> Dict[str, str]:
        cfg = self.cfg
        out = cfg.out_dir
        os.makedirs(out, exist_ok=True)
        paths: Dict[str, str] = {}
        audit = correction.plan.to_audit() if correction.plan is not None else None

        if self.model is not None:
            paths["model"] = artifact_writer.write_json(
                os.path.join(out, "model.json"), self.model.to_dict(), self._hash, "model",
            )

        paths["calibration"] = artifact_writer.write_json(
            os.path.join(out, "calibration.json"),
            {
                "config": cfg.to_dict(),
                "method": cfg.method.value,
                "correction": cfg.correction.value,
                "calibrations": [c.to_dict() for c in correction.calibrations],
                "audit": audit,
            },
            self._hash,
            "calibration",
        )

        paths["sets"] = artifact_writer.write_jsonl(
            os.path.join(out, "sets.jsonl"),
            self._records(correction),
            self._hash,
        )

        if report is not None:
            paths["report"] = artifact_writer.write_json(
                os.path.join(out, "report.json"),
                {
                    "config": cfg.to_dict(),
                    "report": report.to_dict(),
                    "target_coverage": 1.0 - cfg.alpha,
                    "audit": audit,
                },
                self._hash,
                "report",
            )
        return paths

    def _records(self, correction: CorrectionResult) -> List[dict]:
        batch: SetBatch = correction.sets
        sets = batch.to_prediction_sets(self.graph)
        records = artifact_writer.set_records(self.test_ids, sets)
        if correction.plan is not None and self.cfg.correction is Correction.TWO_FOLD:
            for rec, f in zip(records, correction.plan.fold_assignment):
                rec["fold"] = int(f)
        return records


def cmd_pipeline(cfg: RunConfig) -> PipelineResult:
    return HiconformPipeline(cfg).run()
