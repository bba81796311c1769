import logging

import numpy as np
import pytest

from conftest import random_batch
from logic.constants import Correction, Estimator, Method
from logic.errors import DataError
from logic.graph_crc import calibrate_lambda, graph_sets
from logic.label_shift import (
    apply_correction,
    estimate_class_proportions,
    oracle_correct,
    resample_calibration,
    two_fold_correct,
)
from logic.scores import LabeledBatch, ProbMatrix


# ============================================================================
# 比例估计
# ============================================================================

def test_soft_estimate_identical_rows():
    p = ProbMatrix(("a", "b"), np.tile([0.2, 0.8], (5, 1)))
    assert estimate_class_proportions(p).tolist() == pytest.approx([0.2, 0.8])


def test_soft_estimate_two_one_hot_rows():
    p = ProbMatrix(("a", "b"), np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert estimate_class_proportions(p).tolist() == pytest.approx([0.5, 0.5])


def test_hard_estimate_counts_argmax():
    p = ProbMatrix(("a", "b", "c"), np.array([[0.6, 0.3, 0.1], [0.2, 0.7, 0.1], [0.5, 0.4, 0.1]]))
    assert estimate_class_proportions(p, Estimator.HARD).tolist() == pytest.approx([2 / 3, 1 / 3, 0.0])


def test_em_estimate_on_one_hot_rows_is_frequency():
    rows = np.eye(3)[[0, 0, 1, 2, 2, 2]]
    p = ProbMatrix(("a", "b", "c"), rows)
    est = estimate_class_proportions(p, Estimator.EM)
    assert est.tolist() == pytest.approx([2 / 6, 1 / 6, 3 / 6])


def test_soft_estimate_recovers_mixture():
    # 校准良好的模型：按行概率抽标签，平均概率的期望即真实比例
    rng = np.random.default_rng(11)
    truth = np.array([0.1, 0.3, 0.6])
    y = rng.choice(3, size=1000, p=truth)
    rows = np.full((1000, 3), 0.1)
    rows[np.arange(1000), y] = 0.8
    est = estimate_class_proportions(ProbMatrix(("a", "b", "c"), rows))
    assert np.abs(est - (0.1 + 0.7 * truth)).max() < 0.05


def test_estimate_on_empty_fold():
    p = ProbMatrix(("a", "b"), np.zeros((0, 2)))
    with pytest.raises(DataError) as exc:
        estimate_class_proportions(p)
    assert exc.value.code == "EmptyFold"


def test_bbse_recovers_mixture_exactly_under_label_shift():
    # 参照集与测试集共用 p(x|y)：平均预测概率 = Cᵀq，bbse 精确解出 q，soft 被拉向均匀
    rng = np.random.default_rng(12)
    reference = _calib(["a"] * 40 + ["b"] * 40 + ["c"] * 40)
    y = rng.choice(["a", "b", "c"], size=600, p=[0.1, 0.2, 0.7])
    test = _calib([str(v) for v in y])
    freq = test.class_counts() / test.n
    est = estimate_class_proportions(test.probs, Estimator.BBSE, reference=reference)
    soft = estimate_class_proportions(test.probs)
    assert est.tolist() == pytest.approx(freq.tolist(), abs=1e-6)
    assert np.abs(soft - freq).max() > 0.03


def test_bbse_needs_reference():
    p = ProbMatrix(("a", "b"), np.tile([0.2, 0.8], (5, 1)))
    with pytest.raises(DataError) as exc:
        estimate_class_proportions(p, Estimator.BBSE)
    assert exc.value.code == "InvalidConfig"


def test_bbse_zero_for_class_missing_from_reference():
    reference = _calib(["a"] * 30 + ["b"] * 30, k=3)
    p = ProbMatrix(("a", "b", "c"), np.array([[0.2, 0.2, 0.6]] * 10))
    est = estimate_class_proportions(p, Estimator.BBSE, reference=reference)
    assert est[2] == 0.0
    assert est.tolist() == pytest.approx([0.5, 0.5, 0.0], abs=1e-9)


def test_two_fold_bbse_needs_no_drop():
    calib = _calib(["a"] * 30 + ["b"] * 30, k=3)
    test = ProbMatrix(("a", "b", "c"), np.array([[0.2, 0.2, 0.6]] * 10))
    result = two_fold_correct(None, calib, test, 0.2, Method.SPLIT, seed=15)
    assert result.plan.dropped_classes == ()
    for props in result.plan.estimated_props_per_fold:
        assert props[2] == 0.0
        assert props.sum() == pytest.approx(1.0)


# ============================================================================
# 重采样
# ============================================================================

def _calib(labels, k=3):
    names = ("a", "b", "c")[:k]
    idx = [names.index(y) for y in labels]
    rows = np.full((len(labels), k), 0.1 / (k - 1))
    rows[np.arange(len(labels)), idx] = 0.9
    return LabeledBatch(ProbMatrix(names, rows), tuple(labels))


def test_resample_point_mass():
    b = _calib(["a"] * 5 + ["b"] * 5 + ["c"] * 5)
    out = resample_calibration(b, [1.0, 0.0, 0.0], size=40, seed=1)
    assert out.n == 40
    assert set(out.labels) == {"a"}


def test_resample_singleton_stratum_repeated():
    b = _calib(["a"] * 50 + ["b"] * 49 + ["c"])
    out = resample_calibration(b, [0.3, 0.3, 0.4], size=1000, seed=2)
    count = sum(1 for y in out.labels if y == "c")
    assert 320 < count < 480


def test_resample_identity_direction():
    b = _calib(["a"] * 300 + ["b"] * 200 + ["c"] * 500)
    props = b.class_counts() / b.n
    out = resample_calibration(b, props, seed=3)
    freq = out.class_counts() / out.n
    assert np.abs(freq - props).max() < 0.05


def test_resample_missing_stratum():
    b = _calib(["a"] * 5 + ["b"] * 5)
    with pytest.raises(DataError) as exc:
        resample_calibration(b, [0.5, 0.25, 0.25], seed=4)
    assert exc.value.code == "MissingStratum"


@pytest.mark.parametrize("props", [[0.5, 0.5], [0.6, 0.6, -0.2], [0.5, 0.3, 0.3]])
def test_resample_invalid_props(props):
    b = _calib(["a", "b", "c"])
    with pytest.raises(DataError) as exc:
        resample_calibration(b, props, seed=5)
    assert exc.value.code == "InvalidProps"


def test_resample_is_reproducible():
    b = _calib(["a"] * 10 + ["b"] * 10 + ["c"] * 10)
    first = resample_calibration(b, [0.2, 0.3, 0.5], seed=6)
    second = resample_calibration(b, [0.2, 0.3, 0.5], seed=6)
    assert first.labels == second.labels


# ============================================================================
# 校正
# ============================================================================

def test_two_fold_audit(plasmablast):
    calib = random_batch(plasmablast, 400, seed=7)
    test = random_batch(plasmablast, 101, seed=8)
    result = two_fold_correct(plasmablast, calib, test.probs, 0.1, Method.GRAPH, seed=9)
    audit = result.plan.to_audit()
    assert sorted(audit["fold_sizes"]) == [50, 51]
    assert audit["estimator"] == "bbse"
    assert audit["seed"] == 9
    assert len(audit["estimated_props"]) == 2
    assert all(sum(c.values()) == calib.n for c in audit["resample_counts"])
    assert len(result.calibrations) == 2
    assert len(result.sets) == test.n


def test_two_fold_is_reproducible(plasmablast):
    calib = random_batch(plasmablast, 300, seed=10)
    test = random_batch(plasmablast, 60, seed=11)
    a = two_fold_correct(plasmablast, calib, test.probs, 0.1, Method.GRAPH, seed=12)
    b = two_fold_correct(plasmablast, calib, test.probs, 0.1, Method.GRAPH, seed=12)
    assert (a.sets.mask == b.sets.mask).all()
    assert (a.plan.fold_assignment == b.plan.fold_assignment).all()


def test_two_fold_needs_two_rows(plasmablast):
    calib = random_batch(plasmablast, 100, seed=13)
    test = random_batch(plasmablast, 1, seed=14)
    with pytest.raises(DataError) as exc:
        two_fold_correct(plasmablast, calib, test.probs, 0.1, Method.GRAPH, seed=1)
    assert exc.value.code == "EmptyFold"


def test_two_fold_drops_absent_class_with_warning(caplog):
    calib = _calib(["a"] * 30 + ["b"] * 30, k=3)
    rows = np.array([[0.2, 0.2, 0.6]] * 10)
    test = ProbMatrix(("a", "b", "c"), rows)
    with caplog.at_level(logging.WARNING, logger="logic.label_shift"):
        result = two_fold_correct(
            None, calib, test, 0.2, Method.SPLIT, seed=15, estimator=Estimator.SOFT
        )
    assert result.plan.dropped_classes == ("c",)
    assert any("c" in r.getMessage() for r in caplog.records)
    for props in result.plan.estimated_props_per_fold:
        assert props[2] == 0.0
        assert props.sum() == pytest.approx(1.0)


def test_none_correction_matches_direct_calibration(plasmablast):
    calib = random_batch(plasmablast, 300, seed=16)
    test = random_batch(plasmablast, 50, seed=17)
    result = apply_correction(Correction.NONE, plasmablast, calib, test.probs, 0.1, Method.GRAPH)
    cal = calibrate_lambda(plasmablast, calib, 0.1)
    assert result.plan is None
    assert (result.sets.mask == graph_sets(plasmablast, test.probs, cal.lambda_hat).mask).all()


def test_oracle_requires_labels(plasmablast):
    calib = random_batch(plasmablast, 200, seed=18)
    test = random_batch(plasmablast, 50, seed=19)
    with pytest.raises(DataError):
        apply_correction(Correction.ORACLE, plasmablast, calib, test.probs, 0.1, Method.GRAPH)
    result = oracle_correct(plasmablast, calib, test, 0.1, Method.GRAPH, seed=20)
    expected = test.class_counts() / test.n
    assert result.plan.estimated_props_per_fold[0].tolist() == pytest.approx(expected.tolist())


def test_split_method_needs_no_graph():
    calib = _calib(["a"] * 40 + ["b"] * 40 + ["c"] * 40)
    test = _calib(["a", "b", "c"] * 5)
    result = apply_correction(Correction.TWO_FOLD, None, calib, test.probs, 0.1, Method.SPLIT, seed=21)
    assert result.sets.columns == ("a", "b", "c")


def test_graph_method_needs_graph():
    calib = _calib(["a"] * 40 + ["b"] * 40 + ["c"] * 40)
    with pytest.raises(DataError):
        apply_correction(Correction.NONE, None, calib, calib.probs, 0.1, Method.GRAPH)
