import json
import logging
from pathlib import Path

import pytest

from main import main


@pytest.fixture(autouse=True)
def _cli_env(monkeypatch):
    monkeypatch.setenv("LOG_DIR", "")
    monkeypatch.delenv("HICONFORM_SEED", raising=False)
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


@pytest.fixture
def bundle(tmp_path):
    out = tmp_path / "data"
    assert main(["synth", "--n", "600", "--seed", "7", "--out", str(out)]) == 0
    return {"graph": str(out / "ontology.tsv"), "features": str(out / "features.csv"), "dir": out}


def _pipeline_args(bundle, out_dir, *extra):
    return [
        "pipeline",
        "--graph", bundle["graph"],
        "--features", bundle["features"],
        "--train-n", "200",
        "--calib-n", "200",
        "--k-features", "20",
        "--max-iter", "200",
        "--seed", "3",
        "--out-dir", str(out_dir),
        *extra,
    ]


def _pipeline(bundle, out_dir, *extra):
    return main(_pipeline_args(bundle, out_dir, *extra))


def _error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def _jsonl(path):
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines()]


# ============================================================================
# synth
# ============================================================================

def test_synth_writes_bundle(bundle):
    assert (bundle["dir"] / "synth.json").is_file()
    header = (bundle["dir"] / "features.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header.startswith("id,label,feat_")


def test_synth_accepts_csv_path(tmp_path):
    target = tmp_path / "x" / "cells.csv"
    assert main(["synth", "--n", "40", "--out", str(target)]) == 0
    assert target.is_file()
    assert (tmp_path / "x" / "ontology.tsv").is_file()


# ============================================================================
# pipeline
# ============================================================================

def test_pipeline_writes_all_artifacts(bundle, tmp_path, capsys):
    out = tmp_path / "run"
    assert _pipeline(bundle, out) == 0
    for name in ("model.json", "calibration.json", "sets.jsonl", "report.json"):
        assert (out / name).is_file()
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    report = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert report["report"]["n"] == 200
    assert report["target_coverage"] == 0.9
    assert summary["coverage"] == pytest.approx(report["report"]["coverage"])
    records = _jsonl(out / "sets.jsonl")
    assert len(records) == 200
    assert all(r["size"] == len(r["leaves"]) >= 1 for r in records)


def test_pipeline_is_byte_identical(bundle, tmp_path):
    assert _pipeline(bundle, tmp_path / "a") == 0
    assert _pipeline(bundle, tmp_path / "b") == 0
    first = (tmp_path / "a" / "sets.jsonl").read_bytes()
    assert first == (tmp_path / "b" / "sets.jsonl").read_bytes()


def test_thread_cap_does_not_enter_run_config(bundle, tmp_path):
    assert _pipeline(bundle, tmp_path / "a") == 0
    assert main(["--threads", "4", *_pipeline_args(bundle, tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "sets.jsonl").read_bytes() == (tmp_path / "b" / "sets.jsonl").read_bytes()
    report = json.loads((tmp_path / "b" / "report.json").read_text(encoding="utf-8"))
    assert "threads" not in report["config"]


def test_env_seed_overrides_flag(bundle, tmp_path, monkeypatch):
    assert _pipeline(bundle, tmp_path / "a") == 0
    monkeypatch.setenv("HICONFORM_SEED", "3")
    assert main([
        "pipeline",
        "--graph", bundle["graph"],
        "--features", bundle["features"],
        "--train-n", "200",
        "--calib-n", "200",
        "--k-features", "20",
        "--max-iter", "200",
        "--seed", "99",
        "--out-dir", str(tmp_path / "b"),
    ]) == 0
    assert (tmp_path / "a" / "sets.jsonl").read_bytes() == (tmp_path / "b" / "sets.jsonl").read_bytes()


def test_pipeline_two_fold_audit(bundle, tmp_path):
    out = tmp_path / "run"
    assert _pipeline(bundle, out, "--correction", "two_fold") == 0
    calibration = json.loads((out / "calibration.json").read_text(encoding="utf-8"))
    assert sorted(calibration["audit"]["fold_sizes"]) == [100, 100]
    assert calibration["audit"]["estimator"] == "bbse"
    assert len(calibration["calibrations"]) == 2
    assert {r["fold"] for r in _jsonl(out / "sets.jsonl")} == {1, 2}


def test_pipeline_split_method(bundle, tmp_path):
    out = tmp_path / "run"
    assert _pipeline(bundle, out, "--method", "split") == 0
    calibration = json.loads((out / "calibration.json").read_text(encoding="utf-8"))
    assert calibration["calibrations"][0]["method"] == "split"


def test_calibration_too_small_exits_3(bundle, tmp_path, capsys):
    rc = main([
        "pipeline",
        "--graph", bundle["graph"],
        "--features", bundle["features"],
        "--method", "split",
        "--train-n", "200",
        "--calib-n", "5",
        "--k-features", "20",
        "--max-iter", "50",
        "--out-dir", str(tmp_path / "run"),
    ])
    assert rc == 3
    assert _error(capsys)["error"] == "CalibrationTooSmall"


# ============================================================================
# 配置错误
# ============================================================================

def test_unknown_subcommand_exits_1(capsys):
    assert main(["frobnicate"]) == 1
    assert _error(capsys)["exit_code"] == 1


def test_features_and_probs_are_exclusive(bundle, capsys):
    rc = main(["pipeline", "--graph", bundle["graph"], "--features", bundle["features"], "--probs", bundle["features"]])
    assert rc == 1


def test_missing_input_file_exits_1(bundle, tmp_path, capsys):
    rc = main(["pipeline", "--graph", str(tmp_path / "nope.tsv"), "--features", bundle["features"]])
    assert rc == 1
    assert _error(capsys)["error"] == "InvalidConfig"


def test_unknown_config_key_exits_1(bundle, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"graph": bundle["graph"], "features": bundle["features"], "colour": "red"}))
    assert main(["pipeline", "--config", str(cfg)]) == 1


def test_cycle_in_graph_exits_2(bundle, tmp_path, capsys):
    g = tmp_path / "cycle.tsv"
    g.write_text("a\tb\nb\ta\n", encoding="utf-8")
    assert main(["pipeline", "--graph", str(g), "--features", bundle["features"]]) == 2
    assert _error(capsys)["error"] == "CycleDetected"


# ============================================================================
# 分步子命令
# ============================================================================

def test_step_by_step_graph_workflow(bundle, tmp_path):
    model = tmp_path / "model.json"
    probs = tmp_path / "probs.csv"
    cal = tmp_path / "cal.json"
    sets = tmp_path / "sets.jsonl"
    report = tmp_path / "report.json"
    g = bundle["graph"]
    assert main(["train", "--features", bundle["features"], "--graph", g, "--k-features", "20",
                 "--max-iter", "200", "--out", str(model)]) == 0
    assert main(["predict-probs", "--model", str(model), "--features", bundle["features"],
                 "--graph", g, "--out", str(probs)]) == 0
    assert main(["crc-calibrate", "--graph", g, "--probs", str(probs), "--alpha", "0.1", "--out", str(cal)]) == 0
    assert main(["crc-predict", "--graph", g, "--calibration", str(cal), "--probs", str(probs),
                 "--out", str(sets)]) == 0
    assert main(["evaluate", "--graph", g, "--sets", str(sets), "--labels", str(probs), "--out", str(report)]) == 0

    calibration = json.loads(cal.read_text(encoding="utf-8"))
    result = json.loads(report.read_text(encoding="utf-8"))["report"]
    # 在校准集本身上评估：经验风险不超过界
    assert 1.0 - result["coverage"] <= calibration["bound"] + 1e-9
    assert result["n"] == 600


def test_step_by_step_split_workflow(bundle, tmp_path):
    model = tmp_path / "model.json"
    probs = tmp_path / "probs.csv"
    cal = tmp_path / "cal.json"
    sets = tmp_path / "sets.jsonl"
    assert main(["train", "--features", bundle["features"], "--max-iter", "100", "--out", str(model)]) == 0
    assert main(["predict-probs", "--model", str(model), "--features", bundle["features"], "--out", str(probs)]) == 0
    assert main(["split-calibrate", "--probs", str(probs), "--alpha", "0.1", "--out", str(cal)]) == 0
    assert main(["split-predict", "--calibration", str(cal), "--probs", str(probs), "--out", str(sets)]) == 0
    calibration = json.loads(cal.read_text(encoding="utf-8"))
    assert calibration["k"] == 541
    assert len(_jsonl(sets)) == 600
    # graph 校准文件不能用于 split 预测
    assert main(["crc-predict", "--graph", bundle["graph"], "--calibration", str(cal), "--probs", str(probs),
                 "--out", str(tmp_path / "x.jsonl")]) == 2


def test_correct_writes_audit(bundle, tmp_path):
    model = tmp_path / "model.json"
    probs = tmp_path / "probs.csv"
    out = tmp_path / "corr"
    g = bundle["graph"]
    assert main(["train", "--features", bundle["features"], "--graph", g, "--max-iter", "100",
                 "--out", str(model)]) == 0
    assert main(["predict-probs", "--model", str(model), "--features", bundle["features"],
                 "--graph", g, "--out", str(probs)]) == 0
    assert main(["correct", "--graph", g, "--calib-probs", str(probs), "--probs", str(probs),
                 "--alpha", "0.1", "--seed", "4", "--out", str(out)]) == 0
    correction = json.loads((out / "correction.json").read_text(encoding="utf-8"))
    assert correction["correction"] == "two_fold"
    assert sorted(correction["audit"]["fold_sizes"]) == [300, 300]
    assert len(_jsonl(out / "sets.jsonl")) == 600


def test_study_command(tmp_path, capsys):
    scenario = tmp_path / "scenario.json"
    scenario.write_text(json.dumps({
        "synth": {"n_features": 20, "n_informative": 10},
        "train_n": 200,
        "calib_n": 100,
        "test_n": 100,
        "k_features": 10,
        "max_iter": 100,
    }), encoding="utf-8")
    out = tmp_path / "study.json"
    hist = tmp_path / "hist.dat"
    rc = main(["--threads", "2", "study", "--scenario", str(scenario), "--trials", "3", "--seed", "1",
               "--out", str(out), "--emit-hist", str(hist), "--bins", "5"])
    assert rc == 0
    study = json.loads(out.read_text(encoding="utf-8"))["study"]
    assert study["trials"] == 3
    assert study["beta_params"] == [91, 10]
    assert len(hist.read_text(encoding="utf-8").splitlines()) == 6
    assert "覆盖率研究" in capsys.readouterr().out
