import json
from pathlib import Path

import numpy as np
import pytest

import artifact_writer
import data_io
from logic.constants import PredictionSet
from logic.errors import ConfigError, DataError
from logic.scores import ProbMatrix


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_read_edges_skips_comments(tmp_path):
    p = _write(tmp_path / "g.tsv", "# 注释\na\tb\na\tc\n\n")
    assert data_io.read_edges(p) == [("a", "b"), ("a", "c")]
    assert data_io.read_graph(p).leaves == ("b", "c")


def test_read_edges_keeps_hash_inside_names(tmp_path):
    p = _write(tmp_path / "g.tsv", "  # 克隆\nroot\tclone#1\nroot\tclone#2\n")
    assert data_io.read_edges(p) == [("root", "clone#1"), ("root", "clone#2")]


def test_read_edges_only_comments(tmp_path):
    p = _write(tmp_path / "g.tsv", "# a\tb\n\n")
    with pytest.raises(DataError) as exc:
        data_io.read_edges(p)
    assert exc.value.code == "EmptyInput"


def test_read_edges_wrong_width(tmp_path):
    p = _write(tmp_path / "g.tsv", "a\tb\tc\n")
    with pytest.raises(DataError):
        data_io.read_edges(p)


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        data_io.read_edges(str(tmp_path / "missing.tsv"))


def test_empty_file(tmp_path):
    p = _write(tmp_path / "p.csv", "")
    with pytest.raises(DataError) as exc:
        data_io.read_probs(p)
    assert exc.value.code == "EmptyInput"


def test_read_probs_with_ids_and_labels(tmp_path):
    p = _write(tmp_path / "p.csv", "id,label,b,c\n007,b,0.9,0.1\n008,c,0.3,0.7\n")
    ids, probs, labels = data_io.read_probs(p)
    assert ids == ["007", "008"]
    assert labels == ["b", "c"]
    assert probs.class_names == ("b", "c")


def test_read_probs_without_ids(tmp_path):
    p = _write(tmp_path / "p.csv", "b,c\n0.5,0.5\n")
    ids, _, labels = data_io.read_probs(p)
    assert ids == ["row_00000"]
    assert labels is None


def test_read_probs_rejects_unnormalized_row(tmp_path):
    p = _write(tmp_path / "p.csv", "b,c\n0.5,0.4\n")
    with pytest.raises(DataError) as exc:
        data_io.read_probs(p)
    assert exc.value.code == "RowNotNormalized"


def test_read_probs_rejects_text_cell(tmp_path):
    p = _write(tmp_path / "p.csv", "b,c\n0.5,abc\n")
    with pytest.raises(DataError) as exc:
        data_io.read_probs(p)
    assert exc.value.code == "NonFiniteInput"


def test_duplicate_ids(tmp_path):
    p = _write(tmp_path / "p.csv", "id,b,c\nx,0.5,0.5\nx,0.5,0.5\n")
    with pytest.raises(DataError) as exc:
        data_io.read_probs(p)
    assert exc.value.code == "InvalidIdentifier"


def test_read_labels_aligned_by_id(tmp_path):
    p = _write(tmp_path / "y.csv", "id,label\nr2,c\nr1,b\n")
    assert data_io.read_labels(p, ["r1", "r2"]) == ["b", "c"]
    with pytest.raises(DataError) as exc:
        data_io.read_labels(p, ["r1", "r3"])
    assert exc.value.code == "LengthMismatch"


def test_read_labels_headerless(tmp_path):
    p = _write(tmp_path / "y.txt", "b\nc\nb\n")
    assert data_io.read_labels(p) == ["b", "c", "b"]
    with pytest.raises(DataError):
        data_io.read_labels(p, ["r1", "r2"])


def test_probs_written_then_read(tmp_path):
    probs = ProbMatrix(("b", "c"), np.array([[0.25, 0.75], [0.6, 0.4]]))
    path = str(tmp_path / "out" / "p.csv")
    data_io.write_probs(path, ["x", "y"], probs, ["c", "b"])
    ids, again, labels = data_io.read_probs(path)
    assert ids == ["x", "y"]
    assert labels == ["c", "b"]
    assert np.allclose(again.rows, probs.rows)


def test_read_sets_requires_leaves(tmp_path):
    p = _write(tmp_path / "s.jsonl", '{"id": "a", "leaves": ["b"]}\n{"id": "b"}\n')
    with pytest.raises(DataError):
        data_io.read_sets(p)


def test_jsonl_is_canonical(tmp_path):
    sets = [PredictionSet(leaves=frozenset({"c", "b"}), size=2, homogeneity=2.0 / 3.0)]
    path = artifact_writer.write_jsonl(str(tmp_path / "s.jsonl"), artifact_writer.set_records(["r0"], sets), "abc")
    line = Path(path).read_text(encoding="utf-8")
    assert line.endswith("\n")
    rec = json.loads(line)
    assert list(rec) == sorted(rec)
    assert rec["leaves"] == ["b", "c"]
    assert rec["homogeneity"] == 0.666666666667
    assert rec["config_hash"] == "abc"


def test_json_artifact_is_stamped(tmp_path):
    path = artifact_writer.write_json(str(tmp_path / "r.json"), {"x": float("nan")}, "h", "report")
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    assert data["config_hash"] == "h"
    assert data["kind"] == "report"
    assert "tool_version" in data
    assert data["x"] is None
