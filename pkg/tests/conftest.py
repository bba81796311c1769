import os
import sys

import hypothesis
import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from logic.label_graph import build_graph  # noqa: E402
from logic.scores import LabeledBatch, ProbMatrix  # noqa: E402

hypothesis.settings.register_profile("dev", max_examples=50, deadline=None)
hypothesis.settings.register_profile("ci", max_examples=200, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "dev"))


# 上皮子本体：Enterocyte 同时属于 epithelial intestinal cell 与 columnar epithelial cell
EPITHELIAL_EDGES = (
    ("cell", "epithelial cell"),
    ("cell", "Macrophage"),
    ("epithelial cell", "epithelial intestinal cell"),
    ("epithelial cell", "columnar epithelial cell"),
    ("epithelial intestinal cell", "Enterocyte"),
    ("epithelial intestinal cell", "Goblet"),
    ("columnar epithelial cell", "Enterocyte"),
    ("columnar epithelial cell", "Duct"),
)

# 节点分数：Enterocyte 0.55, epithelial intestinal 0.65, columnar 0.60, epithelial 0.70, cell 1
EPITHELIAL_ROW = {"Enterocyte": 0.55, "Goblet": 0.10, "Duct": 0.05, "Macrophage": 0.30}

# plasmablast 有两个父节点
PLASMABLAST_EDGES = (
    ("leukocyte", "mature B cell"),
    ("leukocyte", "antibody secreting cell"),
    ("leukocyte", "T cell"),
    ("mature B cell", "plasmablast"),
    ("mature B cell", "memory B cell"),
    ("antibody secreting cell", "plasmablast"),
    ("antibody secreting cell", "plasma cell"),
    ("T cell", "CD4"),
    ("T cell", "CD8"),
)


@pytest.fixture
def fan():
    return build_graph([("a", "b"), ("a", "c")])


@pytest.fixture
def epithelial():
    return build_graph(EPITHELIAL_EDGES)


@pytest.fixture
def epithelial_probs(epithelial):
    names = epithelial.leaves
    return ProbMatrix(names, np.array([[EPITHELIAL_ROW[c] for c in names]]))


@pytest.fixture
def plasmablast():
    return build_graph(PLASMABLAST_EDGES)


def random_batch(g, n, seed, concentration=1.0):
    """按 Dirichlet 抽取概率，标签按概率本身抽取（模型校准良好）。"""
    rng = np.random.default_rng(seed)
    rows = rng.dirichlet(np.full(len(g.leaves), concentration), size=n)
    rows = rows / rows.sum(axis=1, keepdims=True)
    labels = tuple(g.leaves[rng.choice(len(g.leaves), p=r)] for r in rows)
    return LabeledBatch(ProbMatrix(g.leaves, rows), labels)
