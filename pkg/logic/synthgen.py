"""
合成数据生成器：已知层级标签律 + 高斯类条件特征 + 可控标签偏移

类均值构造：每个非根节点 v 抽一个偏移向量 z_v（E‖z_v‖² = sep²/2），
叶节点的均值为其自反祖先（不含根）偏移之和。树上两类均值的期望平方距离
与它们的无向图距离成正比，兄弟类为 sep²。

类均值只由 cfg.seed 决定；样本抽取可以传入外部 rng（模拟试验中每次试验一条流）。
shift_props 只替换类别边际分布，类条件分布 p(x|y) 不变。
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np

from logic.classifier import FeatureMatrix
from logic.constants import (
    DEFAULT_N_FEATURES,
    DEFAULT_N_INFORMATIVE,
    DEFAULT_SEED,
    DEFAULT_SEPARATION,
    MOUSE_ILEUM_COUNTS,
    MOUSE_ILEUM_EDGES,
    PROPS_SUM_TOL,
)
from logic.errors import DataError
from logic.label_graph import LabelGraph, build_graph

logger = logging.getLogger(__name__)

Edge = Tuple[str, str]
PropsLike = Union[Sequence[float], Mapping[str, float], None]


def balanced_tree_edges(depth: int, branching: int) -> Tuple[Edge, ...]:
    """深度 depth、分支数 branching 的平衡树边表；内部节点 n<i>，叶节点 leaf_<i>。"""
    if depth < 1 or branching < 2:
        raise DataError("InvalidConfig", f"平衡树参数非法: depth={depth}, branching={branching}")
    tree = nx.balanced_tree(branching, depth)
    directed = nx.bfs_tree(tree, 0)
    leaves = {v for v in directed if directed.out_degree(v) == 0}
    width = len(str(directed.number_of_nodes()))

    def name(v: int) -> str:
        return f"leaf_{v:0{width}d}" if v in leaves else f"n{v:0{width}d}"

    return tuple((name(u), name(v)) for u, v in directed.edges())


@dataclass(frozen=True)
class SynthConfig:
    edges: Tuple[Edge, ...] = MOUSE_ILEUM_EDGES
    class_props: Optional[Tuple[float, ...]] = None  # 按 graph.leaves 顺序；None 表示默认
    n_features: int = DEFAULT_N_FEATURES
    n_informative: int = DEFAULT_N_INFORMATIVE
    class_separation: float = DEFAULT_SEPARATION
    seed: int = DEFAULT_SEED
    _graph: LabelGraph = field(default=None, init=False, repr=False, compare=False)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        edges = tuple((str(a), str(b)) for a, b in self.edges)
        object.__setattr__(self, "edges", edges)
        graph = build_graph(edges)
        object.__setattr__(self, "_graph", graph)
        if self.class_separation < 0:
            raise DataError("InvalidConfig", f"class_separation 必须非负，当前 {self.class_separation}")
        if self.n_features < 1 or not 0 <= self.n_informative <= self.n_features:
            raise DataError(
                "InvalidConfig",
                f"特征数非法: n_features={self.n_features}, n_informative={self.n_informative}",
            )
        props = self.class_props
        if props is None:
            props = _default_props(graph)
        object.__setattr__(self, "class_props", _check_props(props, graph.leaves, "InvalidConfig"))

    @property
    def graph(self) -> LabelGraph:
        return self._graph

    @property
    def class_names(self) -> Tuple[str, ...]:
        return self._graph.leaves

    def feature_names(self) -> Tuple[str, ...]:
        width = len(str(self.n_features))
        return tuple(f"feat_{j:0{width}d}" for j in range(self.n_features))

    def informative_features(self) -> Tuple[str, ...]:
        return self.feature_names()[: self.n_informative]

    def props_dict(self) -> Dict[str, float]:
        return dict(zip(self.class_names, self.class_props))  # type: ignore[arg-type]

    def class_means(self) -> np.ndarray:
        """K × n_features 的类均值矩阵，只依赖 seed 与图结构。"""
        g = self._graph
        d = self.n_informative
        means = np.zeros((len(g.leaves), self.n_features))
        if d == 0 or self.class_separation == 0:
            return means
        mean_ss, _ = np.random.SeedSequence(self.seed).spawn(2)
        rng = np.random.default_rng(mean_ss)
        sd = self.class_separation / np.sqrt(2.0 * d)
        # 按名称顺序抽样，保证与图构建顺序无关
        offsets = {v: rng.normal(0.0, sd, size=d) for v in sorted(g.nodes) if v != g.root}
        for k, leaf in enumerate(g.leaves):
            for v in g.ancestors(leaf, reflexive=True):
                if v != g.root:
                    means[k, :d] += offsets[v]
        return means

    def to_dict(self) -> dict:
        return {
            "edges": [list(e) for e in self.edges],
            "class_props": self.props_dict(),
            "n_features": self.n_features,
            "n_informative": self.n_informative,
            "class_separation": self.class_separation,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "SynthConfig":
        """
        支持的键: edges | tree{depth, branching}、class_props（列表或 {类别: 比例}）、
        n_features、n_informative、class_separation、seed；缺省即默认本体与细胞比例。
        """
        kwargs: dict = {}
        if "edges" in data:
            kwargs["edges"] = tuple(tuple(e) for e in data["edges"])
        elif "tree" in data:
            tree = data["tree"]
            kwargs["edges"] = balanced_tree_edges(int(tree["depth"]), int(tree["branching"]))
        for key, cast in (("n_features", int), ("n_informative", int), ("class_separation", float), ("seed", int)):
            if key in data:
                kwargs[key] = cast(data[key])
        cfg = cls(**kwargs)
        if data.get("class_props") is not None:
            cfg = shift_props(cfg, data["class_props"])
        return cfg


def _default_props(g: LabelGraph) -> Tuple[float, ...]:
    counts = dict(MOUSE_ILEUM_COUNTS)
    if set(g.leaves) == set(counts):
        total = float(sum(counts.values()))
        return tuple(counts[leaf] / total for leaf in g.leaves)
    return tuple(1.0 / len(g.leaves) for _ in g.leaves)


def _check_props(props: PropsLike, leaves: Sequence[str], code: str) -> Tuple[float, ...]:
    if isinstance(props, Mapping):
        unknown = [c for c in props if c not in set(leaves)]
        if unknown:
            raise DataError(code, f"比例中含未知类别: {unknown[:5]}")
        arr = np.array([float(props.get(leaf, 0.0)) for leaf in leaves])
    else:
        arr = np.asarray(props, dtype=np.float64)
    if arr.shape != (len(leaves),):
        raise DataError(code, f"比例向量长度 {arr.shape} 与类别数 {len(leaves)} 不一致")
    if not np.all(np.isfinite(arr)) or (arr < 0).any():
        raise DataError(code, "比例向量含负值或非有限值")
    if abs(arr.sum() - 1.0) > PROPS_SUM_TOL:
        raise DataError(code, f"比例向量和为 {arr.sum():.8f}，应为 1")
    return tuple(float(v) for v in arr / arr.sum())


def shift_props(cfg: SynthConfig, target_props: PropsLike) -> SynthConfig:
    props = _check_props(target_props, cfg.class_names, "InvalidProps")
    return replace(cfg, class_props=props)


def generate(
    cfg: SynthConfig,
    n: int,
    rng: Optional[np.random.Generator] = None,
    id_prefix: str = "cell",
) -> Tuple[FeatureMatrix, Tuple[str, ...]]:
    if n < 1:
        raise DataError("InvalidConfig", f"样本数必须 ≥ 1，当前 {n}")
    if rng is None:
        _, sample_ss = np.random.SeedSequence(cfg.seed).spawn(2)
        rng = np.random.default_rng(sample_ss)
    means = cfg.class_means()
    y = rng.choice(len(cfg.class_names), size=n, p=np.asarray(cfg.class_props))
    x = means[y] + rng.standard_normal((n, cfg.n_features))
    width = max(5, len(str(n - 1)))
    ids = tuple(f"{id_prefix}_{i:0{width}d}" for i in range(n))
    labels = tuple(cfg.class_names[k] for k in y)
    logger.debug(f"合成数据: n={n}, K={len(cfg.class_names)}, p={cfg.n_features}, sep={cfg.class_separation}")
    return FeatureMatrix(ids, cfg.feature_names(), x), labels
