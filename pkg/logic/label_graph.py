"""
标签 DAG：祖先 / 后代 / 叶集合 / 无向最短路 / 公共祖先归纳

构建后只读：所有查询结果预计算或按需缓存，可在多线程中并发读取。
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from logic.constants import VIRTUAL_ROOT
from logic.errors import DataError

logger = logging.getLogger(__name__)

NodeSet = FrozenSet[str]

# 精确最小覆盖的候选上限，超过则退回贪心
_EXACT_COVER_LIMIT = 12


@dataclass(frozen=True, eq=False)
class LabelGraph:
    graph: nx.DiGraph = field(repr=False)
    root: str
    virtual_root: Optional[str]
    leaves: Tuple[str, ...]
    _ancestors: Dict[str, NodeSet] = field(repr=False)
    _descendants: Dict[str, NodeSet] = field(repr=False)
    _leaf_sets: Dict[str, NodeSet] = field(repr=False)
    _undirected: nx.Graph = field(repr=False)
    _dist_cache: Dict[str, Dict[str, int]] = field(default_factory=dict, repr=False)
    _matrix_cache: Dict[Tuple[str, ...], np.ndarray] = field(default_factory=dict, repr=False)
    _summary_cache: Dict[NodeSet, Tuple[str, ...]] = field(default_factory=dict, repr=False)

    # ── 基本属性 ───────────────────────────────────────────────────

    @property
    def nodes(self) -> NodeSet:
        return frozenset(self.graph.nodes)

    @property
    def leaf_set(self) -> NodeSet:
        return self._leaf_sets[self.root]

    def __contains__(self, v: object) -> bool:
        return v in self._leaf_sets

    def is_leaf(self, v: str) -> bool:
        self._check(v)
        return self.graph.out_degree(v) == 0

    def edges(self, include_virtual: bool = False) -> List[Tuple[str, str]]:
        out = []
        for u, v in self.graph.edges:
            if not include_virtual and u == self.virtual_root:
                continue
            out.append((u, v))
        return sorted(out)

    # ── 查询 ───────────────────────────────────────────────────────

    def ancestors(self, v: str, reflexive: bool = False) -> NodeSet:
        self._check(v)
        anc = self._ancestors[v]
        return anc | {v} if reflexive else anc

    def descendants(self, v: str, reflexive: bool = False) -> NodeSet:
        self._check(v)
        desc = self._descendants[v]
        return desc | {v} if reflexive else desc

    def leaf_descendants(self, v: str) -> NodeSet:
        """ℒ(v) = 𝒫(v) ∩ N；叶节点的 ℒ 是它自己。"""
        self._check(v)
        return self._leaf_sets[v]

    def undirected_distance(self, u: str, v: str) -> int:
        self._check(u)
        self._check(v)
        if u == v:
            return 0
        lengths = self._dist_cache.get(u)
        if lengths is None:
            lengths = nx.single_source_shortest_path_length(self._undirected, u)
            self._dist_cache[u] = lengths
        return int(lengths[v])

    def leaf_distance_matrix(self, names: Sequence[str]) -> np.ndarray:
        key = tuple(names)
        cached = self._matrix_cache.get(key)
        if cached is not None:
            return cached
        k = len(key)
        dist = np.zeros((k, k), dtype=np.float64)
        for i in range(k):
            for j in range(i + 1, k):
                d = self.undirected_distance(key[i], key[j])
                dist[i, j] = dist[j, i] = d
        dist.setflags(write=False)
        self._matrix_cache[key] = dist
        return dist

    def set_homogeneity(self, leaves: Iterable[str]) -> float:
        """集合内两两无向最短路的平均值；单元素集合定义为 0。"""
        items = sorted(leaves)
        if len(items) < 2:
            return 0.0
        total = 0
        pairs = 0
        for a, b in itertools.combinations(items, 2):
            total += self.undirected_distance(a, b)
            pairs += 1
        return total / pairs

    def summarize_set(self, s: Iterable[str]) -> List[str]:
        """
        用最少的节点命名一个叶集合。

        存在 ℒ(v) 恰好等于 s 的节点时返回 [v]（取最具体的一个）；
        否则（多父节点造成的分叉）返回若干节点，它们的叶集合之并恰为 s。
        """
        target = frozenset(s)
        if not target:
            raise DataError("EmptySet", "summarize_set 需要非空叶集合")
        for v in target:
            self._check(v)
            if self.graph.out_degree(v) != 0:
                raise DataError("NotLeaves", f"节点 {v!r} 不是叶节点")

        cached = self._summary_cache.get(target)
        if cached is not None:
            return list(cached)

        exact = [v for v, ls in self._leaf_sets.items() if ls == target]
        if exact:
            result: List[str] = [self._most_specific(exact)]
        else:
            result = self._min_cover(target)
        self._summary_cache[target] = tuple(result)
        return result

    # ── 内部 ───────────────────────────────────────────────────────

    def _check(self, v: str) -> None:
        if v not in self._leaf_sets:
            raise DataError("UnknownNode", f"未知节点: {v!r}")

    def _most_specific(self, same_leafset: Sequence[str]) -> str:
        pool = set(same_leafset)
        minimal = [v for v in pool if not (self._descendants[v] & pool)]
        return min(minimal)

    def _min_cover(self, target: NodeSet) -> List[str]:
        groups: Dict[NodeSet, List[str]] = {}
        for v, ls in self._leaf_sets.items():
            if ls <= target:
                groups.setdefault(ls, []).append(v)
        maximal = [
            (ls, self._most_specific(vs))
            for ls, vs in groups.items()
            if not any(ls < other for other in groups)
        ]
        maximal.sort(key=lambda item: (-len(item[0]), item[1]))

        if len(maximal) <= _EXACT_COVER_LIMIT:
            for r in range(1, len(maximal) + 1):
                for combo in itertools.combinations(maximal, r):
                    covered = frozenset().union(*(ls for ls, _ in combo))
                    if covered == target:
                        return sorted(v for _, v in combo)

        chosen: List[str] = []
        covered: set = set()
        while covered != target:
            ls, v = max(maximal, key=lambda item: len(item[0] - covered))
            chosen.append(v)
            covered |= ls
        return sorted(chosen)


def build_graph(edges: Iterable[Tuple[str, str]]) -> LabelGraph:
    """
    由 (parent, child) 边表构建并校验 DAG。

    重复边静默去重；多个根时插入虚拟根，保证 ℒ(root) = N。
    """
    pairs: List[Tuple[str, str]] = []
    for edge in edges:
        if len(edge) != 2:
            raise DataError("InvalidIdentifier", f"边必须是 (parent, child): {edge!r}")
        parent, child = edge
        if not isinstance(parent, str) or not isinstance(child, str) or not parent.strip() or not child.strip():
            raise DataError("InvalidIdentifier", f"节点标识必须是非空字符串: {edge!r}")
        pairs.append((parent.strip(), child.strip()))
    if not pairs:
        raise DataError("EmptyInput", "边表为空")

    unique = list(dict.fromkeys(pairs))
    if len(unique) < len(pairs):
        logger.debug(f"边表去重: {len(pairs)} -> {len(unique)}")

    g = nx.DiGraph()
    g.add_edges_from(unique)
    if not nx.is_directed_acyclic_graph(g):
        cycle = nx.find_cycle(g)
        raise DataError("CycleDetected", f"标签图存在有向环: {cycle}")

    roots = sorted(v for v, d in g.in_degree() if d == 0)
    virtual_root: Optional[str] = None
    if len(roots) > 1:
        virtual_root = VIRTUAL_ROOT
        while virtual_root in g:
            virtual_root = "_" + virtual_root
        for r in roots:
            g.add_edge(virtual_root, r)
        root = virtual_root
        logger.info(f"标签图有 {len(roots)} 个根，已插入虚拟根 {virtual_root!r}")
    else:
        root = roots[0]

    leaves = tuple(sorted(v for v, d in g.out_degree() if d == 0))

    leaf_sets: Dict[str, NodeSet] = {}
    for v in reversed(list(nx.topological_sort(g))):
        children = list(g.successors(v))
        if not children:
            leaf_sets[v] = frozenset((v,))
        else:
            leaf_sets[v] = frozenset().union(*(leaf_sets[c] for c in children))

    ancestors = {v: frozenset(nx.ancestors(g, v)) for v in g.nodes}
    descendants = {v: frozenset(nx.descendants(g, v)) for v in g.nodes}

    undirected = nx.freeze(g.to_undirected())
    nx.freeze(g)

    logger.debug(f"标签图: {g.number_of_nodes()} 节点, {len(leaves)} 叶, 根={root!r}")
    return LabelGraph(
        graph=g,
        root=root,
        virtual_root=virtual_root,
        leaves=leaves,
        _ancestors=ancestors,
        _descendants=descendants,
        _leaf_sets=leaf_sets,
        _undirected=undirected,
    )
