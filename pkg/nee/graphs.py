"""重み付き無向グラフの生成と正解オラクル

グラフの生成と最短経路・最小全域木の参照実装にはnetworkxを使います。
"""

import itertools
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple, Union

import networkx as nx
import numpy as np

from .errors import GraphError
from .logging import get_logger
from .numeral import END, Token


FAMILIES = ('erdos_renyi', 'newman_watts_strogatz', 'd_regular', 'barabasi_albert')
MAX_WEIGHT = 255
CLOSE_SPREAD = 8
BRUTE_FORCE_MST_NODES = 7

Edge = Tuple[int, int, int]

logger = get_logger('nee.graphs')


@dataclass(frozen=True)
class WeightedGraph:
    """整数重みの無向グラフ

    Attributes:
        n: ノード数（ノードは 0..n-1）
        edges: (u, v, w) の組（u < v、重みは 1..255）
    """
    n: int
    edges: Tuple[Edge, ...]

    def __post_init__(self):
        if self.n < 1:
            raise GraphError(f"Graph needs at least one node: {self.n}", {'n': self.n})
        seen = set()
        for u, v, w in self.edges:
            if u == v:
                raise GraphError(f"Self-loop at node {u}", {'node': u})
            if not (0 <= u < v < self.n):
                raise GraphError(f"Edge ({u}, {v}) is not normalized to u < v < n", {'edge': [u, v], 'n': self.n})
            if not 1 <= w <= MAX_WEIGHT:
                raise GraphError(f"Edge weight {w} outside [1, {MAX_WEIGHT}]", {'edge': [u, v], 'weight': w})
            if (u, v) in seen:
                raise GraphError(f"Duplicate edge ({u}, {v})", {'edge': [u, v]})
            seen.add((u, v))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Tuple[int, int, int]]) -> 'WeightedGraph':
        normalized = sorted((min(u, v), max(u, v), int(w)) for u, v, w in edges)
        return cls(n, tuple(normalized))

    def neighbors(self, node: int) -> List[Tuple[int, int]]:
        """隣接ノードと重み（ノード番号順）"""
        out = [(v, w) for u, v, w in self.edges if u == node]
        out += [(u, w) for u, v, w in self.edges if v == node]
        return sorted(out)

    def weight(self, u: int, v: int) -> Optional[int]:
        a, b = min(u, v), max(u, v)
        for x, y, w in self.edges:
            if (x, y) == (a, b):
                return w
        return None

    def to_networkx(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(self.n))
        graph.add_weighted_edges_from(self.edges)
        return graph

    def is_connected(self) -> bool:
        return nx.is_connected(self.to_networkx())

    def to_record(self) -> Dict[str, Any]:
        return {'n': self.n, 'edges': [list(e) for e in self.edges]}

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> 'WeightedGraph':
        return cls(int(record['n']), tuple(tuple(int(x) for x in e) for e in record['edges']))


def _require(condition: bool, message: str, **details) -> None:
    if not condition:
        raise GraphError(message, details)


def _structure(family: str, size: int, params: Dict[str, Any], rng: np.random.Generator) -> Tuple[nx.Graph, Dict[str, Any]]:
    seed = int(rng.integers(2 ** 31 - 1))
    if family == 'erdos_renyi':
        p = float(params.get('p', rng.uniform(0.0, 1.0)))
        _require(0.0 <= p <= 1.0, f"Erdos-Renyi p must lie in [0, 1]: {p}", p=p)
        return nx.gnp_random_graph(size, p, seed=seed), {'p': p}

    if family == 'newman_watts_strogatz':
        k = int(params['k']) if 'k' in params else int(rng.integers(2, max(2, min(5, size - 1)) + 1))
        p = float(params.get('p', rng.uniform(0.0, 1.0)))
        _require(2 <= k <= 5, f"Newman-Watts-Strogatz k must lie in [2, 5]: {k}", k=k)
        _require(0.0 <= p <= 1.0, f"Newman-Watts-Strogatz p must lie in [0, 1]: {p}", p=p)
        _require(size > k, f"Newman-Watts-Strogatz needs more than k={k} nodes", k=k, n=size)
        return nx.newman_watts_strogatz_graph(size, k, p, seed=seed), {'k': k, 'p': p}

    if family == 'd_regular':
        if 'd' in params:
            d = int(params['d'])
        else:
            choices = [d for d in range(2, min(5, size - 1) + 1) if (d * size) % 2 == 0]
            _require(bool(choices), f"No valid degree for a {size}-node regular graph", n=size)
            d = int(rng.choice(choices))
        _require(2 <= d < size, f"d-regular degree must satisfy 2 <= d < n: d={d}, n={size}", d=d, n=size)
        _require((d * size) % 2 == 0, f"d-regular graphs need n*d even: d={d}, n={size}", d=d, n=size)
        return nx.random_regular_graph(d, size, seed=seed), {'d': d}

    if family == 'barabasi_albert':
        m = int(params['m']) if 'm' in params else int(rng.integers(2, max(2, min(5, size - 1)) + 1))
        _require(2 <= m <= 5, f"Barabasi-Albert m must lie in [2, 5]: {m}", m=m)
        _require(size > m, f"Barabasi-Albert needs more than m={m} nodes", m=m, n=size)
        return nx.barabasi_albert_graph(size, m, seed=seed), {'m': m}

    raise GraphError(f"Unknown graph family: {family}", {'family': family, 'known': list(FAMILIES)})


def _draw_weights(count: int, cap: int, hard: bool, spread: int, rng: np.random.Generator) -> np.ndarray:
    if hard:
        base = int(rng.integers(1, max(cap - spread, 1) + 1))
        return np.minimum(base + rng.integers(0, spread + 1, size=count), cap)
    return rng.integers(1, cap + 1, size=count)


def _fits_number_system(structure: nx.Graph, source: int) -> bool:
    """始点からの最短距離 + 辺の重み が 255 を超えないか"""
    if structure.number_of_edges() == 0:
        return True
    dist = nx.single_source_dijkstra_path_length(structure, source)
    for u, v, data in structure.edges(data=True):
        reach = [dist[x] for x in (u, v) if x in dist]
        if reach and max(reach) + data['weight'] > MAX_WEIGHT:
            return False
    return True


def gen_graph(family: str, size: int, params: Optional[Mapping[str, Any]] = None,
              seed: Union[int, np.random.Generator] = 0, hard: bool = False, connected: bool = False,
              source: int = 0, spread: int = CLOSE_SPREAD, max_attempts: int = 20) -> WeightedGraph:
    """ランダムグラフの生成

    Args:
        family: erdos_renyi, newman_watts_strogatz, d_regular, barabasi_albert
        size: ノード数
        params: 族のパラメータ（p, k, d, m）。省略したものは範囲内で一様に選ぶ
        seed: 乱数シード
        hard: 重みを近い値（幅 ``spread``）に揃える
        connected: 連結グラフを要求する。所定回数で得られなければ始点の連結成分に縮める
        source: 重みの桁あふれ検査に使う始点

    Returns:
        重みが8ビットに収まり、始点からの候補距離も255を超えないグラフ

    Raises:
        GraphError: パラメータが範囲外の場合
    """
    _require(size >= 1, f"Graph size must be positive: {size}", n=size)
    _require(0 <= source < size, f"Source {source} outside the graph", source=source, n=size)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = dict(params or {})

    structure, _ = _structure(family, size, params, rng)
    attempts = 1
    while connected and not nx.is_connected(structure) and attempts < max_attempts:
        structure, _ = _structure(family, size, params, rng)
        attempts += 1
    if connected and not nx.is_connected(structure):
        component = sorted(nx.node_connected_component(structure, source))
        mapping = {node: i for i, node in enumerate(component)}
        logger.debug("Falling back to the source component", details={
            'family': family, 'size': size, 'component': len(component)
        })
        structure = nx.relabel_nodes(structure.subgraph(component).copy(), mapping)
        source = mapping[source]

    edges = sorted((min(u, v), max(u, v)) for u, v in structure.edges())
    cap = MAX_WEIGHT
    while True:
        weights = _draw_weights(len(edges), cap, hard, spread, rng)
        for (u, v), w in zip(edges, weights):
            structure[u][v]['weight'] = int(w)
        if cap == 1 or _fits_number_system(structure, source):
            break
        cap //= 2

    return WeightedGraph(structure.number_of_nodes(),
                         tuple((u, v, int(structure[u][v]['weight'])) for u, v in edges))


def family_test_mix(size: int, per_family: int = 25, seed: int = 0, connected: bool = True) -> List[Tuple[str, WeightedGraph]]:
    """4つの族から同数ずつ生成したテスト用グラフ"""
    rng = np.random.default_rng(seed)
    graphs = []
    for family in FAMILIES:
        for _ in range(per_family):
            graphs.append((family, gen_graph(family, size, seed=rng, connected=connected)))
    return graphs


# ---------------------------------------------------------------------------
# オラクル
# ---------------------------------------------------------------------------

def shortest_distances(graph: WeightedGraph, source: int) -> List[Token]:
    """Bellman-Fordによる最短距離（到達不能は END）"""
    lengths = nx.single_source_bellman_ford_path_length(graph.to_networkx(), source)
    return [lengths.get(node, END) for node in range(graph.n)]


def spanning_tree_weight(edges: Iterable[Edge]) -> int:
    return int(sum(w for _, _, w in edges))


def is_spanning_tree(graph: WeightedGraph, edges: Iterable[Edge]) -> bool:
    """辺集合がグラフの全域木で、重みもグラフと一致するか"""
    edges = list(edges)
    if len(edges) != graph.n - 1:
        return False
    tree = nx.Graph()
    tree.add_nodes_from(range(graph.n))
    for u, v, w in edges:
        if graph.weight(u, v) != w:
            return False
        tree.add_edge(u, v)
    return nx.is_tree(tree)


def mst_weight_bruteforce(graph: WeightedGraph) -> int:
    """全ての n-1 辺部分集合を調べる最小全域木の重み（小さいグラフ用）

    Raises:
        GraphError: ノード数が多すぎる場合、またはグラフが非連結の場合
    """
    if graph.n > BRUTE_FORCE_MST_NODES:
        raise GraphError(
            f"Exhaustive MST search is limited to {BRUTE_FORCE_MST_NODES} nodes",
            {'n': graph.n}
        )
    best = None
    for subset in itertools.combinations(graph.edges, graph.n - 1):
        if is_spanning_tree(graph, subset):
            weight = spanning_tree_weight(subset)
            best = weight if best is None else min(best, weight)
    if best is None:
        raise GraphError("Graph has no spanning tree (disconnected)", {'n': graph.n})
    return best


def mst_weight(graph: WeightedGraph) -> int:
    """最小全域木の重み

    7ノード以下は全探索、それより大きい場合はnetworkxのKruskal法を使います。
    """
    if graph.n <= BRUTE_FORCE_MST_NODES:
        return mst_weight_bruteforce(graph)
    nx_graph = graph.to_networkx()
    if not nx.is_connected(nx_graph):
        raise GraphError("Graph has no spanning tree (disconnected)", {'n': graph.n})
    tree = nx.minimum_spanning_tree(nx_graph, algorithm='kruskal')
    return int(tree.size(weight='weight'))
