"""学習済みサブルーチンを合成したグラフ・ソートアルゴリズム

制御フローはホスト側のPythonで書き、最小値選択・加算・マージの各ステップは
``step_batch(tokens_list, masks)`` を持つエンジンに委ねます。エンジンには
学習済みの ``NEEModel`` と厳密な ``OracleEngine`` のどちらも渡せます。

グラフアルゴリズムでは未探索の距離（キー）を終端トークン ``END`` = ∞ で表し、
選択の入力には番兵として末尾に ``END`` を1つ置きます。番兵が選ばれたら
（値が ``END`` なら）キューは空とみなします。
"""

from typing import Callable, FrozenSet, List, Optional, Sequence

from .errors import GraphError, NonTerminationError
from .graphs import Edge, WeightedGraph
from .logging import get_logger
from .model import nee_run
from .numeral import END, Token, is_end
from .rules import StepOutcome, TraceGroup, TraceStep, merge_layout


GroupCallback = Callable[[TraceGroup], None]

logger = get_logger('nee.compose')


def _steps(tokens_list, masks, outcomes: Sequence[StepOutcome]) -> tuple:
    return tuple(TraceStep.from_outcome(t, m, o) for t, m, o in zip(tokens_list, masks, outcomes))


def _emit(on_group: Optional[GroupCallback], kind: str, tokens_list, masks, outcomes, nodes=()) -> None:
    if on_group is not None and outcomes:
        on_group(TraceGroup(kind, _steps(tokens_list, masks, outcomes), tuple(nodes)))


def _select(engine, values: List[Token], visited: List[int], on_group: Optional[GroupCallback]) -> StepOutcome:
    tokens = tuple(values) + (END,)
    mask = tuple(visited) + (0,)
    outcome = engine.step_batch([tokens], [mask])[0]
    nodes = () if is_end(outcome.value) or outcome.pointer >= len(values) else (outcome.pointer,)
    _emit(on_group, 'select', [tokens], [mask], [outcome], nodes)
    return outcome


def _elementwise_min(engine, current: List[Token], candidates: List[Token], nodes: List[int],
                     on_group: Optional[GroupCallback]) -> List[StepOutcome]:
    tokens_list = [(a, b, END) for a, b in zip(current, candidates)]
    masks = [(0, 0, 0)] * len(tokens_list)
    outcomes = engine.step_batch(tokens_list, masks)
    _emit(on_group, 'min', tokens_list, masks, outcomes, nodes)
    return outcomes


def _budget_exceeded(algorithm: str, budget: int, **details) -> NonTerminationError:
    return NonTerminationError(
        f"{algorithm} did not finish within {budget} selections",
        {'algorithm': algorithm, 'budget': budget, **details}
    )


def compose_dijkstra(min_engine, add_engine, graph: WeightedGraph, source: int,
                     on_group: Optional[GroupCallback] = None, budget: Optional[int] = None) -> List[Token]:
    """NEEを合成したダイクストラ法

    1. 始点の距離を0、それ以外を ∞ で初期化
    2. 未訪問ノードから最小距離のノード u を選び（選択エンジン）、訪問済みにする
    3. 未訪問の隣接ノード v について dist[u] + w(u, v) を計算（加算エンジン）
    4. dist[v] と候補の要素ごとの最小をとる（選択エンジン）

    Args:
        min_engine: 最小値選択のエンジン
        add_engine: 加算のエンジン
        graph: 重み付きグラフ
        source: 始点
        on_group: 各呼び出し群（select, add, min）を受け取るコールバック
        budget: 選択回数の上限（省略時は 2·(n+1)）

    Returns:
        各ノードへの距離（到達不能は END）

    Raises:
        GraphError: 始点がグラフ外の場合
        NonTerminationError: 予算内にキューが空にならなかった場合
    """
    n = graph.n
    if not 0 <= source < n:
        raise GraphError(f"Source {source} outside the graph", {'source': source, 'n': n})
    budget = 2 * (n + 1) if budget is None else budget
    dist: List[Token] = [END] * n
    dist[source] = 0
    visited = [0] * n

    for _ in range(budget):
        chosen = _select(min_engine, dist, visited, on_group)
        if is_end(chosen.value) or chosen.pointer >= n:
            return dist
        u = chosen.pointer
        visited = [int(b) for b in chosen.next_mask[:n]]
        visited[u] = 1

        neighbors = [(v, w) for v, w in graph.neighbors(u) if not visited[v]]
        if not neighbors:
            continue
        nodes = [v for v, _ in neighbors]
        add_inputs = [(dist[u], w) for _, w in neighbors]
        add_masks = [(0, 0)] * len(add_inputs)
        sums = add_engine.step_batch(add_inputs, add_masks)
        _emit(on_group, 'add', add_inputs, add_masks, sums, nodes)

        updated = _elementwise_min(min_engine, [dist[v] for v in nodes], [s.value for s in sums], nodes, on_group)
        for v, outcome in zip(nodes, updated):
            dist[v] = outcome.value

    raise _budget_exceeded('dijkstra', budget, n=n, visited=sum(visited))


def compose_prim(min_engine, graph: WeightedGraph, root: int = 0,
                 on_group: Optional[GroupCallback] = None, budget: Optional[int] = None) -> FrozenSet[Edge]:
    """NEEを合成したプリム法

    キー（木への最小接続重み）の最小選択と、隣接ノードのキー更新
    ``min(key[v], w(u, v))`` をいずれも選択エンジンで行います。
    キー更新でポインタが候補側（位置1）を指したら v の親を u にします。

    Returns:
        全域木の辺 (min(u,v), max(u,v), 重み) の集合。重みは選択エンジンが出力した値

    Raises:
        GraphError: グラフが非連結、または根がグラフ外の場合
        NonTerminationError: 予算切れ、または全ノードを訪問する前に選択が終端した場合
    """
    n = graph.n
    if not 0 <= root < n:
        raise GraphError(f"Root {root} outside the graph", {'root': root, 'n': n})
    if not graph.is_connected():
        raise GraphError("Prim's algorithm needs a connected graph", {'n': n})
    budget = 2 * (n + 1) if budget is None else budget
    key: List[Token] = [END] * n
    key[root] = 0
    parent: List[Optional[int]] = [None] * n
    visited = [0] * n
    edges = set()

    for _ in range(budget):
        chosen = _select(min_engine, key, visited, on_group)
        if is_end(chosen.value) or chosen.pointer >= n:
            if sum(visited) < n:
                raise NonTerminationError(
                    "Selection ended before every node joined the tree",
                    {'algorithm': 'prim', 'visited': sum(visited), 'n': n}
                )
            return frozenset(edges)
        u = chosen.pointer
        visited = [int(b) for b in chosen.next_mask[:n]]
        visited[u] = 1
        if parent[u] is not None:
            edges.add((min(u, parent[u]), max(u, parent[u]), chosen.value))

        neighbors = [(v, w) for v, w in graph.neighbors(u) if not visited[v]]
        if not neighbors:
            continue
        nodes = [v for v, _ in neighbors]
        updated = _elementwise_min(min_engine, [key[v] for v in nodes], [w for _, w in neighbors], nodes, on_group)
        for v, outcome in zip(nodes, updated):
            key[v] = outcome.value
            if outcome.pointer == 1:
                parent[v] = u

    raise _budget_exceeded('prim', budget, n=n, visited=sum(visited))


def compose_merge_sort(merge_engine, sequence: Sequence[Token], budget: Optional[int] = None) -> List[Token]:
    """NEEを合成したマージソート

    ホストが列を半分に分割し続け、全てのマージをマージエンジンが行います。

    Args:
        merge_engine: マージのエンジン
        sequence: ソートする列
        budget: 1回のマージのステップ予算（省略時は 2·L）

    Raises:
        NonTerminationError: いずれかのマージが予算内に終端しなかった場合
    """
    sequence = list(sequence)
    if len(sequence) <= 1:
        return sequence
    middle = len(sequence) // 2
    left = compose_merge_sort(merge_engine, sequence[:middle], budget)
    right = compose_merge_sort(merge_engine, sequence[middle:], budget)
    tokens, mask = merge_layout(left, right)
    return nee_run(merge_engine, tokens, mask, budget)
