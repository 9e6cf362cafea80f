"""実行トレースの生成と検証

各サブルーチンの正解規則を実行して、ステップごとの中間状態（入力、マスク、
正解の値・ポインタ・次のマスク）を教師データとして記録します。
``replay_*`` はトレースを厳密な規則で再実行し、記録された目標と食い違えば
``TraceError`` を送出する検証用インタプリタです。
"""

from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import Field

from .compose import compose_dijkstra, compose_prim
from .config import StrictConfig
from .errors import EncodingError, PreconditionError, TraceError
from .graphs import Edge, WeightedGraph
from .numeral import END, Token, is_end
from .rules import RULES, OracleEngine, TraceGroup, TraceStep, merge_layout


Seed = Union[int, np.random.Generator]

TRAINING_NUMBER_COUNTS = (256, 224, 192, 128, 89, 76, 64)


def _rng(seed: Seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# 数列の分布
# ---------------------------------------------------------------------------

class DistributionSpec(StrictConfig):
    """数列の分布

    - random: [0, 2^n) から一様
    - close: 基準値 u に [0, spread] のずれを足した近い数の列
    - mixed: 確率 close_fraction で close、それ以外は random
    """
    mode: Literal['random', 'close', 'mixed'] = 'mixed'
    spread: int = Field(8, ge=0)
    close_fraction: float = Field(0.05, ge=0.0, le=1.0)


TRAIN_MIX = DistributionSpec(mode='mixed', close_fraction=0.05)
TEST_MIX = DistributionSpec(mode='mixed', close_fraction=0.4)
RANDOM = DistributionSpec(mode='random', close_fraction=0.0)
HARD = DistributionSpec(mode='close', close_fraction=1.0)

TEST_MIXES: Dict[str, DistributionSpec] = {'mixed': TEST_MIX, 'random': RANDOM, 'hard': HARD}


def _close_sequence(rng: np.random.Generator, length: int, spread: int, width: int) -> List[int]:
    top = (1 << width) - 1
    spread = min(spread, top)
    base = int(rng.integers(0, top - spread + 1))
    if length <= spread + 1:
        # 連続値をシャッフルした形（重複なし）
        offsets = rng.permutation(spread + 1)[:length]
    else:
        offsets = rng.integers(0, spread + 1, size=length)
    return [base + int(o) for o in offsets]


def sample_sequence(spec: DistributionSpec, length: int, seed: Seed = 0, width: int = 8) -> List[int]:
    """分布に従う長さ ``length`` の数列

    同じシードからは常に同じ列が得られます。
    """
    if length < 1:
        raise PreconditionError(f"Sequence length must be positive: {length}", {'length': length})
    rng = _rng(seed)
    close = spec.mode == 'close' or (spec.mode == 'mixed' and rng.random() < spec.close_fraction)
    if close:
        return _close_sequence(rng, length, spec.spread, width)
    return [int(x) for x in rng.integers(0, 1 << width, size=length)]


def is_close_sequence(sequence: Sequence[int], spread: int = 8) -> bool:
    return max(sequence) - min(sequence) <= spread


# ---------------------------------------------------------------------------
# ソートとマージ
# ---------------------------------------------------------------------------

def _end_delimited(sequence: Sequence[Token]) -> Tuple[Token, ...]:
    tokens = tuple(sequence)
    if not tokens or not is_end(tokens[-1]):
        tokens = tokens + (END,)
    return tokens


def _run_rule(rule_name: str, tokens: Tuple[Token, ...], mask: Tuple[int, ...]) -> List[TraceStep]:
    rule = RULES[rule_name]
    steps = []
    # 各ステップで1位置がマスクされるので L+1 回で必ず終端する
    for _ in range(len(tokens) + 1):
        outcome = rule(tokens, mask)
        steps.append(TraceStep.from_outcome(tokens, mask, outcome))
        if is_end(outcome.value):
            return steps
        mask = outcome.next_mask
    raise TraceError(f"{rule_name} trace did not terminate", {'tokens': len(tokens)})


def gen_selection_sort_trace(sequence: Sequence[Token]) -> List[TraceStep]:
    """選択ソートのトレース

    k番目のステップは残りの最小値（同値は小さいインデックス）を指し、
    最後のステップは終端トークンを指します。末尾に ``END`` がなければ補います。

    Example:
        [5, 2, 7, e] → 値 2, 5, 7, e
    """
    tokens = _end_delimited(sequence)
    return _run_rule('select', tokens, (0,) * len(tokens))


def _check_sorted(name: str, sequence: Sequence[Token]) -> None:
    if any(a > b for a, b in zip(sequence, sequence[1:])):
        raise TraceError(f"Merge input {name} is not sorted", {'sequence': name, 'values': list(sequence)})


def gen_merge_trace(left: Sequence[int], right: Sequence[int]) -> List[TraceStep]:
    """マージのトレース（レイアウト ``[left, e, right, e]``）

    Raises:
        TraceError: 入力がソートされていない場合
    """
    _check_sorted('left', left)
    _check_sorted('right', right)
    tokens, mask = merge_layout(left, right)
    return _run_rule('merge', tokens, mask)


def replay_trace(steps: Sequence[TraceStep], rule: str = 'select') -> List[Token]:
    """トレースを厳密な規則で再実行し、出力された値を返す

    各ステップについて、マスクが直前のステップの次のマスクと一致すること、
    ポインタが未マスク位置を指すこと、記録された目標が規則の出力と一致することを検査します。

    Raises:
        TraceError: いずれかの検査に失敗した場合
    """
    outputs: List[Token] = []
    previous_mask = None
    for index, step in enumerate(steps):
        if previous_mask is not None and tuple(step.mask) != tuple(previous_mask):
            raise TraceError("Step mask does not continue the previous step", {'step': index})
        if step.pointer is not None and step.mask[step.pointer]:
            raise TraceError("Target pointer indexes a masked position", {'step': index, 'pointer': step.pointer})
        expected = RULES[rule](step.tokens, step.mask)
        if (expected.value, expected.pointer, tuple(expected.next_mask)) != \
                (step.value, step.pointer, tuple(step.next_mask)):
            raise TraceError("Recorded target differs from the exact rule", {
                'step': index,
                'expected': TraceStep.from_outcome(step.tokens, step.mask, expected).to_record(),
                'recorded': step.to_record()
            })
        if step.terminal:
            if index != len(steps) - 1:
                raise TraceError("Terminal step is not the last step", {'step': index})
            return outputs
        outputs.append(step.value)
        previous_mask = step.next_mask
    raise TraceError("Trace has no terminal step", {'steps': len(steps)})


# ---------------------------------------------------------------------------
# 算術
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ArithmeticData:
    """算術の学習・評価データ

    Attributes:
        train: 保留数を含まないペア（加算は終端ペアを含む）
        eval_unseen_pairs: 学習数同士だが学習に使わなかったペア
        eval_unseen_numbers: 保留数を少なくとも1つ含むペア
        training_numbers: 学習に使った数
    """
    op: str
    width: int
    train: Tuple[TraceStep, ...]
    eval_unseen_pairs: Tuple[TraceStep, ...]
    eval_unseen_numbers: Tuple[TraceStep, ...]
    training_numbers: Tuple[int, ...]


def arithmetic_step(op: str, a: Token, b: Token, width: Optional[int] = None) -> TraceStep:
    rule = RULES[op]
    outcome = rule((a, b), (0, 0), width or (8 if op == 'add' else 24))
    return TraceStep.from_outcome((a, b), (0, 0), outcome)


def _operand_width(op: str, width: Optional[int]) -> int:
    if op not in ('add', 'multiply'):
        raise PreconditionError(f"Unknown arithmetic operation: {op}", {'op': op})
    return width or (8 if op == 'add' else 12)


def _pairs(op: str, numbers: np.ndarray, others: np.ndarray, out_width: int) -> np.ndarray:
    a, b = np.meshgrid(numbers, others, indexing='ij')
    result = a * b if op == 'multiply' else a + b
    keep = result < (1 << out_width)
    return np.stack([a[keep], b[keep]], axis=1)


def _sample_pairs(rng: np.random.Generator, left: np.ndarray, right: np.ndarray, op: str,
                  out_width: int, count: int) -> np.ndarray:
    a = rng.choice(left, size=count)
    b = rng.choice(right, size=count)
    result = a * b if op == 'multiply' else a + b
    keep = result < (1 << out_width)
    return np.stack([a[keep], b[keep]], axis=1)


def gen_arithmetic_pairs(op: str, width: Optional[int] = None, holdout: Iterable[int] = (), seed: Seed = 0,
                         train_fraction: float = 0.9, samples: Optional[int] = None) -> ArithmeticData:
    """加算・乗算のデータセット

    加算は8ビット（和が8ビットを超えるペアは除外）、乗算は12ビットの被演算子で
    出力は24ビットです。加算には ``e + x = e`` のペアも含めます。

    Args:
        op: ``add`` または ``multiply``
        width: 被演算子のビット幅（省略時は加算8、乗算12）
        holdout: 学習に使わない数
        seed: 乱数シード
        train_fraction: 学習数同士のペアのうち学習に使う割合
        samples: 指定するとペアを全列挙せず、この数だけ抽出（乗算の既定は50000）

    Raises:
        TraceError: 保留数が多すぎて学習数が2つ未満になる場合
        EncodingError: 保留数が範囲外の場合
    """
    width = _operand_width(op, width)
    out_width = width if op == 'add' else 2 * width
    rng = _rng(seed)
    universe = 1 << width
    holdout = sorted({int(x) for x in holdout})
    if any(not 0 <= x < universe for x in holdout):
        raise EncodingError(f"Held-out numbers must lie in [0, {universe})", {'holdout': holdout})
    held = np.array(holdout, dtype=np.int64)
    training = np.setdiff1d(np.arange(universe), held)
    if len(training) < 2:
        raise TraceError(
            "Holdout leaves fewer than two training numbers",
            {'holdout': len(holdout), 'width': width}
        )
    if samples is None and op == 'multiply':
        samples = 50000

    if samples is None:
        seen = _pairs(op, training, training, out_width)
        unseen = np.concatenate([_pairs(op, held, np.arange(universe), out_width),
                                 _pairs(op, training, held, out_width)]) if len(held) else np.zeros((0, 2), int)
    else:
        seen = np.unique(_sample_pairs(rng, training, training, op, out_width, samples), axis=0)
        if len(held):
            unseen = np.concatenate([
                _sample_pairs(rng, held, np.arange(universe), op, out_width, samples // 4),
                _sample_pairs(rng, training, held, op, out_width, samples // 4),
            ])
        else:
            unseen = np.zeros((0, 2), int)

    order = rng.permutation(len(seen))
    cut = max(1, int(round(train_fraction * len(seen))))
    train_pairs, eval_pairs = seen[order[:cut]], seen[order[cut:]]

    def steps(pairs) -> Tuple[TraceStep, ...]:
        return tuple(arithmetic_step(op, int(a), int(b), out_width) for a, b in pairs)

    train = steps(train_pairs)
    if op == 'add':
        ends = [arithmetic_step(op, END, int(x), out_width) for x in training]
        ends += [arithmetic_step(op, int(x), END, out_width) for x in training]
        ends.append(arithmetic_step(op, END, END, out_width))
        train = train + tuple(ends)
    return ArithmeticData(op, width, train, steps(eval_pairs), steps(unseen),
                          tuple(int(x) for x in training))


def holdout_for_training_count(count: int, width: int = 8, seed: Seed = 0) -> FrozenSet[int]:
    """学習に使う数が ``count`` 個になるように保留する数を選ぶ（0は常に学習側）"""
    universe = 1 << width
    if not 2 <= count <= universe:
        raise TraceError(f"Training number count must lie in [2, {universe}]: {count}", {'count': count})
    rng = _rng(seed)
    kept = rng.choice(np.arange(1, universe), size=count - 1, replace=False)
    return frozenset(int(x) for x in np.setdiff1d(np.arange(1, universe), kept))


# ---------------------------------------------------------------------------
# グラフ
# ---------------------------------------------------------------------------

def gen_dijkstra_trace(graph: WeightedGraph, source: int = 0) -> List[TraceGroup]:
    """ダイクストラ法のトレース

    反復ごとにキューからの最小選択（select）、隣接ノードの候補距離（add）、
    要素ごとの最小（min）の呼び出し群を記録します。最後は終端した select です。
    """
    groups: List[TraceGroup] = []
    compose_dijkstra(OracleEngine('select'), OracleEngine('add'), graph, source, on_group=groups.append)
    return groups


def gen_prim_trace(graph: WeightedGraph, root: int = 0) -> List[TraceGroup]:
    """プリム法のトレース（select と キー更新の min）

    Raises:
        TraceError: グラフが非連結の場合
    """
    if not graph.is_connected():
        raise TraceError("Prim traces need a connected graph", {'n': graph.n, 'edges': len(graph.edges)})
    groups: List[TraceGroup] = []
    compose_prim(OracleEngine('select'), graph, root, on_group=groups.append)
    return groups


def graph_training_steps(groups: Iterable[TraceGroup], kinds: Tuple[str, ...] = ('select', 'min')) -> List[TraceStep]:
    """最小値NEEの学習に使うステップ（select と min の呼び出し）"""
    return [step for group in groups if group.kind in kinds for step in group.steps]


def _verify_step(step: TraceStep, rule: str, context: Dict) -> None:
    width = 8
    try:
        expected = RULES[rule](step.tokens, step.mask, width)
    except (EncodingError, PreconditionError) as e:
        raise TraceError(f"Trace step is invalid for {rule}: {e.message}", context)
    if (expected.value, expected.pointer, tuple(expected.next_mask)) != \
            (step.value, step.pointer, tuple(step.next_mask)):
        raise TraceError(f"Recorded {rule} target differs from the exact rule", context)


def _verify_select(group: TraceGroup, values: List[Token], visited: List[int], index: int) -> TraceStep:
    if len(group.steps) != 1:
        raise TraceError("Select group must contain one step", {'group': index})
    step = group.steps[0]
    if step.tokens != tuple(values) + (END,) or step.mask != tuple(visited) + (0,):
        raise TraceError("Select inputs do not match the replayed state", {'group': index})
    _verify_step(step, 'select', {'group': index})
    return step


def replay_dijkstra(groups: Sequence[TraceGroup], n: int, source: int = 0) -> List[Token]:
    """ダイクストラ法のトレースを再実行して距離を返す

    Raises:
        TraceError: トレースが状態と矛盾する場合
    """
    dist: List[Token] = [END] * n
    dist[source] = 0
    visited = [0] * n
    u = None
    candidates: Dict[int, Token] = {}
    for index, group in enumerate(groups):
        if group.kind == 'select':
            step = _verify_select(group, dist, visited, index)
            if step.terminal:
                if index != len(groups) - 1:
                    raise TraceError("Terminal select is not the last group", {'group': index})
                return dist
            u = step.pointer
            visited = list(step.next_mask[:n])
            candidates = {}
        elif group.kind == 'add':
            for v, step in zip(group.nodes, group.steps):
                if u is None or step.tokens[0] != dist[u]:
                    raise TraceError("Addition does not start from the selected distance", {'group': index})
                _verify_step(step, 'add', {'group': index, 'node': v})
                candidates[v] = step.value
        elif group.kind == 'min':
            for v, step in zip(group.nodes, group.steps):
                if step.tokens != (dist[v], candidates.get(v), END):
                    raise TraceError("Minimum inputs do not match the replayed state", {'group': index, 'node': v})
                _verify_step(step, 'select', {'group': index, 'node': v})
                dist[v] = step.value
        else:
            raise TraceError(f"Unknown group kind: {group.kind}", {'group': index})
    raise TraceError("Dijkstra trace has no terminal select", {'groups': len(groups)})


def replay_prim(groups: Sequence[TraceGroup], n: int, root: int = 0) -> FrozenSet[Edge]:
    """プリム法のトレースを再実行して全域木の辺を返す"""
    key: List[Token] = [END] * n
    key[root] = 0
    parent: List[Optional[int]] = [None] * n
    visited = [0] * n
    edges = set()
    u = None
    for index, group in enumerate(groups):
        if group.kind == 'select':
            step = _verify_select(group, key, visited, index)
            if step.terminal:
                if index != len(groups) - 1:
                    raise TraceError("Terminal select is not the last group", {'group': index})
                return frozenset(edges)
            u = step.pointer
            visited = list(step.next_mask[:n])
            if parent[u] is not None:
                edges.add((min(u, parent[u]), max(u, parent[u]), step.value))
        elif group.kind == 'min':
            for v, step in zip(group.nodes, group.steps):
                if step.tokens[0] != key[v] or visited[v]:
                    raise TraceError("Key update does not match the replayed state", {'group': index, 'node': v})
                _verify_step(step, 'select', {'group': index, 'node': v})
                key[v] = step.value
                if step.pointer == 1:
                    parent[v] = u
        else:
            raise TraceError(f"Unexpected group kind in a Prim trace: {group.kind}", {'group': index})
    raise TraceError("Prim trace has no terminal select", {'groups': len(groups)})
