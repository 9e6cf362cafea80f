"""サブルーチンの正解規則

NEEが学習する各サブルーチン（最小値選択、マージ、加算、乗算）の厳密な
1ステップ規則と、トレースのデータ型を定義します。

規則はすべて ``rule(tokens, mask, width) -> StepOutcome`` の形をとり、
``OracleEngine`` でくるむと学習済みモデルと同じインターフェースで
合成アルゴリズムに差し込めます。
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import EncodingError, PreconditionError, ShapeError
from .numeral import END, Token, is_end


Mask = Tuple[int, ...]


@dataclass(frozen=True)
class StepOutcome:
    """1回の呼び出しの結果

    Attributes:
        value: 出力値（数値またはEND）
        pointer: 選ばれた入力位置（算術では None）
        next_mask: 次のマスク
        attention: ポインタ分布（学習済みモデルのみ）
    """
    value: Token
    pointer: Optional[int]
    next_mask: Mask
    attention: Optional[np.ndarray] = field(default=None, compare=False)


@dataclass(frozen=True)
class TraceStep:
    """教師付きの1ステップ"""
    tokens: Tuple[Token, ...]
    mask: Mask
    value: Token
    pointer: Optional[int]
    next_mask: Mask

    @property
    def terminal(self) -> bool:
        return is_end(self.value)

    def to_record(self) -> Dict[str, Any]:
        """JSON化できる辞書（ENDは ``"e"``）"""
        return {
            'tokens': [_token_to_json(t) for t in self.tokens],
            'mask': list(self.mask),
            'value': _token_to_json(self.value),
            'pointer': self.pointer,
            'next_mask': list(self.next_mask)
        }

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> 'TraceStep':
        return cls(
            tokens=tuple(_token_from_json(t) for t in record['tokens']),
            mask=tuple(int(b) for b in record['mask']),
            value=_token_from_json(record['value']),
            pointer=None if record['pointer'] is None else int(record['pointer']),
            next_mask=tuple(int(b) for b in record['next_mask'])
        )

    @classmethod
    def from_outcome(cls, tokens: Sequence[Token], mask: Sequence[int], outcome: StepOutcome) -> 'TraceStep':
        return cls(tuple(tokens), tuple(int(b) for b in mask), outcome.value, outcome.pointer,
                   tuple(outcome.next_mask))


@dataclass(frozen=True)
class TraceGroup:
    """グラフアルゴリズムの1反復に含まれる呼び出し群

    kind は ``select``（キューからの最小選択）, ``add``（候補距離の計算）,
    ``min``（要素ごとの最小）のいずれかです。
    """
    kind: str
    steps: Tuple[TraceStep, ...]
    nodes: Tuple[int, ...] = ()

    def to_record(self) -> Dict[str, Any]:
        return {'kind': self.kind, 'nodes': list(self.nodes), 'steps': [s.to_record() for s in self.steps]}

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> 'TraceGroup':
        return cls(record['kind'], tuple(TraceStep.from_record(s) for s in record['steps']),
                   tuple(int(n) for n in record['nodes']))


def _token_to_json(token: Token):
    return 'e' if is_end(token) else int(token)


def _token_from_json(value) -> Token:
    return END if value == 'e' else int(value)


def _check_lengths(tokens: Sequence[Token], mask: Sequence[int]) -> None:
    if len(tokens) != len(mask):
        raise ShapeError(
            "Mask length must equal the number of tokens",
            {'tokens': len(tokens), 'mask': len(mask)}
        )


def _min_unmasked(tokens: Sequence[Token], mask: Sequence[int]) -> int:
    candidates = [i for i, b in enumerate(mask) if not b]
    if not candidates:
        raise PreconditionError("All positions are masked; nothing to select", {'length': len(mask)})
    # min() は最初の最小値を返すので同値は小さいインデックス
    return min(candidates, key=lambda i: tokens[i])


def select_rule(tokens: Sequence[Token], mask: Sequence[int], width: int = 8) -> StepOutcome:
    """最小値選択（選択ソートの1ステップ）

    未マスク位置の最小値を選び、その位置をマスクします。
    最小値がENDなら終端で、マスクは変化しません。
    """
    _check_lengths(tokens, mask)
    pointer = _min_unmasked(tokens, mask)
    value = tokens[pointer]
    next_mask = list(mask)
    if not is_end(value):
        next_mask[pointer] = 1
    return StepOutcome(value, pointer, tuple(next_mask))


def merge_rule(tokens: Sequence[Token], mask: Sequence[int], width: int = 8) -> StepOutcome:
    """マージの1ステップ

    レイアウトは ``[seq1, e, seq2, e]`` で、各列の先頭だけが未マスクです。
    小さい方の先頭（同値はseq1）を出力し、その列の先頭を1つ進めます。
    両方の先頭がENDなら終端です。
    """
    _check_lengths(tokens, mask)
    pointer = _min_unmasked(tokens, mask)
    value = tokens[pointer]
    next_mask = list(mask)
    if not is_end(value):
        if pointer + 1 >= len(tokens):
            raise PreconditionError("Merge front is not followed by its sequence", {'pointer': pointer})
        next_mask[pointer] = 1
        next_mask[pointer + 1] = 0
    return StepOutcome(value, pointer, tuple(next_mask))


def merge_initial_mask(left_length: int, right_length: int) -> Mask:
    """マージの初期マスク（各列の先頭だけを考慮）

    長さ2の列2つなら ``(0, 1, 1, 0, 1, 1)``。
    """
    return (0,) + (1,) * left_length + (0,) + (1,) * right_length


def merge_layout(left: Sequence[Token], right: Sequence[Token]) -> Tuple[Tuple[Token, ...], Mask]:
    """``[left, e, right, e]`` のトークン列と初期マスク"""
    tokens = tuple(left) + (END,) + tuple(right) + (END,)
    return tokens, merge_initial_mask(len(left), len(right))


def _binary_operands(tokens: Sequence[Token], mask: Sequence[int]) -> Tuple[Token, Token]:
    _check_lengths(tokens, mask)
    if len(tokens) != 2:
        raise ShapeError("Arithmetic takes exactly two operands", {'tokens': len(tokens)})
    return tokens[0], tokens[1]


def add_rule(tokens: Sequence[Token], mask: Sequence[int], width: int = 8) -> StepOutcome:
    """加算（e + x = e）

    Raises:
        EncodingError: 和が出力ビット幅を超える場合
    """
    a, b = _binary_operands(tokens, mask)
    if is_end(a) or is_end(b):
        return StepOutcome(END, None, tuple(mask))
    total = int(a) + int(b)
    if total >= 1 << width:
        raise EncodingError(f"{a} + {b} overflows {width} bits", {'a': a, 'b': b, 'width': width})
    return StepOutcome(total, None, tuple(mask))


def multiply_rule(tokens: Sequence[Token], mask: Sequence[int], width: int = 24) -> StepOutcome:
    a, b = _binary_operands(tokens, mask)
    if is_end(a) or is_end(b):
        raise PreconditionError("Multiplication is undefined for the end token", {'a': str(a), 'b': str(b)})
    product = int(a) * int(b)
    if product >= 1 << width:
        raise EncodingError(f"{a} * {b} overflows {width} bits", {'a': a, 'b': b, 'width': width})
    return StepOutcome(product, None, tuple(mask))


Rule = Callable[[Sequence[Token], Sequence[int], int], StepOutcome]

RULES: Dict[str, Rule] = {
    'select': select_rule,
    'merge': merge_rule,
    'add': add_rule,
    'multiply': multiply_rule,
}


class OracleEngine:
    """厳密な規則をモデルと同じインターフェースで提供するエンジン

    Args:
        rule: 規則名（``RULES`` のキー）または規則関数
        width: 出力ビット幅
    """

    def __init__(self, rule, width: int = 8):
        if isinstance(rule, str):
            if rule not in RULES:
                raise PreconditionError(f"Unknown rule: {rule}", {'rule': rule, 'known': sorted(RULES)})
            rule = RULES[rule]
        self.rule = rule
        self.width = width

    def step(self, tokens: Sequence[Token], mask: Sequence[int]) -> StepOutcome:
        return self.rule(tokens, mask, self.width)

    def step_batch(self, tokens_list: Sequence[Sequence[Token]],
                   masks: Sequence[Sequence[int]]) -> List[StepOutcome]:
        return [self.step(tokens, mask) for tokens, mask in zip(tokens_list, masks)]
