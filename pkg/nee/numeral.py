"""二進数の符号化とビット単位埋め込み

ビット順は最下位ビットが先頭（インデックスi ↔ 重み2^i）です。
開始トークンは数値0と同一視し、終端トークン ``END`` は ∞ として扱います
（すべての数より大きく、加算に対して吸収的）。

トークンコード:
- 数値 x はコード x
- 終端トークンはコード 2^width
"""

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple, Union

import numpy as np

from .errors import EncodingError, ShapeError


END = math.inf
MAX_WIDTH = 24

Token = Union[int, float]


def is_end(token: Token) -> bool:
    return token == END


def _check_width(width: int) -> None:
    if not isinstance(width, (int, np.integer)) or not 1 <= width <= MAX_WIDTH:
        raise EncodingError(f"Bit width must be in [1, {MAX_WIDTH}]: {width}", {'width': width})


@dataclass(frozen=True)
class BitWord:
    """n ビットの二進語、または終端トークン"""
    width: int
    bits: Tuple[int, ...]
    is_end: bool = False

    def __post_init__(self):
        _check_width(self.width)
        if len(self.bits) != self.width or any(b not in (0, 1) for b in self.bits):
            raise EncodingError(
                "BitWord bits must be width binary digits",
                {'width': self.width, 'bits': list(self.bits)}
            )

    @property
    def value(self) -> Token:
        return decode_bits(self)


def encode_uint(value: int, width: int) -> BitWord:
    """符号なし整数をLSB先頭のビット列に変換

    Raises:
        EncodingError: 値が [0, 2^width) の範囲外の場合
    """
    _check_width(width)
    if isinstance(value, float) and not value.is_integer():
        raise EncodingError(f"Only integers can be encoded: {value}", {'value': value})
    value = int(value)
    if not 0 <= value < (1 << width):
        raise EncodingError(
            f"Value {value} does not fit in {width} bits",
            {'value': value, 'width': width, 'max': (1 << width) - 1}
        )
    return BitWord(width, tuple((value >> i) & 1 for i in range(width)))


def end_token(width: int) -> BitWord:
    _check_width(width)
    return BitWord(width, (0,) * width, is_end=True)


def start_token(width: int) -> BitWord:
    """開始トークン（数値0と同一）"""
    return encode_uint(0, width)


def encode_token(token: Token, width: int) -> BitWord:
    return end_token(width) if is_end(token) else encode_uint(token, width)


def decode_bits(word: BitWord) -> Token:
    """ビット列を整数に戻す。終端トークンは ``END``"""
    if word.is_end:
        return END
    return sum(bit << i for i, bit in enumerate(word.bits))


def bits_matrix(tokens: Sequence[Token], width: int) -> Tuple[np.ndarray, np.ndarray]:
    """トークン列をビット行列と終端フラグに変換

    Returns:
        (L, width) の0/1行列と (L,) の終端フラグ。終端トークンの行は全て0
    """
    _check_width(width)
    bits = np.zeros((len(tokens), width), dtype=np.float64)
    ends = np.zeros(len(tokens), dtype=bool)
    for row, token in enumerate(tokens):
        if is_end(token):
            ends[row] = True
        else:
            bits[row] = encode_uint(token, width).bits
    return bits, ends


def token_code(token: Token, width: int) -> int:
    """トークンを [0, 2^width] の整数コードに変換"""
    if is_end(token):
        _check_width(width)
        return 1 << width
    return int(decode_bits(encode_uint(token, width)))


def token_from_code(code: int, width: int) -> Token:
    _check_width(width)
    code = int(code)
    if code == 1 << width:
        return END
    if not 0 <= code < (1 << width):
        raise EncodingError(f"Token code {code} outside the {width}-bit alphabet", {'code': code, 'width': width})
    return code


def one_hot_encode(value: int, alphabet_size: int = 257) -> np.ndarray:
    """指示ベクトルへの変換（256個の数値 + 終端トークン = 257）

    Raises:
        EncodingError: 値が [0, alphabet_size) の範囲外の場合
    """
    if alphabet_size < 1:
        raise EncodingError(f"Alphabet size must be positive: {alphabet_size}", {'alphabet_size': alphabet_size})
    if not 0 <= int(value) < alphabet_size or int(value) != value:
        raise EncodingError(
            f"Value {value} outside alphabet of size {alphabet_size}",
            {'value': value, 'alphabet_size': alphabet_size}
        )
    vector = np.zeros(alphabet_size, dtype=np.float64)
    vector[int(value)] = 1.0
    return vector


def tokens_to_str(tokens: Iterable[Token]) -> str:
    return '[' + ', '.join('e' if is_end(t) else str(int(t)) for t in tokens) + ']'


@dataclass(frozen=True)
class EmbeddingTable:
    """ビット単位埋め込み表

    emb(x) = Σ x_i · v_i 。終端トークンは専用のベクトルを持ちます。

    Attributes:
        bit_vectors: (width, d) のビットベクトル v_0..v_{n-1}
        end_vector: (d,) の終端トークンベクトル
    """
    bit_vectors: np.ndarray
    end_vector: np.ndarray

    def __post_init__(self):
        if self.bit_vectors.ndim != 2 or self.end_vector.shape != (self.bit_vectors.shape[1],):
            raise ShapeError(
                "Embedding vectors must all share dimension d",
                {'bit_vectors': list(self.bit_vectors.shape), 'end_vector': list(self.end_vector.shape)}
            )

    @property
    def width(self) -> int:
        return self.bit_vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.bit_vectors.shape[1]

    def number_embeddings(self) -> np.ndarray:
        """全ての数値 0..2^width-1 の埋め込み（行列積で一括計算）"""
        codes = np.arange(1 << self.width)
        bits = (codes[:, None] >> np.arange(self.width)[None, :]) & 1
        return bits.astype(np.float64) @ self.bit_vectors


def embed(word: BitWord, table: EmbeddingTable) -> np.ndarray:
    """1語の埋め込み

    Raises:
        ShapeError: 語のビット幅と表の幅が一致しない場合
    """
    if word.width != table.width:
        raise ShapeError(
            f"Word width {word.width} does not match embedding table width {table.width}",
            {'word_width': word.width, 'table_width': table.width}
        )
    if word.is_end:
        return table.end_vector.copy()
    vector = np.zeros(table.dim, dtype=np.float64)
    for i, bit in enumerate(word.bits):
        if bit:
            vector = vector + table.bit_vectors[i]
    return vector
