"""数値計算コア

64ビット浮動小数点の密テンソル、逆伝播用の計算テープ、Adam最適化と
ウォームアップ付き学習率スケジュールを提供します。

使い方::

    with Tape() as tape:
        w = Tensor(values, requires_grad=True)
        loss = sum_(mul(w, w))
    grads = backward(tape, loss)

テンソルは生成後に変更できません（内部配列は書き込み禁止）。
テープはスレッドローカルなスタックで管理されるため、推論は複数スレッドから
同じパラメータを共有して実行できます。
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import NonDifferentiableError, NumericsError, PreconditionError, ShapeError


DTYPE = np.float64
LAYER_NORM_EPS = 1e-8

Backward = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
ArrayLike = Union[np.ndarray, float, int, Sequence[Any]]


class Tensor:
    """不変の密テンソル

    同一性でハッシュされるため、勾配辞書のキーとして使えます。
    """

    __slots__ = ('_value', 'requires_grad', 'name', '__weakref__')
    __array_priority__ = 1000

    def __init__(self, value: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        array = np.array(value, dtype=DTYPE)
        array.setflags(write=False)
        self._value = array
        self.requires_grad = bool(requires_grad)
        self.name = name

    @classmethod
    def _wrap(cls, array: np.ndarray, requires_grad: bool) -> 'Tensor':
        tensor = cls.__new__(cls)
        if array.dtype != DTYPE:
            array = array.astype(DTYPE)
        if array.flags.writeable:
            array.setflags(write=False)
        tensor._value = array
        tensor.requires_grad = requires_grad
        tensor.name = None
        return tensor

    @property
    def value(self) -> np.ndarray:
        return self._value

    @property
    def shape(self) -> Tuple[int, ...]:
        return self._value.shape

    @property
    def ndim(self) -> int:
        return self._value.ndim

    @property
    def size(self) -> int:
        return self._value.size

    def numpy(self) -> np.ndarray:
        return self._value

    def item(self) -> float:
        return float(self._value)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ''
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(other, self)

    def __truediv__(self, other):
        if not isinstance(other, (int, float)):
            raise ShapeError("Tensors can only be divided by a scalar constant", {'type': type(other).__name__})
        return scale(self, 1.0 / other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    """テンソルでなければ定数テンソルに変換"""
    return value if isinstance(value, Tensor) else Tensor(value)


@dataclass(frozen=True)
class TapeNode:
    """テープに記録された1回のプリミティブ呼び出し"""
    kind: str
    operands: Tuple[Tensor, ...]
    result: Optional[Tensor]
    backward: Optional[Backward]
    differentiable: bool = True


class Tape:
    """計算テープ

    with文の内側で実行された、勾配を必要とするプリミティブを実行順に記録します。
    """

    def __init__(self):
        self.nodes: List[TapeNode] = []

    def record(self, node: TapeNode) -> None:
        self.nodes.append(node)

    @property
    def has_hard_decisions(self) -> bool:
        return any(not node.differentiable for node in self.nodes)

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> 'Tape':
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False


_local = threading.local()


def _tape_stack() -> List[Tape]:
    if not hasattr(_local, 'tapes'):
        _local.tapes = []
    return _local.tapes


def active_tape() -> Optional[Tape]:
    stack = _tape_stack()
    return stack[-1] if stack else None


_PRIMITIVES: Dict[str, Callable[..., Tuple[np.ndarray, Backward]]] = {}


def _primitive(kind: str):
    def register(fn):
        _PRIMITIVES[kind] = fn
        return fn
    return register


def primitive_kinds() -> Tuple[str, ...]:
    return tuple(sorted(_PRIMITIVES))


def forward_primitive(kind: str, *operands: Union[Tensor, ArrayLike], **attrs: Any) -> Tensor:
    """プリミティブの順伝播

    Args:
        kind: プリミティブ名（matmul, add, softmax, conv1d, ...）
        *operands: 入力テンソル
        **attrs: テンソル以外の属性（マスク、軸、ターゲットなど）

    Returns:
        結果テンソル。アクティブなテープがあり、入力のどれかが勾配を必要とする場合は
        テープに記録され、結果も勾配を必要とします。

    Raises:
        NumericsError: 未知のプリミティブ、または非有限値が生じた場合
        ShapeError: 入力形状が不正な場合
    """
    try:
        impl = _PRIMITIVES[kind]
    except KeyError:
        raise NumericsError(f"Unknown primitive: {kind}", {'kind': kind, 'known': primitive_kinds()})

    tensors = tuple(as_tensor(op) for op in operands)
    out, backward_fn = impl(*(t.value for t in tensors), **attrs)
    out = np.asarray(out, dtype=DTYPE)

    if not np.all(np.isfinite(out)):
        raise NumericsError(
            f"Non-finite values produced by {kind}",
            {
                'kind': kind,
                'shape': list(out.shape),
                'nan_count': int(np.isnan(out).sum()),
                'inf_count': int(np.isinf(out).sum()),
                'operand_shapes': [list(t.shape) for t in tensors]
            }
        )

    tape = active_tape()
    requires = tape is not None and any(t.requires_grad for t in tensors)
    result = Tensor._wrap(out, requires)
    if requires:
        tape.record(TapeNode(kind, tensors, result, backward_fn))
    return result


def _shape_error(kind: str, message: str, *shapes) -> ShapeError:
    return ShapeError(f"{kind}: {message}", {'kind': kind, 'shapes': [list(s) for s in shapes]})


def _broadcast_shape(kind: str, *shapes: Tuple[int, ...]) -> Tuple[int, ...]:
    try:
        return tuple(np.broadcast_shapes(*shapes))
    except ValueError:
        raise _shape_error(kind, "operand shapes cannot be broadcast", *shapes)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """ブロードキャストされた勾配を元の形状に畳み込む"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


def _ignored_mask(kind: str, mask: Optional[Any], shape: Tuple[int, ...]) -> Optional[np.ndarray]:
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=bool)
    try:
        return np.broadcast_to(mask, shape)
    except ValueError:
        raise _shape_error(kind, "mask cannot be broadcast to the operand", mask.shape, shape)


# ---------------------------------------------------------------------------
# プリミティブ
# ---------------------------------------------------------------------------

@_primitive('matmul')
def _matmul(a, b):
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise _shape_error('matmul', "inner dimensions do not agree", a.shape, b.shape)
    _broadcast_shape('matmul', a.shape[:-2], b.shape[:-2])
    out = np.matmul(a, b)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b, -1, -2))
        gb = np.matmul(np.swapaxes(a, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return out, backward


@_primitive('add')
def _add(a, b):
    _broadcast_shape('add', a.shape, b.shape)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return a + b, backward


@_primitive('sub')
def _sub(a, b):
    _broadcast_shape('sub', a.shape, b.shape)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return a - b, backward


@_primitive('mul')
def _mul(a, b):
    _broadcast_shape('mul', a.shape, b.shape)

    def backward(g):
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

    return a * b, backward


@_primitive('scale')
def _scale(a, factor: float):
    factor = float(factor)

    def backward(g):
        return (g * factor,)

    return a * factor, backward


@_primitive('concat')
def _concat(*arrays, axis: int = -1):
    try:
        out = np.concatenate(arrays, axis=axis)
    except ValueError:
        raise _shape_error('concat', "operands do not agree off the concatenation axis",
                           *(a.shape for a in arrays))
    boundaries = np.cumsum([a.shape[axis] for a in arrays])[:-1]

    def backward(g):
        return tuple(np.split(g, boundaries, axis=axis))

    return out, backward


@_primitive('reshape')
def _reshape(a, shape: Tuple[int, ...]):
    try:
        out = a.reshape(shape)
    except ValueError:
        raise _shape_error('reshape', "element count changes", a.shape, tuple(shape))

    def backward(g):
        return (g.reshape(a.shape),)

    return out, backward


@_primitive('transpose')
def _transpose(a, axes: Tuple[int, ...]):
    if sorted(axes) != list(range(a.ndim)):
        raise _shape_error('transpose', f"invalid axes {tuple(axes)}", a.shape)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inverse),)

    return np.transpose(a, axes), backward


@_primitive('take')
def _take(a, index):
    if a.ndim == 0:
        raise _shape_error('take', "cannot index a scalar", a.shape)
    index_array = np.asarray(index)
    if index_array.size and (index_array.min() < -a.shape[0] or index_array.max() >= a.shape[0]):
        raise _shape_error('take', f"index out of range for leading extent {a.shape[0]}", a.shape)

    def backward(g):
        grad = np.zeros(a.shape, dtype=DTYPE)
        np.add.at(grad, index, g)
        return (grad,)

    return a[index], backward


@_primitive('broadcast_to')
def _broadcast_to(a, shape: Tuple[int, ...]):
    try:
        out = np.broadcast_to(a, tuple(shape))
    except ValueError:
        raise _shape_error('broadcast_to', "operand cannot be broadcast", a.shape, tuple(shape))

    def backward(g):
        return (_unbroadcast(g, a.shape),)

    return out, backward


@_primitive('softmax')
def _softmax(x, mask=None):
    if x.ndim == 0:
        raise _shape_error('softmax', "softmax needs at least one axis", x.shape)
    ignored = _ignored_mask('softmax', mask, x.shape)
    if ignored is not None:
        if np.any(np.all(ignored, axis=-1)):
            raise PreconditionError(
                "softmax over a fully masked row (nothing to attend to)",
                {'shape': list(x.shape)}
            )
        x = np.where(ignored, -np.inf, x)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return s, backward


@_primitive('sigmoid')
def _sigmoid(x):
    s = _stable_sigmoid(x)

    def backward(g):
        return (g * s * (1.0 - s),)

    return s, backward


@_primitive('relu')
def _relu(x):
    active = x > 0

    def backward(g):
        return (g * active,)

    return np.where(active, x, 0.0), backward


@_primitive('tanh')
def _tanh(x):
    t = np.tanh(x)

    def backward(g):
        return (g * (1.0 - t * t),)

    return t, backward


@_primitive('layer_norm')
def _layer_norm(x, gamma, beta, eps: float = LAYER_NORM_EPS):
    features = x.shape[-1] if x.ndim else 0
    if x.ndim == 0 or gamma.shape != (features,) or beta.shape != (features,):
        raise _shape_error('layer_norm', "scale/shift must match the last axis", x.shape, gamma.shape, beta.shape)
    centered = x - x.mean(axis=-1, keepdims=True)
    variance = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(variance + eps)
    normed = centered * inv_std
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        g_normed = g * gamma
        gx = inv_std * (
            g_normed
            - g_normed.mean(axis=-1, keepdims=True)
            - normed * (g_normed * normed).mean(axis=-1, keepdims=True)
        )
        return gx, (g * normed).sum(axis=lead), g.sum(axis=lead)

    return normed * gamma + beta, backward


@_primitive('conv1d')
def _conv1d(x, kernel):
    # x: (..., L, Cin), kernel: (K, Cin, Cout), ゼロ埋めの "same" 畳み込み（相互相関）
    if kernel.ndim != 3 or x.ndim < 2 or x.shape[-1] != kernel.shape[1] or kernel.shape[0] % 2 == 0:
        raise _shape_error('conv1d', "expected (..., L, Cin) input and odd (K, Cin, Cout) kernel",
                           x.shape, kernel.shape)
    width, channels_in, channels_out = kernel.shape
    length = x.shape[-2]
    pad = width // 2
    padded = np.pad(x, [(0, 0)] * (x.ndim - 2) + [(pad, pad), (0, 0)])
    columns = np.stack([padded[..., k:k + length, :] for k in range(width)], axis=-2)
    flat_columns = columns.reshape(-1, width * channels_in)
    flat_kernel = kernel.reshape(width * channels_in, channels_out)
    out = (flat_columns @ flat_kernel).reshape(x.shape[:-1] + (channels_out,))

    def backward(g):
        flat_g = g.reshape(-1, channels_out)
        g_kernel = (flat_columns.T @ flat_g).reshape(kernel.shape)
        g_columns = (flat_g @ flat_kernel.T).reshape(columns.shape)
        g_padded = np.zeros(padded.shape, dtype=DTYPE)
        for k in range(width):
            g_padded[..., k:k + length, :] += g_columns[..., k, :]
        return g_padded[..., pad:pad + length, :], g_kernel

    return out, backward


@_primitive('dropout')
def _dropout(x, keep, rate: float):
    keep = np.asarray(keep, dtype=bool)
    if keep.shape != x.shape:
        raise _shape_error('dropout', "keep mask must match the operand", x.shape, keep.shape)
    factor = keep / (1.0 - rate)

    def backward(g):
        return (g * factor,)

    return x * factor, backward


@_primitive('sum')
def _sum(x):
    def backward(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return np.array(x.sum()), backward


@_primitive('mean')
def _mean(x):
    count = max(x.size, 1)

    def backward(g):
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return np.array(x.sum() / count), backward


@_primitive('sigmoid_cross_entropy')
def _sigmoid_cross_entropy(logits, targets, weights=None):
    targets = np.asarray(targets, dtype=DTYPE)
    if targets.shape != logits.shape:
        raise _shape_error('sigmoid_cross_entropy', "targets must match logits", logits.shape, targets.shape)
    weights = np.ones(logits.shape) if weights is None else np.broadcast_to(np.asarray(weights, dtype=DTYPE), logits.shape)
    per_element = np.logaddexp(0.0, logits) - targets * logits

    def backward(g):
        return (g * weights * (_stable_sigmoid(logits) - targets),)

    return np.array((weights * per_element).sum()), backward


@_primitive('softmax_cross_entropy')
def _softmax_cross_entropy(logits, targets, mask=None, weights=None):
    if logits.ndim == 0:
        raise _shape_error('softmax_cross_entropy', "logits need a class axis", logits.shape)
    targets = np.asarray(targets, dtype=np.int64)
    classes = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise _shape_error('softmax_cross_entropy', "one target per row expected", logits.shape, targets.shape)
    if targets.size and (targets.min() < 0 or targets.max() >= classes):
        raise _shape_error('softmax_cross_entropy', f"target index outside [0, {classes})", logits.shape, targets.shape)
    weights = np.ones(targets.shape) if weights is None else np.broadcast_to(np.asarray(weights, dtype=DTYPE), targets.shape)

    ignored = _ignored_mask('softmax_cross_entropy', mask, logits.shape)
    masked_logits = logits
    if ignored is not None:
        if np.any(np.all(ignored, axis=-1)):
            raise PreconditionError("cross-entropy over a fully masked row", {'shape': list(logits.shape)})
        target_ignored = np.take_along_axis(ignored, targets[..., None], axis=-1)[..., 0]
        if np.any(target_ignored & (weights != 0)):
            raise PreconditionError("cross-entropy target points at a masked position", {'shape': list(logits.shape)})
        masked_logits = np.where(ignored, -np.inf, logits)

    peak = masked_logits.max(axis=-1, keepdims=True)
    log_norm = peak + np.log(np.exp(masked_logits - peak).sum(axis=-1, keepdims=True))
    picked = np.take_along_axis(logits, targets[..., None], axis=-1)
    per_row = (log_norm - picked)[..., 0]
    probs = np.exp(masked_logits - log_norm)
    one_hot = np.zeros(logits.shape, dtype=DTYPE)
    np.put_along_axis(one_hot, targets[..., None], 1.0, axis=-1)

    def backward(g):
        return (g * weights[..., None] * (probs - one_hot),)

    return np.array((weights * per_row).sum()), backward


# ---------------------------------------------------------------------------
# 公開ラッパー
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    return forward_primitive('matmul', a, b)


def add(a, b) -> Tensor:
    return forward_primitive('add', a, b)


def sub(a, b) -> Tensor:
    return forward_primitive('sub', a, b)


def mul(a, b) -> Tensor:
    return forward_primitive('mul', a, b)


def scale(a, factor: float) -> Tensor:
    return forward_primitive('scale', a, factor=factor)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    return forward_primitive('concat', *tensors, axis=axis)


def reshape(a, shape: Sequence[int]) -> Tensor:
    return forward_primitive('reshape', a, shape=tuple(int(s) for s in shape))


def transpose(a, axes: Sequence[int]) -> Tensor:
    return forward_primitive('transpose', a, axes=tuple(int(s) for s in axes))


def swap_last(a: Tensor) -> Tensor:
    """最後の2軸を入れ替える"""
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def take(a, index) -> Tensor:
    """先頭軸に沿った取り出し（層ごとに積んだパラメータの切り出しに使う）"""
    return forward_primitive('take', a, index=index)


def broadcast_to(a, shape: Sequence[int]) -> Tensor:
    return forward_primitive('broadcast_to', a, shape=tuple(int(s) for s in shape))


def softmax(x, mask=None) -> Tensor:
    """最後の軸に沿ったソフトマックス

    Args:
        x: ロジット
        mask: Trueの位置は無視され、重みはちょうど0になる
    """
    return forward_primitive('softmax', x, mask=mask)


def sigmoid(x) -> Tensor:
    return forward_primitive('sigmoid', x)


def relu(x) -> Tensor:
    return forward_primitive('relu', x)


def tanh(x) -> Tensor:
    return forward_primitive('tanh', x)


def layer_norm(x, gamma, beta, eps: float = LAYER_NORM_EPS) -> Tensor:
    return forward_primitive('layer_norm', x, gamma, beta, eps=eps)


def conv1d(x, kernel) -> Tensor:
    return forward_primitive('conv1d', x, kernel)


def dropout(x: Tensor, rate: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """学習時のみ有効なドロップアウト

    推論時や ``rate == 0`` では入力をそのまま返します。
    """
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise PreconditionError("dropout in training mode needs a seeded random generator")
    keep = rng.random(x.shape) >= rate
    return forward_primitive('dropout', x, keep=keep, rate=rate)


def sum_(x) -> Tensor:
    return forward_primitive('sum', x)


def mean(x) -> Tensor:
    return forward_primitive('mean', x)


def sigmoid_cross_entropy(logits, targets, weights=None) -> Tensor:
    """要素ごとのシグモイド交差エントロピーの重み付き総和"""
    return forward_primitive('sigmoid_cross_entropy', logits, targets=targets, weights=weights)


def softmax_cross_entropy(logits, targets, mask=None, weights=None) -> Tensor:
    """行ごとのソフトマックス交差エントロピーの重み付き総和

    Args:
        logits: (..., K) のロジット
        targets: (...) の正解インデックス
        mask: Trueのクラスは候補から除外
        weights: (...) の行ごとの重み
    """
    return forward_primitive('softmax_cross_entropy', logits, targets=targets, mask=mask, weights=weights)


def argmax(x: Tensor, mask=None) -> np.ndarray:
    """最後の軸に沿ったargmax（同値は小さいインデックス）

    勾配を必要とする入力に対してテープ上で呼ばれた場合、微分不能な決定として記録します。
    """
    x = as_tensor(x)
    values = x.value
    if mask is not None:
        values = np.where(_ignored_mask('argmax', mask, x.shape), -np.inf, values)
    tape = active_tape()
    if tape is not None and x.requires_grad:
        tape.record(TapeNode('argmax', (x,), None, None, differentiable=False))
    return np.argmax(values, axis=-1)


# ---------------------------------------------------------------------------
# 逆伝播と勾配検査
# ---------------------------------------------------------------------------

def backward(tape: Tape, loss: Tensor, params: Optional[Mapping[str, Tensor]] = None):
    """逆伝播

    テープを逆順に一度だけ辿り、損失の勾配を求めます。

    Args:
        tape: 順伝播を記録したテープ
        loss: スカラー損失
        params: 名前付きパラメータ。指定すると名前→勾配の辞書を返し、
            損失に届かないパラメータの勾配は0になります

    Returns:
        ``params`` 指定時は名前→勾配、未指定時はリーフテンソル→勾配の辞書

    Raises:
        ShapeError: 損失がスカラーでない場合
    """
    if loss.ndim != 0:
        raise ShapeError("Loss must be a scalar", {'shape': list(loss.shape)})

    grads: Dict[Tensor, np.ndarray] = {loss: np.ones((), dtype=DTYPE)}
    produced = set()
    for node in reversed(tape.nodes):
        if node.result is None:
            continue
        produced.add(node.result)
        g = grads.get(node.result)
        if g is None:
            continue
        operand_grads = node.backward(g)
        for operand, operand_grad in zip(node.operands, operand_grads):
            if operand_grad is None or not operand.requires_grad:
                continue
            previous = grads.get(operand)
            grads[operand] = operand_grad if previous is None else previous + operand_grad

    if params is not None:
        return {
            name: np.asarray(grads.get(tensor, np.zeros(tensor.shape, dtype=DTYPE)), dtype=DTYPE)
            for name, tensor in params.items()
        }
    return {tensor: grad for tensor, grad in grads.items() if tensor not in produced and tensor is not loss}


@dataclass(frozen=True)
class GradCheckReport:
    """勾配検査の結果"""
    max_relative_error: float
    tolerance: float
    errors: Dict[str, float]
    coordinates_checked: int

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance


def grad_check(fn: Callable[..., Tensor], point: Union[np.ndarray, Mapping[str, np.ndarray]],
               epsilon: float = 1e-5, tolerance: float = 1e-4,
               max_coordinates: Optional[int] = None, seed: int = 0,
               floor: float = 1e-4) -> GradCheckReport:
    """解析的勾配と中心差分の比較

    相対誤差は点の各エントリごとに ``||a - n|| / max(||a|| + ||n||, floor)`` で求め、
    その最大値を報告します。

    Args:
        fn: スカラーを返す関数。``point`` が辞書なら名前→Tensorの辞書を、配列ならTensorを受け取る
        point: 評価点
        epsilon: 中心差分の刻み
        tolerance: 合格判定のしきい値
        max_coordinates: エントリごとに検査する座標数の上限（超える場合は無作為抽出）
        seed: 座標抽出のシード
        floor: 相対誤差の分母の下限

    Raises:
        NonDifferentiableError: 関数がargmaxなどのハード決定を含む場合
    """
    single = not isinstance(point, Mapping)
    values = {'x': np.asarray(point, dtype=DTYPE)} if single else {
        name: np.asarray(v, dtype=DTYPE) for name, v in point.items()
    }
    if any(not np.all(np.isfinite(v)) for v in values.values()):
        raise PreconditionError("Gradient check point must be finite")

    def evaluate(current: Dict[str, np.ndarray], requires_grad: bool) -> Tuple[Tensor, Dict[str, Tensor]]:
        tensors = {name: Tensor(v, requires_grad=requires_grad, name=name) for name, v in current.items()}
        result = fn(tensors['x']) if single else fn(tensors)
        return as_tensor(result), tensors

    with Tape() as tape:
        loss, tensors = evaluate(values, True)
    if tape.has_hard_decisions:
        raise NonDifferentiableError(
            "Function contains a hard decision (argmax); gradients are undefined",
            {'kinds': sorted({node.kind for node in tape.nodes if not node.differentiable})}
        )
    analytic = backward(tape, loss, tensors)

    rng = np.random.default_rng(seed)
    errors: Dict[str, float] = {}
    checked = 0
    for name, base in values.items():
        size = base.size
        if max_coordinates is not None and size > max_coordinates:
            coordinates = np.sort(rng.choice(size, size=max_coordinates, replace=False))
        else:
            coordinates = np.arange(size)

        numeric = np.zeros(len(coordinates), dtype=DTYPE)
        for i, flat_index in enumerate(coordinates):
            index = np.unravel_index(flat_index, base.shape) if base.ndim else ()
            shifted = dict(values)
            plus = base.copy()
            plus[index] += epsilon
            shifted[name] = plus
            f_plus = evaluate(shifted, False)[0].item()
            minus = base.copy()
            minus[index] -= epsilon
            shifted[name] = minus
            f_minus = evaluate(shifted, False)[0].item()
            numeric[i] = (f_plus - f_minus) / (2.0 * epsilon)

        exact = analytic[name].reshape(-1)[coordinates]
        denominator = max(float(np.linalg.norm(exact) + np.linalg.norm(numeric)), floor)
        errors[name] = float(np.linalg.norm(exact - numeric)) / denominator
        checked += len(coordinates)

    return GradCheckReport(
        max_relative_error=max(errors.values()) if errors else 0.0,
        tolerance=tolerance,
        errors=errors,
        coordinates_checked=checked
    )


# ---------------------------------------------------------------------------
# 最適化
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Adamの状態（モーメントとステップ数）"""
    first_moment: Dict[str, np.ndarray]
    second_moment: Dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def initial(cls, params: Mapping[str, np.ndarray], beta1: float = 0.9, beta2: float = 0.999,
                epsilon: float = 1e-8) -> 'AdamState':
        return cls(
            first_moment={name: np.zeros(np.shape(v), dtype=DTYPE) for name, v in params.items()},
            second_moment={name: np.zeros(np.shape(v), dtype=DTYPE) for name, v in params.items()},
            step=0, beta1=beta1, beta2=beta2, epsilon=epsilon
        )

    def to_arrays(self) -> Dict[str, np.ndarray]:
        arrays = {f"adam.m.{name}": m for name, m in self.first_moment.items()}
        arrays.update({f"adam.v.{name}": v for name, v in self.second_moment.items()})
        return arrays


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: AdamState, lr: float) -> Dict[str, np.ndarray]:
    """バイアス補正付きAdamの1ステップ

    ``state`` のモーメントを更新してステップ数を1進め、新しいパラメータを返します。
    勾配が与えられないパラメータは勾配0として扱います。

    Raises:
        ShapeError: パラメータ・勾配・モーメントの形状が一致しない場合
    """
    step = state.step + 1
    correction1 = 1.0 - state.beta1 ** step
    correction2 = 1.0 - state.beta2 ** step

    updated: Dict[str, np.ndarray] = {}
    first: Dict[str, np.ndarray] = {}
    second: Dict[str, np.ndarray] = {}
    for name, value in params.items():
        value = np.asarray(value, dtype=DTYPE)
        grad = grads.get(name)
        grad = np.zeros(value.shape, dtype=DTYPE) if grad is None else np.asarray(grad, dtype=DTYPE)
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if grad.shape != value.shape or m is None or m.shape != value.shape or v.shape != value.shape:
            raise ShapeError(
                f"Adam shapes disagree for parameter {name}",
                {'parameter': name, 'param_shape': list(value.shape), 'grad_shape': list(grad.shape),
                 'moment_shape': None if m is None else list(m.shape)}
            )
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        first[name] = m
        second[name] = v
        updated[name] = value - lr * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)

    state.first_moment.update(first)
    state.second_moment.update(second)
    state.step = step
    return updated


@dataclass(frozen=True)
class LrSchedule:
    """逆平方根ウォームアップ学習率スケジュール

    lr(t) = factor · d^(-1/2) · min(t^(-1/2), t · W^(-3/2))
    """
    d: int
    warmup: int = 4000
    factor: float = 1.0

    def __call__(self, t: int) -> float:
        return lr_at(self, t)


def lr_at(schedule: LrSchedule, t: int) -> float:
    """ステップtの学習率

    Raises:
        PreconditionError: t < 1 の場合
    """
    if t < 1:
        raise PreconditionError(f"Learning-rate step must be >= 1, got {t}", {'t': t})
    return schedule.factor * schedule.d ** -0.5 * min(t ** -0.5, t * schedule.warmup ** -1.5)
