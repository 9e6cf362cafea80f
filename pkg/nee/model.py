"""NEEモデルとseq2seqベースライン

マスク付きエンコーダ、値ヘッドとポインタヘッドを持つ1ステップデコーダ、
そしてマスク更新畳み込み b̂ = σ(F(C(N(b^I ∥ b^P)))) を実装します。

パラメータは名前→配列の辞書で、層ごとのパラメータは先頭の層軸に積み重ねて
保持します（例: ``encoder.ffn.w1`` は ``(layers, d, hidden)``）。
順伝播関数はすべてパラメータ辞書を引数に取る関数として書かれているので、
学習時は勾配を必要とするテンソルを、推論時は定数テンソルを渡します。

マスクの値は 0 が「考慮する」、1 が「無視する」です。
"""

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import Field, model_validator

from .config import StrictConfig
from .errors import NonTerminationError, PreconditionError, ShapeError
from .logging import get_logger
from .numeral import END, EmbeddingTable, Token, bits_matrix, is_end, token_code, token_from_code
from .numerics import (
    Tensor, add, argmax, broadcast_to, concat, conv1d, dropout, layer_norm, matmul, mul, relu,
    reshape, scale, sigmoid, sigmoid_cross_entropy, softmax, softmax_cross_entropy, swap_last,
    take, tanh,
)
from .rules import StepOutcome, TraceStep


logger = get_logger('nee.model')


class Toggles(StrictConfig):
    """アーキテクチャ変更のトグル

    - c1: 残差接続を residual_scale 倍に強める
    - c2: 内積注意の代わりにMLP注意を使う
    - c3: MLP注意を入力順を入れ替えて平均し対称化する
    - c4: クエリ・キー・バリューの射影を共有する
    - c5: 入力をone-hotではなくビット単位埋め込みで表す
    - c6: 線形埋め込みなしで生のビット列を入力する（c5より優先）
    """
    c1: bool = True
    c2: bool = True
    c3: bool = True
    c4: bool = True
    c5: bool = True
    c6: bool = False


class ModelConfig(StrictConfig):
    """モデル設定

    既定値はフル規模（6+6層、FFN隠れ層128、残差1.5、ドロップアウト0.1、
    マスク畳み込みのフィルタ幅3・フィルタ数16）です。
    """
    mode: Literal['nee', 'seq2seq'] = 'nee'
    bit_width: int = Field(8, ge=1, le=12)
    output_width: Optional[int] = Field(None, ge=1, le=24)
    d: int = Field(16, ge=2)
    encoder_layers: int = Field(6, ge=1)
    decoder_layers: int = Field(6, ge=1)
    ffn_hidden: int = Field(128, ge=1)
    residual_scale: float = Field(1.5, gt=0.0)
    dropout: float = Field(0.1, ge=0.0, lt=1.0)
    mask_filter_size: int = Field(3, ge=1)
    mask_filters: int = Field(16, ge=1)
    output_encoding: Literal['binary', 'one_hot'] = 'binary'
    toggles: Toggles = Field(default_factory=Toggles)
    bit_threshold: float = Field(0.5, gt=0.0, lt=1.0)
    mask_threshold: float = Field(0.5, gt=0.0, lt=1.0)

    @model_validator(mode='after')
    def _check_consistency(self) -> 'ModelConfig':
        if self.mask_filter_size % 2 == 0:
            raise ValueError(f"mask_filter_size must be odd, got {self.mask_filter_size}")
        if self.output_encoding == 'one_hot' and self.out_width > 12:
            raise ValueError("one_hot output encoding supports at most 12 output bits")
        if self.toggles.c6 and self.d < self.bit_width + 1:
            raise ValueError(f"raw binary input (c6) needs d >= bit_width + 1, got d={self.d}")
        return self

    @property
    def out_width(self) -> int:
        return self.output_width or self.bit_width

    @property
    def residual_multiplier(self) -> float:
        return self.residual_scale if self.toggles.c1 else 1.0

    @property
    def attention_kind(self) -> str:
        if not self.toggles.c2:
            return 'dot'
        return 'mlp_symmetric' if self.toggles.c3 else 'mlp'

    @property
    def shared_projection(self) -> bool:
        return self.toggles.c4

    @property
    def input_encoding(self) -> str:
        if self.toggles.c6:
            return 'raw'
        return 'binary' if self.toggles.c5 else 'one_hot'

    @property
    def value_classes(self) -> int:
        """値ヘッドの出力数（binary: ビット数 + 終端ロジット, one_hot: 2^w + 1）"""
        if self.output_encoding == 'binary':
            return self.out_width + 1
        return (1 << self.out_width) + 1


def architecture_summary(config: ModelConfig) -> Dict[str, object]:
    """トグルで決まるアーキテクチャ上の性質"""
    return {
        'residual_multiplier': config.residual_multiplier,
        'attention_kind': config.attention_kind,
        'shared_projection': config.shared_projection,
        'input_encoding': config.input_encoding,
    }


# ---------------------------------------------------------------------------
# パラメータ
# ---------------------------------------------------------------------------

def _attention_shapes(shapes: Dict[str, Tuple[int, ...]], prefix: str, layers: int, config: ModelConfig) -> None:
    d = config.d
    if config.shared_projection:
        shapes[f'{prefix}.w_qkv'] = (layers, d, d)
    else:
        for name in ('w_q', 'w_k', 'w_v'):
            shapes[f'{prefix}.{name}'] = (layers, d, d)
    shapes[f'{prefix}.w_o'] = (layers, d, d)
    if config.attention_kind != 'dot':
        shapes[f'{prefix}.mlp_q'] = (layers, d, d)
        shapes[f'{prefix}.mlp_k'] = (layers, d, d)
        shapes[f'{prefix}.mlp_b'] = (layers, d)
        shapes[f'{prefix}.mlp_u'] = (layers, d)


def _norm_shapes(shapes, name: str, layers: Optional[int], d: int) -> None:
    lead = () if layers is None else (layers,)
    shapes[f'{name}.gamma'] = lead + (d,)
    shapes[f'{name}.beta'] = lead + (d,)


def _ffn_shapes(shapes, prefix: str, layers: int, d: int, hidden: int) -> None:
    shapes[f'{prefix}.w1'] = (layers, d, hidden)
    shapes[f'{prefix}.b1'] = (layers, hidden)
    shapes[f'{prefix}.w2'] = (layers, hidden, d)
    shapes[f'{prefix}.b2'] = (layers, d)


def param_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """パラメータ名と形状の一覧"""
    d, n = config.d, config.bit_width
    enc_layers, dec_layers = config.encoder_layers, config.decoder_layers
    shapes: Dict[str, Tuple[int, ...]] = {}

    if config.input_encoding == 'binary':
        shapes['embed.bits'] = (n, d)
        shapes['embed.end'] = (d,)
    elif config.input_encoding == 'one_hot':
        shapes['embed.table'] = ((1 << n) + 1, d)

    _attention_shapes(shapes, 'encoder.attn', enc_layers, config)
    _norm_shapes(shapes, 'encoder.ln1', enc_layers, d)
    _norm_shapes(shapes, 'encoder.ln2', enc_layers, d)
    _ffn_shapes(shapes, 'encoder.ffn', enc_layers, d, config.ffn_hidden)
    _norm_shapes(shapes, 'encoder.ln_out', None, d)

    shapes['decoder.start'] = (d,)
    _attention_shapes(shapes, 'decoder.self_attn', dec_layers, config)
    _attention_shapes(shapes, 'decoder.cross_attn', dec_layers, config)
    for name in ('ln1', 'ln2', 'ln3'):
        _norm_shapes(shapes, f'decoder.{name}', dec_layers, d)
    _ffn_shapes(shapes, 'decoder.ffn', dec_layers, d, config.ffn_hidden)
    _norm_shapes(shapes, 'decoder.ln_out', None, d)

    shapes['head.value.w'] = (d, config.value_classes)
    shapes['head.value.b'] = (config.value_classes,)

    if config.mode == 'nee':
        shapes['mask.conv.kernel'] = (config.mask_filter_size, 2, config.mask_filters)
        shapes['mask.conv.bias'] = (config.mask_filters,)
        shapes['mask.ffn.w'] = (config.mask_filters, 1)
        shapes['mask.ffn.b'] = (1,)
    return shapes


_ZERO_LEAVES = ('beta', 'b', 'b1', 'b2', 'bias', 'mlp_b')
# 入力 (0, 0) の位置でもReLUの折れ目に乗らない正の初期値
MASK_CONV_BIAS_INIT = 0.1
_UNSTACKED = ('encoder.ln_out.', 'decoder.ln_out.', 'decoder.start')


def _is_stacked(name: str) -> bool:
    return name.startswith(('encoder.', 'decoder.')) and not name.startswith(_UNSTACKED)


def init_params(config: ModelConfig, seed: int = 0) -> Dict[str, np.ndarray]:
    """Xavier正規分布による初期化（名前順に乱数を引くので決定的）"""
    rng = np.random.default_rng(seed)
    params: Dict[str, np.ndarray] = {}
    for name, shape in sorted(param_shapes(config).items()):
        leaf = name.rsplit('.', 1)[-1]
        if leaf == 'gamma':
            params[name] = np.ones(shape)
        elif name == 'mask.conv.bias':
            params[name] = np.full(shape, MASK_CONV_BIAS_INIT)
        elif leaf in _ZERO_LEAVES:
            params[name] = np.zeros(shape)
        else:
            core = shape[1:] if _is_stacked(name) else shape
            if len(core) == 1:
                fan_in, fan_out = core[0], 1
            else:
                fan_in, fan_out = int(np.prod(core[:-1])), core[-1]
            params[name] = rng.normal(0.0, math.sqrt(2.0 / (fan_in + fan_out)), size=shape)
    return params


class NEEModel:
    """学習済み（または初期化済み）のモデル

    生成後は不変で、推論は複数スレッドから共有して実行できます。
    ``step_batch`` を持つので合成アルゴリズムのエンジンとしてそのまま使えます。
    """

    def __init__(self, config: ModelConfig, params: Mapping[str, np.ndarray], step: int = 0, seed: int = 0):
        expected = param_shapes(config)
        missing = sorted(set(expected) - set(params))
        unexpected = sorted(set(params) - set(expected))
        wrong = sorted(name for name in expected if name in params and np.shape(params[name]) != expected[name])
        if missing or unexpected or wrong:
            raise ShapeError(
                "Parameters do not match the model configuration",
                {'missing': missing, 'unexpected': unexpected, 'wrong_shape': wrong}
            )
        self.config = config
        self.step = int(step)
        self.seed = int(seed)
        self._constants = {name: Tensor(params[name], name=name) for name in sorted(expected)}

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0) -> 'NEEModel':
        model = cls(config, init_params(config, seed), step=0, seed=seed)
        logger.debug("Model initialized", details={
            'mode': config.mode,
            'seed': seed,
            'parameters': model.param_count,
            'config_hash': config.config_hash()
        })
        return model

    @property
    def params(self) -> Dict[str, np.ndarray]:
        """読み取り専用のパラメータ配列"""
        return {name: tensor.value for name, tensor in self._constants.items()}

    def tensors(self, requires_grad: bool = False) -> Dict[str, Tensor]:
        if not requires_grad:
            return dict(self._constants)
        return {name: Tensor(t.value, requires_grad=True, name=name) for name, t in self._constants.items()}

    def with_params(self, params: Mapping[str, np.ndarray], step: Optional[int] = None) -> 'NEEModel':
        return NEEModel(self.config, params, self.step if step is None else step, self.seed)

    @property
    def param_count(self) -> int:
        return int(sum(t.size for t in self._constants.values()))

    def embedding_table(self):
        """ビット単位埋め込み表（binary入力のモデルのみ）"""
        if self.config.input_encoding != 'binary':
            raise PreconditionError(
                "Model has no bitwise embedding table",
                {'input_encoding': self.config.input_encoding}
            )
        return EmbeddingTable(self.params['embed.bits'], self.params['embed.end'])

    def step_batch(self, tokens_list: Sequence[Sequence[Token]],
                   masks: Sequence[Sequence[int]]) -> List[StepOutcome]:
        return nee_step_batch(self, tokens_list, masks)


# ---------------------------------------------------------------------------
# バッチ化
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BatchInput:
    """パディング済みのトークン列

    Attributes:
        bits: (B, L, n) のビット
        ends: (B, L) の終端フラグ
        codes: (B, L) のトークンコード（終端は 2^n）
        valid: (B, L) の実トークン位置
    """
    bits: np.ndarray
    ends: np.ndarray
    codes: np.ndarray
    valid: np.ndarray

    @property
    def lengths(self) -> List[int]:
        return [int(v) for v in self.valid.sum(axis=1)]


def encode_batch(tokens_list: Sequence[Sequence[Token]], width: int) -> BatchInput:
    if not tokens_list:
        raise ShapeError("Empty batch")
    length = max(len(tokens) for tokens in tokens_list)
    if length == 0:
        raise ShapeError("Token sequences must not be empty")
    size = len(tokens_list)
    bits = np.zeros((size, length, width))
    ends = np.zeros((size, length))
    codes = np.zeros((size, length), dtype=np.int64)
    valid = np.zeros((size, length), dtype=bool)
    for row, tokens in enumerate(tokens_list):
        count = len(tokens)
        row_bits, row_ends = bits_matrix(tokens, width)
        bits[row, :count] = row_bits
        ends[row, :count] = row_ends
        codes[row, :count] = [token_code(t, width) for t in tokens]
        valid[row, :count] = True
    return BatchInput(bits, ends, codes, valid)


def pad_masks(masks: Sequence[Sequence[int]], length: int) -> np.ndarray:
    """マスクを (B, L) にパディング（パディング位置は無視）"""
    out = np.ones((len(masks), length))
    for row, mask in enumerate(masks):
        out[row, :len(mask)] = mask
    return out


def _ignored(mask: np.ndarray, valid: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.shape != valid.shape:
        raise ShapeError("Mask length must match the input", {'mask': list(mask.shape), 'input': list(valid.shape)})
    ignore = mask.astype(bool) | ~valid
    if np.any(np.all(ignore, axis=-1)):
        raise PreconditionError(
            "Every input position is masked; nothing to attend to",
            {'rows': np.nonzero(np.all(ignore, axis=-1))[0].tolist()}
        )
    return ignore


def embed_inputs(params: Mapping[str, Tensor], config: ModelConfig, batch: BatchInput) -> Tensor:
    """入力トークンを (B, L, d) に埋め込む"""
    if batch.bits.shape[-1] != config.bit_width:
        raise ShapeError(
            "Input width does not match the model",
            {'input_width': batch.bits.shape[-1], 'bit_width': config.bit_width}
        )
    encoding = config.input_encoding
    if encoding == 'binary':
        words = matmul(batch.bits, params['embed.bits'])
        return add(words, mul(batch.ends[..., None], params['embed.end']))
    if encoding == 'one_hot':
        return take(params['embed.table'], batch.codes)
    padding = np.zeros(batch.bits.shape[:-1] + (config.d - config.bit_width - 1,))
    return Tensor(np.concatenate([batch.bits, batch.ends[..., None], padding], axis=-1))


# ---------------------------------------------------------------------------
# 注意機構とブロック
# ---------------------------------------------------------------------------

def _mlp_scores(queries: Tensor, keys: Tensor, mlp: Mapping[str, Tensor]) -> Tensor:
    d = queries.shape[-1]
    qa = matmul(queries, mlp['mlp_q'])
    kb = matmul(keys, mlp['mlp_k'])
    qa = reshape(qa, qa.shape[:-1] + (1, d))
    kb = reshape(kb, kb.shape[:-2] + (1,) + kb.shape[-2:])
    hidden = tanh(add(add(qa, kb), mlp['mlp_b']))
    scores = matmul(hidden, reshape(mlp['mlp_u'], (d, 1)))
    return reshape(scores, scores.shape[:-1])


def attention_logits(queries: Tensor, keys: Tensor, config: ModelConfig,
                     mlp: Optional[Mapping[str, Tensor]] = None) -> Tensor:
    """注意のロジット行列 (..., Lq, Lk)

    内積注意は √d で割ります。MLP注意は uᵀ tanh(qA + kB + c) で、
    対称版は入力順を入れ替えたスコアとの平均です。マスクはsoftmaxの段階で
    適用され、無視する位置の重みはちょうど0になります。

    Raises:
        ShapeError: クエリ・キーの次元がdでない場合
    """
    if queries.shape[-1] != config.d or keys.shape[-1] != config.d:
        raise ShapeError(
            "Query/key dimension must equal d",
            {'queries': list(queries.shape), 'keys': list(keys.shape), 'd': config.d}
        )
    kind = config.attention_kind
    if kind == 'dot':
        return scale(matmul(queries, swap_last(keys)), 1.0 / math.sqrt(config.d))
    if mlp is None:
        raise PreconditionError("MLP attention needs its score parameters", {'kind': kind})
    scores = _mlp_scores(queries, keys, mlp)
    if kind == 'mlp_symmetric':
        flipped = _mlp_scores(keys, queries, mlp)
        scores = scale(add(scores, swap_last(flipped)), 0.5)
    return scores


def _attention(params, config: ModelConfig, prefix: str, layer: int, h_q: Tensor, h_kv: Tensor,
               ignore: Optional[np.ndarray]) -> Tuple[Tensor, Tensor, Tensor]:
    if config.shared_projection:
        w_q = w_k = w_v = take(params[f'{prefix}.w_qkv'], layer)
    else:
        w_q = take(params[f'{prefix}.w_q'], layer)
        w_k = take(params[f'{prefix}.w_k'], layer)
        w_v = take(params[f'{prefix}.w_v'], layer)
    q = matmul(h_q, w_q)
    k = matmul(h_kv, w_k)
    v = matmul(h_kv, w_v)
    mlp = None
    if config.attention_kind != 'dot':
        mlp = {key: take(params[f'{prefix}.{key}'], layer) for key in ('mlp_q', 'mlp_k', 'mlp_b', 'mlp_u')}
    logits = attention_logits(q, k, config, mlp)
    weights = softmax(logits, mask=ignore)
    out = matmul(matmul(weights, v), take(params[f'{prefix}.w_o'], layer))
    return out, weights, logits


def _norm(params, name: str, layer: Optional[int], x: Tensor) -> Tensor:
    gamma, beta = params[f'{name}.gamma'], params[f'{name}.beta']
    if layer is not None:
        gamma, beta = take(gamma, layer), take(beta, layer)
    return layer_norm(x, gamma, beta)


def _ffn(params, prefix: str, layer: int, h: Tensor) -> Tensor:
    hidden = relu(add(matmul(h, take(params[f'{prefix}.w1'], layer)), take(params[f'{prefix}.b1'], layer)))
    return add(matmul(hidden, take(params[f'{prefix}.w2'], layer)), take(params[f'{prefix}.b2'], layer))


def _residual(x: Tensor, sublayer_out: Tensor, config: ModelConfig, training: bool, rng) -> Tensor:
    # out = r·x + sublayer(LN(x))
    return add(scale(x, config.residual_multiplier), dropout(sublayer_out, config.dropout, training, rng))


def encoder_forward(params: Mapping[str, Tensor], config: ModelConfig, batch: BatchInput, mask: np.ndarray,
                    training: bool = False, rng: Optional[np.random.Generator] = None,
                    final_norm: bool = True) -> Tensor:
    """マスク付きエンコーダ

    位置符号化を使わないので、入力とマスクを同じ置換で並べ替えると
    出力状態も同じように並べ替わります。

    Args:
        params: パラメータテンソル
        config: モデル設定
        batch: 入力トークン
        mask: (B, L) のマスク（1は無視）
        training: ドロップアウトを有効にするか
        rng: ドロップアウト用の乱数生成器
        final_norm: 最後の正規化を適用するか

    Returns:
        (B, L) の各位置の状態 (B, L, d)

    Raises:
        PreconditionError: ある行の全位置がマスクされている場合
    """
    ignore = _ignored(mask, batch.valid)
    x = embed_inputs(params, config, batch)
    key_ignore = ignore[:, None, :]
    for layer in range(config.encoder_layers):
        h = _norm(params, 'encoder.ln1', layer, x)
        out, _, _ = _attention(params, config, 'encoder.attn', layer, h, h, key_ignore)
        x = _residual(x, out, config, training, rng)
        h = _norm(params, 'encoder.ln2', layer, x)
        x = _residual(x, _ffn(params, 'encoder.ffn', layer, h), config, training, rng)
    if final_norm:
        x = _norm(params, 'encoder.ln_out', None, x)
    return x


@dataclass(frozen=True)
class DecoderOutput:
    """デコーダ出力

    Attributes:
        value_logits: (B, K) 値ヘッドのロジット
        pointer_logits: (B, L) 最終ブロックの交差注意ロジット
        pointer: (B, L) ポインタ分布（マスク位置はちょうど0）
    """
    value_logits: Tensor
    pointer_logits: Tensor
    pointer: Tensor


def decoder_forward(params: Mapping[str, Tensor], config: ModelConfig, states: Tensor, mask: np.ndarray,
                    training: bool = False, rng: Optional[np.random.Generator] = None) -> DecoderOutput:
    """1ステップデコーダ

    学習可能な開始ベクトル1つを入力とし、最終ブロックの交差注意をポインタとして使います。

    Args:
        states: エンコーダ状態 (B, L, d)
        mask: (B, L) の無視フラグ（パディング含む）

    Raises:
        PreconditionError: seq2seqモードのモデルで呼ばれた場合
    """
    if config.mode != 'nee':
        raise PreconditionError("decoder_forward is only defined for NEE mode; use seq2seq_decode",
                                {'mode': config.mode})
    size, length, d = states.shape
    cross_ignore = np.asarray(mask, dtype=bool)[:, None, :]
    y = broadcast_to(reshape(params['decoder.start'], (1, 1, d)), (size, 1, d))
    weights = logits = None
    for layer in range(config.decoder_layers):
        h = _norm(params, 'decoder.ln1', layer, y)
        out, _, _ = _attention(params, config, 'decoder.self_attn', layer, h, h, None)
        y = _residual(y, out, config, training, rng)
        h = _norm(params, 'decoder.ln2', layer, y)
        out, weights, logits = _attention(params, config, 'decoder.cross_attn', layer, h, states, cross_ignore)
        y = _residual(y, out, config, training, rng)
        h = _norm(params, 'decoder.ln3', layer, y)
        y = _residual(y, _ffn(params, 'decoder.ffn', layer, h), config, training, rng)
    y = reshape(_norm(params, 'decoder.ln_out', None, y), (size, d))
    value_logits = add(matmul(y, params['head.value.w']), params['head.value.b'])
    return DecoderOutput(value_logits, reshape(logits, (size, length)), reshape(weights, (size, length)))


def mask_update_logits(params: Mapping[str, Tensor], config: ModelConfig, input_mask: np.ndarray,
                       pointer: np.ndarray, valid: Optional[np.ndarray] = None) -> Tensor:
    """マスク更新ヘッドのシグモイド前の出力

    2チャネル入力 (b^I, b^P) をそのままゼロ埋め畳み込み、ReLU、位置ごとの線形層の順に通します。
    パディング位置の入力は0にします。

    Raises:
        ShapeError: b^I と b^P の長さが異なる場合
    """
    input_mask = np.asarray(input_mask, dtype=np.float64)
    pointer = np.asarray(pointer, dtype=np.float64)
    if input_mask.shape != pointer.shape:
        raise ShapeError(
            "Mask and pointer lengths differ",
            {'mask': list(input_mask.shape), 'pointer': list(pointer.shape)}
        )
    squeeze = input_mask.ndim == 1
    if squeeze:
        input_mask, pointer = input_mask[None], pointer[None]
        valid = None if valid is None else np.asarray(valid)[None]
    valid = np.ones(input_mask.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)

    channels = np.stack([input_mask * valid, pointer * valid], axis=-1)
    h = relu(add(conv1d(channels, params['mask.conv.kernel']), params['mask.conv.bias']))
    out = add(matmul(h, params['mask.ffn.w']), params['mask.ffn.b'])
    out = reshape(out, input_mask.shape)
    return reshape(out, out.shape[1:]) if squeeze else out


def mask_update(params: Mapping[str, Tensor], config: ModelConfig, input_mask: np.ndarray,
                pointer: np.ndarray, valid: Optional[np.ndarray] = None) -> Tensor:
    """次のマスクの確率（推論時は mask_threshold で二値化）"""
    return sigmoid(mask_update_logits(params, config, input_mask, pointer, valid))


@dataclass(frozen=True)
class NEEOutput:
    decoder: DecoderOutput
    mask_logits: Tensor


def _one_hot_rows(indices: np.ndarray, length: int) -> np.ndarray:
    out = np.zeros((len(indices), length))
    out[np.arange(len(indices)), indices] = 1.0
    return out


def nee_forward(params: Mapping[str, Tensor], config: ModelConfig, batch: BatchInput, mask: np.ndarray,
                pointer: Optional[np.ndarray] = None, training: bool = False,
                rng: Optional[np.random.Generator] = None) -> NEEOutput:
    """NEEの順伝播

    Args:
        pointer: マスク更新に渡すone-hotポインタ (B, L)。学習時は正解ポインタを渡し、
            省略するとポインタヘッドのargmaxを使います
    """
    ignore = _ignored(mask, batch.valid)
    states = encoder_forward(params, config, batch, mask, training, rng)
    decoded = decoder_forward(params, config, states, ignore, training, rng)
    if pointer is None:
        pointer = _one_hot_rows(argmax(decoded.pointer, mask=ignore), ignore.shape[1])
    input_mask = np.where(batch.valid, mask, 0.0)
    mask_logits = mask_update_logits(params, config, input_mask, pointer, batch.valid)
    return NEEOutput(decoded, mask_logits)


# ---------------------------------------------------------------------------
# 損失
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NEEBatch:
    """学習用にまとめたトレースステップ"""
    inputs: BatchInput
    mask: np.ndarray
    value_codes: np.ndarray
    pointer: np.ndarray
    pointer_weight: np.ndarray
    next_mask: np.ndarray
    mask_weight: np.ndarray

    @property
    def size(self) -> int:
        return int(self.mask.shape[0])


def collate_steps(steps: Sequence[TraceStep], config: ModelConfig) -> NEEBatch:
    """トレースステップをパディングしてバッチにする

    ポインタを持たないステップ（算術）はポインタとマスクの重みが0になります。
    """
    inputs = encode_batch([step.tokens for step in steps], config.bit_width)
    length = inputs.valid.shape[1]
    mask = np.zeros((len(steps), length))
    next_mask = np.zeros((len(steps), length))
    pointer = np.zeros(len(steps), dtype=np.int64)
    weight = np.zeros(len(steps))
    for row, step in enumerate(steps):
        mask[row, :len(step.mask)] = step.mask
        next_mask[row, :len(step.next_mask)] = step.next_mask
        if step.pointer is not None:
            pointer[row] = step.pointer
            weight[row] = 1.0
    # パディング位置はマスク扱い
    mask = np.where(inputs.valid, mask, 1.0)
    codes = np.array([token_code(step.value, config.out_width) for step in steps], dtype=np.int64)
    return NEEBatch(inputs, mask, codes, pointer, weight, next_mask, weight.copy())


def _value_loss(config: ModelConfig, logits: Tensor, codes: np.ndarray, row_weights: np.ndarray) -> Tensor:
    width = config.out_width
    if config.output_encoding == 'one_hot':
        return softmax_cross_entropy(logits, codes, weights=row_weights)
    end = codes == (1 << width)
    bits = ((codes[:, None] >> np.arange(width)[None, :]) & 1) * ~end[:, None]
    targets = np.concatenate([bits, end[:, None]], axis=1).astype(np.float64)
    bit_weights = np.repeat((~end)[:, None], width, axis=1).astype(np.float64)
    weights = np.concatenate([bit_weights, np.ones((len(codes), 1))], axis=1) * row_weights[:, None]
    return sigmoid_cross_entropy(logits, targets, weights)


def nee_loss(params: Mapping[str, Tensor], config: ModelConfig, batch: NEEBatch, training: bool = False,
             rng: Optional[np.random.Generator] = None,
             weights: Tuple[float, float, float] = (1.0, 1.0, 1.0)) -> Tensor:
    """NEEの損失（値 + ポインタ + マスク）をバッチサイズで割ったもの

    値: ビットごとのシグモイド交差エントロピー（終端が正解のときはビットの重み0）
    ポインタ: 正解インデックスへの交差エントロピー
    マスク: 位置ごとのシグモイド交差エントロピー
    """
    value_weight, pointer_weight, mask_weight = weights
    ignore = batch.mask.astype(bool) | ~batch.inputs.valid
    length = ignore.shape[1]
    teacher_pointer = _one_hot_rows(batch.pointer, length) * (batch.pointer_weight[:, None] > 0)
    out = nee_forward(params, config, batch.inputs, batch.mask, teacher_pointer, training, rng)

    terms = [scale(_value_loss(config, out.decoder.value_logits, batch.value_codes, np.ones(batch.size)),
                   value_weight)]
    if np.any(batch.pointer_weight > 0):
        terms.append(scale(softmax_cross_entropy(out.decoder.pointer_logits, batch.pointer, mask=ignore,
                                                 weights=batch.pointer_weight), pointer_weight))
    if np.any(batch.mask_weight > 0):
        mask_weights = batch.inputs.valid * batch.mask_weight[:, None]
        terms.append(scale(sigmoid_cross_entropy(out.mask_logits, batch.next_mask, mask_weights), mask_weight))

    total = terms[0]
    for term in terms[1:]:
        total = add(total, term)
    return scale(total, 1.0 / batch.size)


# ---------------------------------------------------------------------------
# 推論
# ---------------------------------------------------------------------------

def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


def decode_values(config: ModelConfig, value_logits: np.ndarray) -> List[Token]:
    """値ヘッドのロジットをトークンに変換

    binary出力は終端ロジットのシグモイドがしきい値を超えればEND、
    そうでなければ各ビットをしきい値で二値化します。
    """
    width = config.out_width
    if config.output_encoding == 'one_hot':
        return [token_from_code(int(code), width) for code in np.argmax(value_logits, axis=-1)]
    probs = _sigmoid_np(value_logits)
    values: List[Token] = []
    for row in probs:
        if row[-1] > config.bit_threshold:
            values.append(token_from_code(1 << width, width))
        else:
            bits = (row[:-1] > config.bit_threshold).astype(np.int64)
            values.append(int((bits << np.arange(width)).sum()))
    return values


def nee_step_batch(model: NEEModel, tokens_list: Sequence[Sequence[Token]],
                   masks: Sequence[Sequence[int]]) -> List[StepOutcome]:
    """複数入力に対する1ステップ（パディングとマスクでまとめて計算）"""
    config = model.config
    if config.mode != 'nee':
        raise PreconditionError("nee_step needs a NEE-mode model", {'mode': config.mode})
    for tokens, mask in zip(tokens_list, masks):
        if len(tokens) != len(mask):
            raise ShapeError("Mask length must equal the number of tokens",
                             {'tokens': len(tokens), 'mask': len(mask)})
    batch = encode_batch(tokens_list, config.bit_width)
    length = batch.valid.shape[1]
    mask = pad_masks(masks, length)
    ignore = _ignored(mask, batch.valid)

    out = nee_forward(model.tensors(), config, batch, mask)
    pointer_probs = out.decoder.pointer.value
    pointers = argmax(out.decoder.pointer, mask=ignore)
    values = decode_values(config, out.decoder.value_logits.value)
    next_masks = _sigmoid_np(out.mask_logits.value) > config.mask_threshold

    outcomes = []
    for row, tokens in enumerate(tokens_list):
        count = len(tokens)
        outcomes.append(StepOutcome(
            value=values[row],
            pointer=int(pointers[row]),
            next_mask=tuple(int(b) for b in next_masks[row, :count]),
            attention=pointer_probs[row, :count].copy()
        ))
    return outcomes


def nee_step(model: NEEModel, tokens: Sequence[Token], mask: Sequence[int]) -> StepOutcome:
    """1回の呼び出し: 値、ポインタ（argmax）、二値化した次のマスク

    Raises:
        PreconditionError: 全位置がマスクされている場合
    """
    return nee_step_batch(model, [tokens], [mask])[0]


def nee_run(engine, tokens: Sequence[Token], mask: Optional[Sequence[int]] = None,
            budget: Optional[int] = None, on_step: Optional[Callable[[TraceStep], None]] = None) -> List[Token]:
    """終端が出るまでステップを繰り返す

    Args:
        engine: ``step_batch`` を持つエンジン（NEEModel または OracleEngine）
        tokens: 終端区切りの入力
        mask: 初期マスク（省略時は全て考慮）
        budget: ステップ予算（省略時は 2·L）
        on_step: 各ステップの入出力を受け取るコールバック

    Returns:
        出力された値（終端を除く、出力順）

    Raises:
        NonTerminationError: 予算内に終端が出なかった、または全位置がマスクされた場合
    """
    tokens = tuple(tokens)
    mask = tuple(mask) if mask is not None else (0,) * len(tokens)
    budget = 2 * len(tokens) if budget is None else budget
    outputs: List[Token] = []
    for _ in range(budget):
        if all(mask):
            raise NonTerminationError(
                "Mask covers every position before the end token was emitted",
                {'length': len(tokens), 'emitted': len(outputs)}
            )
        outcome = engine.step_batch([tokens], [mask])[0]
        if on_step is not None:
            on_step(TraceStep.from_outcome(tokens, mask, outcome))
        if is_end(outcome.value):
            return outputs
        outputs.append(outcome.value)
        mask = tuple(outcome.next_mask)
    raise NonTerminationError(
        f"No end token within {budget} steps",
        {'budget': budget, 'length': len(tokens), 'emitted': len(outputs)}
    )


@dataclass(frozen=True)
class Rollout:
    """1入力分の再帰適用の結果

    Attributes:
        outputs: 出力値（終端を除く）
        attention: (ステップ数, L) のポインタ分布
        terminated: 予算内に終端が出たか
    """
    outputs: Tuple[Token, ...]
    attention: np.ndarray
    terminated: bool


def nee_run_many(engine, sequences: Sequence[Sequence[Token]],
                 masks: Optional[Sequence[Sequence[int]]] = None,
                 budget: Optional[int] = None, raise_on_budget: bool = False) -> List[Rollout]:
    """複数入力の再帰適用をまとめて実行

    まだ終端していない入力だけをバッチにして1ステップずつ進めます。
    予算切れや全位置のマスクは ``terminated=False`` として返します。
    """
    sequences = [tuple(s) for s in sequences]
    current = [tuple(m) for m in masks] if masks is not None else [(0,) * len(s) for s in sequences]
    budgets = [2 * len(s) if budget is None else budget for s in sequences]
    outputs: List[List[Token]] = [[] for _ in sequences]
    attention: List[List[np.ndarray]] = [[] for _ in sequences]
    done = [False] * len(sequences)
    failed = [False] * len(sequences)
    steps = [0] * len(sequences)

    while True:
        active = [i for i in range(len(sequences)) if not done[i]]
        for i in active:
            if steps[i] >= budgets[i] or all(current[i]):
                done[i] = failed[i] = True
        active = [i for i in active if not done[i]]
        if not active:
            break
        outcomes = engine.step_batch([sequences[i] for i in active], [current[i] for i in active])
        for i, outcome in zip(active, outcomes):
            steps[i] += 1
            if outcome.attention is not None:
                attention[i].append(np.asarray(outcome.attention))
            if is_end(outcome.value):
                done[i] = True
            else:
                outputs[i].append(outcome.value)
                current[i] = tuple(outcome.next_mask)

    if raise_on_budget and any(failed):
        raise NonTerminationError(
            "Rollouts did not terminate within budget",
            {'failed': [i for i, f in enumerate(failed) if f]}
        )
    return [
        Rollout(
            tuple(outputs[i]),
            np.stack(attention[i]) if attention[i] else np.zeros((0, len(sequences[i]))),
            not failed[i]
        )
        for i in range(len(sequences))
    ]


# ---------------------------------------------------------------------------
# seq2seqベースライン
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Seq2SeqBatch:
    """ベースライン学習用バッチ

    Attributes:
        inputs: 終端区切りの未ソート列 (B, L)
        previous: デコーダ入力（1つずらした正解列、先頭は開始ベクトル） (B, T-1)
        target_codes: (B, T) 正解トークンコード
        target_valid: (B, T)
        attention_targets: (B, T) 各出力に対応する入力位置
    """
    inputs: BatchInput
    previous: BatchInput
    target_codes: np.ndarray
    target_valid: np.ndarray
    attention_targets: np.ndarray

    @property
    def size(self) -> int:
        return int(self.target_codes.shape[0])


def _stable_positions(sequence: Sequence[Token], ordered: Sequence[Token]) -> List[int]:
    """整列後の各要素が入力のどの位置から来たか（重複は出現順）"""
    used = set()
    positions = []
    for value in ordered:
        index = next(i for i, v in enumerate(sequence) if v == value and i not in used)
        used.add(index)
        positions.append(index)
    return positions


def collate_sequences(sequences: Sequence[Sequence[int]], config: ModelConfig) -> Seq2SeqBatch:
    """未ソート列からベースラインの学習バッチを作る（正解は整列列 + 終端）"""
    inputs_tokens = [tuple(seq) + (END,) for seq in sequences]
    targets = [tuple(sorted(seq)) + (END,) for seq in sequences]
    inputs = encode_batch(inputs_tokens, config.bit_width)
    previous = encode_batch([t[:-1] for t in targets], config.bit_width)
    steps = max(len(t) for t in targets)
    codes = np.zeros((len(sequences), steps), dtype=np.int64)
    valid = np.zeros((len(sequences), steps), dtype=bool)
    attention = np.zeros((len(sequences), steps), dtype=np.int64)
    for row, (tokens, target) in enumerate(zip(inputs_tokens, targets)):
        codes[row, :len(target)] = [token_code(t, config.out_width) for t in target]
        valid[row, :len(target)] = True
        attention[row, :len(target)] = _stable_positions(tokens, target)
    return Seq2SeqBatch(inputs, previous, codes, valid, attention)


@dataclass(frozen=True)
class Seq2SeqOutput:
    value_logits: Tensor
    attention: Tensor
    attention_logits: Tensor


def seq2seq_forward(params: Mapping[str, Tensor], config: ModelConfig, inputs: BatchInput,
                    previous: Optional[BatchInput], training: bool = False,
                    rng: Optional[np.random.Generator] = None) -> Seq2SeqOutput:
    """ベースラインの順伝播（因果マスク付きデコーダ、位置符号化なし）"""
    if config.mode != 'seq2seq':
        raise PreconditionError("seq2seq_forward needs a seq2seq-mode model", {'mode': config.mode})
    size, length = inputs.valid.shape
    d = config.d
    ignore = ~inputs.valid
    states = encoder_forward(params, config, inputs, np.zeros((size, length)), training, rng)

    y = broadcast_to(reshape(params['decoder.start'], (1, 1, d)), (size, 1, d))
    if previous is not None and previous.valid.shape[1] > 0:
        y = concat([y, embed_inputs(params, config, previous)], axis=1)
    steps = y.shape[1]
    causal = np.triu(np.ones((steps, steps), dtype=bool), k=1)[None]
    cross_ignore = ignore[:, None, :]

    weights = logits = None
    for layer in range(config.decoder_layers):
        h = _norm(params, 'decoder.ln1', layer, y)
        out, _, _ = _attention(params, config, 'decoder.self_attn', layer, h, h, causal)
        y = _residual(y, out, config, training, rng)
        h = _norm(params, 'decoder.ln2', layer, y)
        out, weights, logits = _attention(params, config, 'decoder.cross_attn', layer, h, states, cross_ignore)
        y = _residual(y, out, config, training, rng)
        h = _norm(params, 'decoder.ln3', layer, y)
        y = _residual(y, _ffn(params, 'decoder.ffn', layer, h), config, training, rng)
    y = _norm(params, 'decoder.ln_out', None, y)
    value_logits = add(matmul(y, params['head.value.w']), params['head.value.b'])
    return Seq2SeqOutput(value_logits, weights, logits)


def seq2seq_loss(params: Mapping[str, Tensor], config: ModelConfig, batch: Seq2SeqBatch, training: bool = False,
                 rng: Optional[np.random.Generator] = None, supervise_attention: bool = False,
                 attention_weight: float = 1.0) -> Tensor:
    """ベースラインの損失

    ``supervise_attention`` を有効にすると、最終ブロックの交差注意を
    出力した数の入力位置に寄せる交差エントロピー項を加えます。
    """
    out = seq2seq_forward(params, config, batch.inputs, batch.previous, training, rng)
    size, steps = batch.target_codes.shape
    logits = reshape(out.value_logits, (size * steps, config.value_classes))
    row_weights = batch.target_valid.reshape(-1).astype(np.float64)
    loss = _value_loss(config, logits, batch.target_codes.reshape(-1), row_weights)
    if supervise_attention:
        ignore = ~batch.inputs.valid[:, None, :]
        attention_loss = softmax_cross_entropy(out.attention_logits, batch.attention_targets, mask=ignore,
                                               weights=batch.target_valid.astype(np.float64))
        loss = add(loss, scale(attention_loss, attention_weight))
    return scale(loss, 1.0 / size)


def seq2seq_decode(model: NEEModel, tokens_list: Sequence[Sequence[Token]], budget: Optional[int] = None,
                   raise_on_budget: bool = True) -> List[Rollout]:
    """貪欲デコード

    各ステップで最終ブロックの交差注意行を記録します（各行の和は1）。

    Args:
        model: seq2seqモードのモデル
        tokens_list: 終端区切りの入力列
        budget: ステップ予算（省略時は 2·L）
        raise_on_budget: Trueなら予算切れで NonTerminationError

    Raises:
        PreconditionError: NEEモードのモデルが渡された場合
    """
    config = model.config
    if config.mode != 'seq2seq':
        raise PreconditionError("seq2seq_decode needs a seq2seq-mode model", {'mode': config.mode})
    params = model.tensors()
    inputs = encode_batch(tokens_list, config.bit_width)
    budgets = [2 * len(t) if budget is None else budget for t in tokens_list]
    outputs: List[List[Token]] = [[] for _ in tokens_list]
    attention: List[List[np.ndarray]] = [[] for _ in tokens_list]
    done = [False] * len(tokens_list)

    step = 0
    while not all(done) and step < max(budgets):
        previous = encode_batch([tuple(o) + (0,) * (step - len(o)) for o in outputs], config.bit_width) \
            if step > 0 else None
        out = seq2seq_forward(params, config, inputs, previous)
        values = decode_values(config, out.value_logits.value[:, step, :])
        for row, tokens in enumerate(tokens_list):
            if done[row]:
                continue
            attention[row].append(out.attention.value[row, step, :len(tokens)].copy())
            value = values[row]
            if is_end(value):
                done[row] = True
            elif not 0 <= value < (1 << config.bit_width):
                # 入力幅に収まらない出力は次の入力にできない
                outputs[row].append(value)
                done[row] = True
            else:
                outputs[row].append(value)
                if len(outputs[row]) >= budgets[row]:
                    done[row] = True
        step += 1

    results = []
    for row, tokens in enumerate(tokens_list):
        terminated = bool(attention[row]) and len(outputs[row]) < len(attention[row])
        if not terminated and raise_on_budget:
            raise NonTerminationError(
                f"Greedy decoding did not emit the end token within {budgets[row]} steps",
                {'row': row, 'budget': budgets[row]}
            )
        results.append(Rollout(tuple(outputs[row]), np.stack(attention[row]), terminated))
    return results
