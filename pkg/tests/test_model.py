"""NEEモデルとseq2seqベースラインのテスト"""

import numpy as np
import pytest

from nee.errors import NonTerminationError, PreconditionError, ShapeError
from nee.model import (
    ModelConfig, NEEModel, Toggles, architecture_summary, attention_logits, collate_steps, decode_values,
    encode_batch, encoder_forward, init_params, nee_forward, nee_loss, nee_run, nee_run_many, nee_step,
    MASK_CONV_BIAS_INIT, mask_update_logits, param_shapes, seq2seq_decode
)
from nee.numeral import END
from nee.numerics import Tensor, grad_check
from nee.rules import OracleEngine
from nee.traces import arithmetic_step, gen_selection_sort_trace
from tests.utils import tiny_model_config


@pytest.fixture(scope='module')
def tiny_model():
    return NEEModel.initialize(tiny_model_config(), seed=0)


# ---------------------------------------------------------------------------
# 設定とパラメータ
# ---------------------------------------------------------------------------

def test_default_config_is_full_scale():
    config = ModelConfig()
    assert (config.encoder_layers, config.decoder_layers, config.ffn_hidden) == (6, 6, 128)
    assert config.residual_scale == 1.5
    assert (config.mask_filter_size, config.mask_filters) == (3, 16)
    assert config.value_classes == 9


def test_config_validation():
    with pytest.raises(ValueError):
        tiny_model_config(mask_filter_size=4)
    with pytest.raises(ValueError):
        tiny_model_config(toggles=Toggles(c6=True), d=8)
    with pytest.raises(ValueError):
        tiny_model_config(output_encoding='one_hot', bit_width=12, output_width=24)
    with pytest.raises(ValueError):
        tiny_model_config(unknown_field=1)


def test_one_hot_output_classes():
    assert tiny_model_config(output_encoding='one_hot').value_classes == 257


@pytest.mark.parametrize('toggles,expected', [
    (Toggles(), {'residual_multiplier': 1.5, 'attention_kind': 'mlp_symmetric',
                 'shared_projection': True, 'input_encoding': 'binary'}),
    (Toggles(c1=False, c2=False, c3=False, c4=False, c5=False),
     {'residual_multiplier': 1.0, 'attention_kind': 'dot', 'shared_projection': False, 'input_encoding': 'one_hot'}),
    (Toggles(c3=False, c6=True), {'residual_multiplier': 1.5, 'attention_kind': 'mlp',
                                  'shared_projection': True, 'input_encoding': 'raw'}),
])
def test_architecture_summary(toggles, expected):
    assert architecture_summary(tiny_model_config(toggles=toggles, d=12)) == expected


def test_param_shapes_follow_toggles():
    shapes = param_shapes(tiny_model_config())
    assert shapes['embed.bits'] == (8, 8)
    assert shapes['encoder.attn.w_qkv'] == (1, 8, 8)
    assert 'encoder.attn.w_q' not in shapes
    assert shapes['mask.conv.kernel'] == (3, 2, 2)
    assert shapes['head.value.w'] == (8, 9)

    vanilla = param_shapes(tiny_model_config(toggles=Toggles(c2=False, c4=False, c5=False)))
    assert vanilla['embed.table'] == (257, 8)
    assert 'encoder.attn.mlp_u' not in vanilla
    assert vanilla['encoder.attn.w_k'] == (1, 8, 8)

    raw = param_shapes(tiny_model_config(toggles=Toggles(c6=True), d=12))
    assert not any(name.startswith('embed.') for name in raw)

    seq2seq = param_shapes(tiny_model_config(mode='seq2seq'))
    assert not any(name.startswith('mask.') for name in seq2seq)


def test_init_is_deterministic():
    a, b, c = (init_params(tiny_model_config(), seed) for seed in (1, 1, 2))
    assert all(np.array_equal(a[name], b[name]) for name in a)
    assert not np.array_equal(a['embed.bits'], c['embed.bits'])
    assert np.all(a['encoder.ln1.gamma'] == 1.0)
    assert np.all(a['head.value.b'] == 0.0)


def test_model_rejects_mismatched_params():
    config = tiny_model_config()
    params = init_params(config)
    params['embed.bits'] = np.zeros((4, 8))
    del params['mask.ffn.b']
    params['extra'] = np.zeros(1)
    with pytest.raises(ShapeError) as exc_info:
        NEEModel(config, params)
    assert exc_info.value.details == {'missing': ['mask.ffn.b'], 'unexpected': ['extra'], 'wrong_shape': ['embed.bits']}


def test_model_params_are_read_only(tiny_model):
    with pytest.raises(ValueError):
        tiny_model.params['embed.bits'][0, 0] = 1.0


def test_embedding_table_requires_binary_input():
    model = NEEModel.initialize(tiny_model_config(toggles=Toggles(c5=False)))
    with pytest.raises(PreconditionError):
        model.embedding_table()


# ---------------------------------------------------------------------------
# 順伝播
# ---------------------------------------------------------------------------

def test_pointer_ignores_masked_positions(tiny_model):
    outcome = nee_step(tiny_model, (5, 2, 7, END), (1, 0, 1, 0))
    assert outcome.attention[0] == 0.0
    assert outcome.attention[2] == 0.0
    assert outcome.attention.sum() == pytest.approx(1.0)
    assert outcome.pointer in (1, 3)
    assert len(outcome.next_mask) == 4
    assert set(outcome.next_mask) <= {0, 1}


def test_fully_masked_input_is_rejected(tiny_model):
    with pytest.raises(PreconditionError):
        nee_step(tiny_model, (5, END), (1, 1))
    with pytest.raises(ShapeError):
        nee_step(tiny_model, (5, END), (0,))


def test_batched_steps_match_single_steps(tiny_model):
    inputs = [(5, 2, 7, END), (3, END)]
    masks = [(0, 1, 0, 0), (0, 0)]
    batched = tiny_model.step_batch(inputs, masks)
    for tokens, mask, outcome in zip(inputs, masks, batched):
        single = nee_step(tiny_model, tokens, mask)
        assert single.pointer == outcome.pointer
        assert single.next_mask == outcome.next_mask
        np.testing.assert_allclose(single.attention, outcome.attention, atol=1e-12)


def test_encoder_is_permutation_equivariant(tiny_model):
    """位置符号化がないので入力の並べ替えは状態の並べ替えになる"""
    tokens = (9, 200, 3, END)
    mask = np.array([[0, 1, 0, 0]])
    order = [2, 0, 3, 1]
    params = tiny_model.tensors()
    states = encoder_forward(params, tiny_model.config, encode_batch([tokens], 8), mask).value
    permuted = encoder_forward(params, tiny_model.config, encode_batch([tuple(tokens[i] for i in order)], 8),
                               mask[:, order]).value
    np.testing.assert_allclose(permuted[0], states[0, order], atol=1e-10)


def test_pointer_distribution_follows_permutation(tiny_model):
    tokens = (9, 200, 3, END)
    mask = np.array([[0, 0, 1, 0]])
    order = [3, 1, 0, 2]
    params = tiny_model.tensors()
    base = nee_forward(params, tiny_model.config, encode_batch([tokens], 8), mask)
    moved = nee_forward(params, tiny_model.config, encode_batch([tuple(tokens[i] for i in order)], 8),
                        mask[:, order])
    np.testing.assert_allclose(moved.decoder.pointer.value[0], base.decoder.pointer.value[0, order], atol=1e-10)


def test_symmetric_mlp_attention():
    config = tiny_model_config()
    rng = np.random.default_rng(0)
    mlp = {key: Tensor(rng.normal(size=shape)) for key, shape in
           (('mlp_q', (8, 8)), ('mlp_k', (8, 8)), ('mlp_b', (8,)), ('mlp_u', (8,)))}
    x = Tensor(rng.normal(size=(1, 5, 8)))
    logits = attention_logits(x, x, config, mlp).value[0]
    np.testing.assert_allclose(logits, logits.T, atol=1e-12)

    asymmetric = attention_logits(x, x, tiny_model_config(toggles=Toggles(c3=False)), mlp).value[0]
    assert not np.allclose(asymmetric, asymmetric.T)


def test_dot_attention_scaling():
    config = tiny_model_config(toggles=Toggles(c2=False))
    q = Tensor(np.ones((1, 2, 8)))
    np.testing.assert_allclose(attention_logits(q, q, config).value, np.full((1, 2, 2), 8 / np.sqrt(8)))
    with pytest.raises(ShapeError):
        attention_logits(Tensor(np.ones((1, 2, 4))), q, config)


def test_decode_values_binary():
    config = tiny_model_config()
    logits = np.full((2, 9), -10.0)
    logits[0, [0, 2]] = 10.0
    logits[1, 8] = 10.0
    assert decode_values(config, logits) == [5, END]


def test_decode_values_one_hot():
    config = tiny_model_config(output_encoding='one_hot')
    logits = np.zeros((2, 257))
    logits[0, 42] = 1.0
    logits[1, 256] = 1.0
    assert decode_values(config, logits) == [42, END]


# ---------------------------------------------------------------------------
# 損失と勾配
# ---------------------------------------------------------------------------

def test_collate_steps_weights():
    config = tiny_model_config()
    steps = gen_selection_sort_trace([5, 2]) + [arithmetic_step('add', 3, 4)]
    batch = collate_steps(steps, config)
    assert batch.size == 4
    assert list(batch.pointer_weight) == [1.0, 1.0, 1.0, 0.0]
    assert batch.mask[3, 2] == 1.0
    assert list(batch.value_codes) == [2, 5, 256, 7]


def test_nee_loss_is_positive_scalar(tiny_model):
    batch = collate_steps(gen_selection_sort_trace([5, 2, 7]), tiny_model.config)
    loss = nee_loss(tiny_model.tensors(), tiny_model.config, batch)
    assert loss.shape == ()
    assert float(loss.value) > 0.0


def test_nee_loss_gradient(tiny_model):
    """3トークン入力の損失全体で、全パラメータの勾配が中心差分と一致する"""
    config = tiny_model.config
    batch = collate_steps(gen_selection_sort_trace([5, 2, 7]), config)
    report = grad_check(lambda params: nee_loss(params, config, batch), dict(tiny_model.params), tolerance=1e-4)
    assert set(report.errors) == set(tiny_model.params)
    assert report.passed, report.errors
    assert report.max_relative_error < 1e-4


@pytest.mark.parametrize('seed', [1, 2])
def test_nee_loss_gradient_at_perturbed_point(tiny_model, seed):
    config = tiny_model.config
    batch = collate_steps(gen_selection_sort_trace([6, 1, 4]), config)
    rng = np.random.default_rng(seed)
    point = {name: value + 0.1 * rng.normal(size=np.shape(value)) for name, value in tiny_model.params.items()}
    report = grad_check(lambda params: nee_loss(params, config, batch), point, tolerance=1e-4)
    assert report.passed, report.errors


def test_mask_conv_bias_starts_off_the_relu_kink():
    params = init_params(tiny_model_config(), seed=0)
    assert np.all(params['mask.conv.bias'] == MASK_CONV_BIAS_INIT)
    assert MASK_CONV_BIAS_INIT > 0.0


def test_mask_update_separates_all_zero_and_all_one_inputs(tiny_model):
    params = tiny_model.tensors()
    zeros = mask_update_logits(params, tiny_model.config, np.zeros(3), np.zeros(3))
    ones = mask_update_logits(params, tiny_model.config, np.ones(3), np.ones(3))
    assert not np.allclose(zeros.value, ones.value)


# ---------------------------------------------------------------------------
# 再帰適用
# ---------------------------------------------------------------------------

def test_nee_run_with_oracle():
    assert nee_run(OracleEngine('select'), (5, 2, 7, END)) == [2, 5, 7]


def test_nee_run_budget():
    with pytest.raises(NonTerminationError):
        nee_run(OracleEngine('select'), (5, 2, 7, END), budget=2)


def test_nee_run_reports_steps():
    steps = []
    nee_run(OracleEngine('select'), (3, 1, END), on_step=steps.append)
    assert steps == gen_selection_sort_trace([3, 1, END])


def test_nee_run_many_with_model(tiny_model):
    rollouts = nee_run_many(tiny_model, [(5, 2, 7, END), (1, END)])
    assert len(rollouts) == 2
    for rollout, length in zip(rollouts, (4, 2)):
        assert rollout.attention.shape[1] == length
        np.testing.assert_allclose(rollout.attention.sum(axis=1), 1.0)
        assert len(rollout.outputs) <= 2 * length


def test_nee_run_many_raise_on_budget():
    rollouts = nee_run_many(OracleEngine('select'), [(4, 1, END)], budget=1)
    assert rollouts[0].terminated is False
    with pytest.raises(NonTerminationError):
        nee_run_many(OracleEngine('select'), [(4, 1, END)], budget=1, raise_on_budget=True)


def test_mode_checks(tiny_model):
    seq2seq = NEEModel.initialize(tiny_model_config(mode='seq2seq'))
    with pytest.raises(PreconditionError):
        nee_step(seq2seq, (1, END), (0, 0))
    with pytest.raises(PreconditionError):
        seq2seq_decode(tiny_model, [(1, END)])


def test_seq2seq_decode_attention_rows():
    model = NEEModel.initialize(tiny_model_config(mode='seq2seq'), seed=3)
    rollouts = seq2seq_decode(model, [(5, 2, 7, END), (9, END)], raise_on_budget=False)
    for rollout, length in zip(rollouts, (4, 2)):
        assert rollout.attention.shape[1] == length
        np.testing.assert_allclose(rollout.attention.sum(axis=1), 1.0)
