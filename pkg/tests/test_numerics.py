"""数値計算コア（テンソル・テープ・逆伝播・Adam・学習率）のテスト"""

import numpy as np
import pytest

from nee import numerics as nx_
from nee.errors import NonDifferentiableError, NumericsError, PreconditionError, ShapeError
from nee.numerics import (
    AdamState, LrSchedule, Tape, Tensor, adam_step, backward, grad_check, lr_at, primitive_kinds
)


RNG = np.random.default_rng(1234)


def _away_from_zero(shape, seed):
    """ReLUの折れ目から離れた点"""
    x = np.random.default_rng(seed).normal(size=shape)
    return np.where(np.abs(x) < 0.2, 0.7, x)


def _project(t: Tensor, seed: int = 0) -> Tensor:
    """出力テンソルを固定の乱数重みでスカラーに落とす"""
    weights = np.random.default_rng(seed).normal(size=t.shape)
    return nx_.sum_(nx_.mul(t, weights))


MASK = np.array([[False, True, False, False], [True, False, False, True]])


def _matrix_shape(rng):
    return int(rng.integers(2, 5)), int(rng.integers(2, 6))


def _row_mask(rng, shape):
    """各行に少なくとも1つ考慮する位置を残した無視マスク"""
    mask = rng.random(shape) < 0.3
    mask[..., 0] = False
    return mask


def _matmul_case(rng):
    rows, cols = _matrix_shape(rng)
    b = rng.normal(size=(cols, int(rng.integers(1, 4))))
    return lambda x: _project(nx_.matmul(x, b)), (rows, cols)


def _add_case(rng):
    rows, cols = _matrix_shape(rng)
    other = rng.normal(size=(1, cols))
    return lambda x: _project(nx_.add(x, other) + x), (rows, cols)


def _concat_case(rng):
    shape = _matrix_shape(rng)
    axis = int(rng.integers(0, 2))
    return lambda x: _project(nx_.concat([x, nx_.mul(x, x)], axis=axis)), shape


def _reshape_case(rng):
    rows, cols = _matrix_shape(rng)
    return lambda x: _project(nx_.reshape(x, (cols, rows))), (rows, cols)


def _take_case(rng):
    rows, cols = _matrix_shape(rng)
    index = int(rng.integers(0, rows))
    return lambda x: _project(nx_.take(x, index)), (rows, cols)


def _broadcast_case(rng):
    rows, cols = _matrix_shape(rng)
    lead = int(rng.integers(1, 4))
    return lambda x: _project(nx_.broadcast_to(x, (lead, rows, cols))), (rows, cols)


def _softmax_case(rng):
    shape = _matrix_shape(rng)
    mask = _row_mask(rng, shape)
    return lambda x: _project(nx_.softmax(x, mask=mask)), shape


def _layer_norm_case(rng):
    rows, cols = _matrix_shape(rng)
    gamma, beta = rng.uniform(0.5, 1.5, size=cols), rng.normal(size=cols)
    return lambda x: _project(nx_.layer_norm(x, gamma, beta)), (rows, cols)


def _conv1d_case(rng):
    batch, length = int(rng.integers(1, 3)), int(rng.integers(2, 6))
    channels_in = int(rng.integers(1, 4))
    kernel = rng.normal(size=(int(rng.choice([1, 3])), channels_in, int(rng.integers(1, 4))))
    return lambda x: _project(nx_.conv1d(x, kernel)), (batch, length, channels_in)


def _sigmoid_cross_entropy_case(rng):
    shape = _matrix_shape(rng)
    targets = rng.integers(0, 2, size=shape)
    weights = rng.uniform(0.5, 2.0, size=shape[1])
    return lambda x: nx_.sigmoid_cross_entropy(x, targets, weights=weights), shape


def _softmax_cross_entropy_case(rng):
    shape = _matrix_shape(rng)
    mask = _row_mask(rng, shape)
    targets = np.array([rng.choice(np.flatnonzero(~row)) for row in mask])
    weights = rng.uniform(0.5, 2.0, size=shape[0])
    return lambda x: nx_.softmax_cross_entropy(x, targets, mask=mask, weights=weights), shape


def _elementwise(op):
    def case(rng):
        return lambda x: _project(op(x)), _matrix_shape(rng)
    return case


def _reduction(op):
    def case(rng):
        return lambda x: op(nx_.mul(x, x)), _matrix_shape(rng)
    return case


PRIMITIVE_CASES = {
    'matmul': _matmul_case,
    'add': _add_case,
    'sub': _elementwise(lambda x: nx_.sub(2.0, x)),
    'mul': _elementwise(lambda x: nx_.mul(x, x)),
    'scale': _elementwise(lambda x: nx_.scale(x, -1.5)),
    'concat': _concat_case,
    'reshape': _reshape_case,
    'transpose': _elementwise(lambda x: nx_.transpose(x, (1, 0))),
    'take': _take_case,
    'broadcast_to': _broadcast_case,
    'softmax': _softmax_case,
    'sigmoid': _elementwise(nx_.sigmoid),
    'relu': _elementwise(nx_.relu),
    'tanh': _elementwise(nx_.tanh),
    'layer_norm': _layer_norm_case,
    'conv1d': _conv1d_case,
    'sum': _reduction(nx_.sum_),
    'mean': _reduction(nx_.mean),
    'sigmoid_cross_entropy': _sigmoid_cross_entropy_case,
    'softmax_cross_entropy': _softmax_cross_entropy_case,
}

CASE_SEEDS = range(5)


@pytest.mark.parametrize('seed', CASE_SEEDS)
@pytest.mark.parametrize('kind', sorted(PRIMITIVE_CASES))
def test_primitive_gradients(kind, seed):
    """各プリミティブの解析的勾配が、無作為な形と値で中心差分と一致する"""
    rng = np.random.default_rng([seed, len(kind)])
    fn, shape = PRIMITIVE_CASES[kind](rng)
    report = grad_check(fn, _away_from_zero(shape, seed=int(rng.integers(1 << 30))))
    assert report.passed, f"{kind} {shape}: {report.max_relative_error}"
    assert report.max_relative_error < 1e-4


def test_primitive_gradient_cases_cover_one_hundred_points():
    assert len(PRIMITIVE_CASES) * len(CASE_SEEDS) >= 100


def test_every_differentiable_primitive_is_checked():
    assert set(primitive_kinds()) - {'dropout'} == set(PRIMITIVE_CASES)


def test_conv1d_kernel_gradient():
    point = {'x': _away_from_zero((2, 5, 3), 1), 'kernel': _away_from_zero((3, 3, 2), 2)}
    report = grad_check(lambda p: _project(nx_.conv1d(p['x'], p['kernel'])), point)
    assert report.passed
    assert set(report.errors) == {'x', 'kernel'}


def test_dropout_gradient_with_fixed_mask():
    """同じ乱数で同じマスクになるのでドロップアウトも勾配検査できる"""
    def fn(x):
        return _project(nx_.dropout(x, 0.3, True, np.random.default_rng(5)))

    assert grad_check(fn, _away_from_zero((4, 4), 3)).passed


def test_dropout_inactive_at_inference():
    x = Tensor(np.ones((2, 2)))
    assert nx_.dropout(x, 0.5, False, None) is x
    with pytest.raises(PreconditionError):
        nx_.dropout(x, 0.5, True, None)


def test_softmax_masked_positions_are_exact_zero():
    out = nx_.softmax(np.array([[1.0, 2.0, 3.0, 4.0], [0.0, 0.0, 0.0, 0.0]]), mask=MASK)
    assert out.value[0, 1] == 0.0
    assert out.value[1, 0] == 0.0 and out.value[1, 3] == 0.0
    np.testing.assert_allclose(out.value.sum(axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(out.value[1, 1:3], [0.5, 0.5])


def test_softmax_fully_masked_row_is_rejected():
    with pytest.raises(PreconditionError):
        nx_.softmax(np.zeros((1, 3)), mask=np.ones((1, 3), dtype=bool))


def test_softmax_cross_entropy_rejects_masked_target():
    with pytest.raises(PreconditionError):
        nx_.softmax_cross_entropy(np.zeros((2, 4)), np.array([1, 2]), mask=MASK)


def test_shape_errors():
    with pytest.raises(ShapeError):
        nx_.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ShapeError):
        nx_.add(np.ones((2, 3)), np.ones((4,)))
    with pytest.raises(ShapeError):
        nx_.conv1d(np.ones((5, 3)), np.ones((2, 3, 1)))
    with pytest.raises(ShapeError):
        nx_.layer_norm(np.ones((2, 3)), np.ones(4), np.zeros(4))


def test_non_finite_values_raise():
    with pytest.raises(NumericsError) as exc_info:
        nx_.add(Tensor([np.inf, 1.0]), Tensor([1.0, 1.0]))
    assert exc_info.value.details['inf_count'] == 1


def test_unknown_primitive():
    with pytest.raises(NumericsError):
        nx_.forward_primitive('cosine', np.ones(2))


def test_tensor_is_immutable():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.value[0] = 5.0


def test_operations_outside_a_tape_are_constants():
    w = Tensor(np.ones(3), requires_grad=True)
    out = nx_.mul(w, w)
    assert out.requires_grad is False


def test_backward_requires_scalar_loss():
    w = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        out = nx_.mul(w, w)
    with pytest.raises(ShapeError):
        backward(tape, out)


def test_backward_with_named_params():
    """損失に届かないパラメータの勾配は0"""
    params = {'w': Tensor(np.array([1.0, 2.0]), requires_grad=True),
              'unused': Tensor(np.ones((2, 2)), requires_grad=True)}
    with Tape() as tape:
        loss = nx_.sum_(nx_.mul(params['w'], params['w']))
    grads = backward(tape, loss, params)
    np.testing.assert_allclose(grads['w'], [2.0, 4.0])
    np.testing.assert_array_equal(grads['unused'], np.zeros((2, 2)))


def test_gradient_accumulates_over_reused_tensor():
    w = Tensor(np.array([3.0]), requires_grad=True)
    with Tape() as tape:
        loss = nx_.sum_(nx_.add(nx_.mul(w, w), nx_.scale(w, 2.0)))
    grads = backward(tape, loss)
    np.testing.assert_allclose(grads[w], [8.0])


def test_grad_check_rejects_hard_decisions():
    def fn(x):
        nx_.argmax(x)
        return nx_.sum_(x)

    with Tape() as tape:
        w = Tensor(np.ones(3), requires_grad=True)
        nx_.argmax(w)
    assert tape.has_hard_decisions
    with pytest.raises(NonDifferentiableError):
        grad_check(fn, np.ones(3))


def test_argmax_ties_prefer_lower_index():
    assert list(nx_.argmax(np.array([[1.0, 3.0, 3.0], [2.0, 2.0, 0.0]]))) == [1, 0]
    assert nx_.argmax(np.array([5.0, 1.0, 2.0]), mask=np.array([True, False, False])) == 2


# ---------------------------------------------------------------------------
# Adam / 学習率
# ---------------------------------------------------------------------------

def test_adam_first_step_moves_by_learning_rate():
    """初回は補正後の更新量がほぼ lr·sign(g)"""
    params = {'w': np.array([1.0, -1.0, 0.5])}
    grads = {'w': np.array([0.3, -2.0, 0.0])}
    state = AdamState.initial(params)
    updated = adam_step(params, grads, state, lr=0.1)
    np.testing.assert_allclose(updated['w'], [0.9, -0.9, 0.5], atol=1e-6)
    assert state.step == 1
    np.testing.assert_array_equal(params['w'], [1.0, -1.0, 0.5])


def test_adam_is_deterministic():
    params = {'w': RNG.normal(size=(3, 2))}
    grads = {'w': RNG.normal(size=(3, 2))}
    a = adam_step(params, grads, AdamState.initial(params), 0.01)
    b = adam_step(params, grads, AdamState.initial(params), 0.01)
    np.testing.assert_array_equal(a['w'], b['w'])


def test_adam_shape_mismatch():
    params = {'w': np.zeros(3)}
    with pytest.raises(ShapeError):
        adam_step(params, {'w': np.zeros(4)}, AdamState.initial(params), 0.1)


def test_adam_minimizes_quadratic():
    params = {'w': np.array([5.0, -3.0])}
    state = AdamState.initial(params)
    for _ in range(500):
        params = adam_step(params, {'w': 2.0 * params['w']}, state, 0.05)
    assert np.all(np.abs(params["w"]) < 0.5)


def test_learning_rate_schedule():
    schedule = LrSchedule(d=16, warmup=4000)
    peak = 16 ** -0.5 * 4000 ** -0.5
    assert lr_at(schedule, 4000) == pytest.approx(peak)
    assert schedule(1) == pytest.approx(16 ** -0.5 * 4000 ** -1.5)
    assert schedule(2000) < peak
    assert schedule(16000) == pytest.approx(16 ** -0.5 * 16000 ** -0.5)
    assert LrSchedule(d=16, warmup=4000, factor=2.0)(100) == pytest.approx(2.0 * schedule(100))


def test_learning_rate_step_must_be_positive():
    with pytest.raises(PreconditionError):
        lr_at(LrSchedule(d=16), 0)
