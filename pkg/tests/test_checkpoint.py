"""チェックポイントの保存・読み込みのテスト"""

import numpy as np
import pytest

from nee.checkpoint import MAGIC, checkpoint_bytes, checkpoint_digest, load_checkpoint, parse_checkpoint, save_checkpoint
from nee.errors import CheckpointError, ConfigMismatchError
from nee.model import NEEModel, nee_step
from nee.numeral import END
from tests.utils import tiny_model_config


@pytest.fixture(scope='module')
def model():
    initial = NEEModel.initialize(tiny_model_config(), seed=5)
    return initial.with_params(initial.params, step=42)


def test_round_trip_is_exact(tmp_path, model):
    path = save_checkpoint(tmp_path / 'model.nee', model, {'task': 'selection-sort'})
    loaded = load_checkpoint(path)
    assert loaded.config == model.config
    assert loaded.model.step == 42
    assert loaded.model.seed == 5
    assert loaded.metadata == {'task': 'selection-sort'}
    for name, value in model.params.items():
        np.testing.assert_array_equal(loaded.model.params[name], value)

    tokens, mask = (5, 2, 7, END), (0, 1, 0, 0)
    before, after = nee_step(model, tokens, mask), nee_step(loaded.model, tokens, mask)
    assert (before.value, before.pointer, before.next_mask) == (after.value, after.pointer, after.next_mask)
    np.testing.assert_array_equal(before.attention, after.attention)


def test_saving_twice_is_byte_identical(tmp_path, model):
    a = save_checkpoint(tmp_path / 'a.nee', model).read_bytes()
    b = save_checkpoint(tmp_path / 'b.nee', model).read_bytes()
    assert a == b
    assert a.startswith(MAGIC)


def test_digest_is_stable_across_inference(model):
    digest = checkpoint_digest(model)
    nee_step(model, (1, 2, END), (0, 0, 0))
    assert checkpoint_digest(model) == digest


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError) as exc_info:
        load_checkpoint(tmp_path / 'missing.nee')
    assert exc_info.value.details['reason'] == 'not found'


@pytest.mark.parametrize('cut', [0, 3, 8, 20, -1])
def test_truncated_checkpoint(model, cut):
    data = checkpoint_bytes(model)
    with pytest.raises(CheckpointError) as exc_info:
        parse_checkpoint(data[:cut])
    assert 'truncated' in exc_info.value.details['reason']


def test_bad_magic(model):
    data = checkpoint_bytes(model)
    with pytest.raises(CheckpointError) as exc_info:
        parse_checkpoint(b'XXXX' + data[4:])
    assert exc_info.value.details['reason'] == 'magic bytes do not match'


def test_corrupted_payload(model):
    data = bytearray(checkpoint_bytes(model))
    data[-3] ^= 0xFF
    with pytest.raises(CheckpointError) as exc_info:
        parse_checkpoint(bytes(data))
    assert exc_info.value.details['reason'] == 'payload checksum does not match'


def test_corrupted_header(model):
    data = bytearray(checkpoint_bytes(model))
    data[9] = 0xFF
    with pytest.raises(CheckpointError):
        parse_checkpoint(bytes(data))


def test_config_mismatch(tmp_path, model):
    path = save_checkpoint(tmp_path / 'model.nee', model)
    assert load_checkpoint(path, expected_config=tiny_model_config()).model.step == 42
    with pytest.raises(ConfigMismatchError) as exc_info:
        load_checkpoint(path, expected_config=tiny_model_config(bit_width=4))
    assert exc_info.value.details['expected_bit_width'] == 4
    assert exc_info.value.details['found_bit_width'] == 8
    assert exc_info.value.error_code == 'CKPT_MISMATCH'
