"""二進数の符号化と埋め込みのテスト"""

import numpy as np
import pytest

from nee.errors import EncodingError, ShapeError
from nee.numeral import (
    END, BitWord, EmbeddingTable, bits_matrix, decode_bits, embed, encode_token, encode_uint, end_token,
    one_hot_encode, start_token, token_code, token_from_code, tokens_to_str
)


def test_encode_uint_is_lsb_first():
    assert encode_uint(5, 8).bits == (1, 0, 1, 0, 0, 0, 0, 0)
    assert encode_uint(0, 4).bits == (0, 0, 0, 0)
    assert encode_uint(255, 8).bits == (1,) * 8


@pytest.mark.parametrize('value', [0, 1, 2, 127, 128, 200, 255])
def test_decode_inverts_encode(value):
    assert decode_bits(encode_uint(value, 8)) == value
    assert encode_uint(value, 8).value == value


def test_full_range_decodes_for_wide_words():
    values = np.random.default_rng(0).integers(0, 1 << 24, size=200)
    assert all(decode_bits(encode_uint(int(v), 24)) == v for v in values)


@pytest.mark.parametrize('value,width', [(256, 8), (-1, 8), (16, 4), (1 << 24, 24)])
def test_encode_out_of_range(value, width):
    with pytest.raises(EncodingError) as exc_info:
        encode_uint(value, width)
    assert exc_info.value.details['width'] == width


@pytest.mark.parametrize('width', [0, 25])
def test_invalid_width(width):
    with pytest.raises(EncodingError):
        encode_uint(0, width)


def test_bitword_validation():
    with pytest.raises(EncodingError):
        BitWord(3, (1, 0))
    with pytest.raises(EncodingError):
        BitWord(2, (1, 2))


def test_start_and_end_tokens():
    assert start_token(8) == encode_uint(0, 8)
    assert end_token(8).is_end
    assert decode_bits(end_token(8)) == END
    assert encode_token(END, 8) == end_token(8)
    assert encode_token(3, 8) == encode_uint(3, 8)


def test_end_orders_above_every_number():
    assert all(END > x for x in range(256))
    assert END + 17 == END


def test_bits_matrix_marks_end_rows():
    bits, ends = bits_matrix([5, END, 2], 4)
    np.testing.assert_array_equal(bits, [[1, 0, 1, 0], [0, 0, 0, 0], [0, 1, 0, 0]])
    np.testing.assert_array_equal(ends, [False, True, False])


def test_token_codes():
    assert token_code(7, 8) == 7
    assert token_code(END, 8) == 256
    assert token_from_code(256, 8) == END
    assert token_from_code(3, 8) == 3
    with pytest.raises(EncodingError):
        token_from_code(257, 8)


def test_one_hot_encode():
    vector = one_hot_encode(256)
    assert vector.shape == (257,)
    assert vector[256] == 1.0 and vector.sum() == 1.0
    with pytest.raises(EncodingError):
        one_hot_encode(257)
    with pytest.raises(EncodingError):
        one_hot_encode(-1)


def test_tokens_to_str():
    assert tokens_to_str([5, 2, END]) == '[5, 2, e]'


def _table(width=8, d=6, seed=0):
    rng = np.random.default_rng(seed)
    return EmbeddingTable(rng.normal(size=(width, d)), rng.normal(size=d))


def test_embedding_is_bitwise_sum():
    table = _table()
    np.testing.assert_allclose(embed(encode_uint(5, 8), table), table.bit_vectors[0] + table.bit_vectors[2])
    np.testing.assert_allclose(embed(encode_uint(0, 8), table), np.zeros(6))
    np.testing.assert_allclose(embed(end_token(8), table), table.end_vector)


def test_embedding_is_linear_over_disjoint_bits():
    """ビットが重ならない数同士では emb(a + b) = emb(a) + emb(b)"""
    table = _table()
    for a, b in [(1, 2), (4, 8), (16, 96), (3, 12)]:
        np.testing.assert_allclose(
            embed(encode_uint(a + b, 8), table),
            embed(encode_uint(a, 8), table) + embed(encode_uint(b, 8), table)
        )


def test_number_embeddings_match_embed():
    table = _table(width=4, d=3)
    numbers = table.number_embeddings()
    assert numbers.shape == (16, 3)
    for value in range(16):
        np.testing.assert_allclose(numbers[value], embed(encode_uint(value, 4), table))


def test_embedding_width_mismatch():
    with pytest.raises(ShapeError):
        embed(encode_uint(1, 4), _table(width=8))
    with pytest.raises(ShapeError):
        EmbeddingTable(np.zeros((8, 4)), np.zeros(5))
