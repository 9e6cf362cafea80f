"""観察用エクスポートのテスト"""

import json

import numpy as np
import pytest

from nee.errors import PreconditionError, ShapeError
from nee.model import NEEModel
from nee.numeral import EmbeddingTable
from nee.workbench import (
    attention_matrix, chance_interpolation_score, export_attention, export_embeddings_pca,
    neighbor_interpolation_score, pca_project, read_attention_csv, reconstruction_error
)
from tests.utils import tiny_model_config


@pytest.fixture(scope='module')
def model():
    return NEEModel.initialize(tiny_model_config(), seed=2)


def number_line_table(width: int = 8, dim: int = 4) -> EmbeddingTable:
    """埋め込みが数直線そのものになる表（emb(x) = (x, 0, ...)）"""
    bit_vectors = np.zeros((width, dim))
    bit_vectors[:, 0] = 2.0 ** np.arange(width)
    end_vector = np.zeros(dim)
    end_vector[0] = 1000.0
    return EmbeddingTable(bit_vectors, end_vector)


def test_pca_components_are_orthonormal():
    points = np.random.default_rng(0).normal(size=(60, 6)) * np.array([5.0, 3.0, 2.0, 1.0, 0.5, 0.1])
    projection = pca_project(points, k=3)
    np.testing.assert_allclose(projection.components @ projection.components.T, np.eye(3), atol=1e-10)
    ratios = projection.explained_variance_ratio
    assert np.all(np.diff(ratios) <= 1e-12)
    assert 0.0 < projection.total_explained < 1.0
    np.testing.assert_allclose(projection.coordinates, projection.project(points), atol=1e-10)


def test_reconstruction_error_matches_unexplained_variance():
    points = np.random.default_rng(1).normal(size=(40, 5))
    projection = pca_project(points, k=3)
    expected = (1.0 - projection.total_explained) * projection.total_variance
    assert reconstruction_error(points, projection) == pytest.approx(expected, rel=1e-9)


def test_pca_of_a_line():
    projection = pca_project(number_line_table().number_embeddings(), k=3)
    assert projection.explained_variance_ratio[0] == pytest.approx(1.0)
    assert projection.total_explained == pytest.approx(1.0)


def test_pca_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        pca_project(np.zeros(5), k=1)
    with pytest.raises(ShapeError):
        pca_project(np.zeros((4, 2)), k=3)
    with pytest.raises(ShapeError):
        pca_project(np.zeros((4, 2)), k=0)


def test_interpolation_on_number_line():
    holdout = range(3, 255, 3)
    assert neighbor_interpolation_score(number_line_table(), holdout) == 1.0
    assert neighbor_interpolation_score(number_line_table(), [200], radius=0) == 0.0


def test_chance_interpolation_score():
    assert chance_interpolation_score([5]) == pytest.approx(4 / 255)
    assert chance_interpolation_score([0], width=2) == pytest.approx(2 / 3)


def test_interpolation_needs_holdout():
    with pytest.raises(PreconditionError):
        neighbor_interpolation_score(number_line_table(), [])
    with pytest.raises(PreconditionError):
        chance_interpolation_score(range(4), width=2)


def test_export_attention(tmp_path, model):
    path = tmp_path / 'attention.csv'
    matrix = export_attention(model, [5, 2, 7], path)
    assert path.read_text(encoding='utf-8').splitlines()[0] == '5,2,7,e'
    assert matrix.shape[1] == 4
    np.testing.assert_allclose(matrix.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_array_equal(read_attention_csv(path), matrix)
    np.testing.assert_array_equal(attention_matrix(model, [5, 2, 7]), matrix)


def test_read_missing_attention(tmp_path):
    with pytest.raises(PreconditionError):
        read_attention_csv(tmp_path / 'missing.csv')


def test_export_embeddings_pca(tmp_path, model):
    path = tmp_path / 'pca.json'
    projection = export_embeddings_pca(model, [3, 4], path)
    content = json.loads(path.read_text(encoding='utf-8'))
    assert content['width'] == 8
    assert content['dim'] == 8
    assert len(content['numbers']) == 256
    assert [n['value'] for n in content['numbers'] if n['holdout']] == [3, 4]
    assert len(content['end_token']['coordinates']) == 3
    assert content['total_explained'] == pytest.approx(projection.total_explained)
    assert 0.0 < projection.total_explained <= 1.0 + 1e-9


def test_end_token_is_reported_with_nearest_number(tmp_path):
    export_embeddings_pca(number_line_table(), [], tmp_path / 'pca.json')
    content = json.loads((tmp_path / 'pca.json').read_text(encoding='utf-8'))
    assert content['end_token']['nearest_number'] == 255
    assert content['end_token']['nearest_distance'] == pytest.approx(745.0)
