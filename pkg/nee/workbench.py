"""学習済みモデルの観察用エクスポート

- デコーダ注意（NEEはポインタ分布）のCSV
- ビット単位埋め込みの3次元PCA（JSON）
- 保留数の埋め込みが数直線上の正しい位置に置かれているかの指標

出力はデータファイルのみで、作図は行いません。
"""

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Union

import numpy as np

from .errors import PreconditionError, ShapeError
from .harness import rollouts
from .logging import get_logger
from .model import NEEModel
from .numeral import END, EmbeddingTable, Token, is_end
from .platform import PlatformUtils


INTERPOLATION_RADIUS = 2

logger = get_logger('nee.workbench')


def _token_label(token: Token) -> str:
    return 'e' if is_end(token) else str(int(token))


def attention_matrix(model: NEEModel, tokens: Sequence[Token]) -> np.ndarray:
    """1入力をデコードしたときの (ステップ数, L) 注意行列

    末尾に終端トークンがなければ補います。
    """
    tokens = tuple(tokens)
    if not tokens or not is_end(tokens[-1]):
        tokens = tokens + (END,)
    return rollouts(model, [tokens])[0].attention


def export_attention(model: NEEModel, tokens: Sequence[Token], path: Union[str, Path]) -> np.ndarray:
    """注意行列をCSVに書き出す

    1行目は入力トークン（終端は ``e``）、以降はデコードステップごとの注意行です。

    Returns:
        書き出した注意行列
    """
    tokens = tuple(tokens)
    if not tokens or not is_end(tokens[-1]):
        tokens = tokens + (END,)
    matrix = attention_matrix(model, tokens)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow([_token_label(t) for t in tokens])
    for row in matrix:
        writer.writerow([repr(float(x)) for x in row])
    PlatformUtils.safe_file_write(path, buffer.getvalue())
    logger.info("Attention exported", details={'path': str(path), 'steps': len(matrix), 'length': len(tokens)})
    return matrix


def read_attention_csv(path: Union[str, Path]) -> np.ndarray:
    text = PlatformUtils.safe_file_read(path)
    if text is None:
        raise PreconditionError(f"Attention file not found: {path}", {'path': str(path)})
    rows = list(csv.reader(io.StringIO(text)))
    return np.array([[float(x) for x in row] for row in rows[1:]])


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PcaProjection:
    """主成分への射影

    Attributes:
        components: (k, d) の正規直交な主成分
        coordinates: (N, k) の射影座標
        explained_variance_ratio: (k,) 各主成分の寄与率（非増加）
        mean: (d,) 中心化に使った平均
        total_variance: 中心化した点群の全分散（次元ごとの分散の和）
    """
    components: np.ndarray
    coordinates: np.ndarray
    explained_variance_ratio: np.ndarray
    mean: np.ndarray
    total_variance: float

    @property
    def total_explained(self) -> float:
        return float(self.explained_variance_ratio.sum())

    def project(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points) - self.mean) @ self.components.T


def pca_project(points: np.ndarray, k: int = 3) -> PcaProjection:
    """中心化した点群の特異値分解による上位k主成分

    Raises:
        ShapeError: 点群が2次元配列でない、またはkが点数・次元を超える場合
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or not 1 <= k <= min(points.shape):
        raise ShapeError("PCA needs an (N, d) array with k <= min(N, d)", {'shape': list(points.shape), 'k': k})
    mean = points.mean(axis=0)
    centered = points - mean
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    variances = singular ** 2 / len(points)
    total = float(variances.sum())
    ratios = variances[:k] / total if total > 0 else np.zeros(k)
    components = vt[:k]
    return PcaProjection(components, centered @ components.T, ratios, mean, total)


def reconstruction_error(points: np.ndarray, projection: PcaProjection) -> float:
    """上位主成分で再構成したときの平均二乗誤差

    (1 - 寄与率の和) × 全分散 に一致します。
    """
    points = np.asarray(points, dtype=np.float64)
    centered = points - projection.mean
    restored = projection.project(points) @ projection.components
    return float(np.sum((centered - restored) ** 2) / len(points))


def _table(source: Union[NEEModel, EmbeddingTable]) -> EmbeddingTable:
    return source if isinstance(source, EmbeddingTable) else source.embedding_table()


def export_embeddings_pca(source: Union[NEEModel, EmbeddingTable], holdout: Iterable[int],
                          path: Union[str, Path], k: int = 3) -> PcaProjection:
    """全ての数値の埋め込み（ビットベクトルの和）を3次元に射影してJSONに書き出す

    終端トークンの埋め込みも同じ主成分に射影し、最も近い数値の埋め込みとの
    距離を記録します。
    """
    table = _table(source)
    holdout = {int(x) for x in holdout}
    numbers = table.number_embeddings()
    projection = pca_project(numbers, k)
    distances = np.linalg.norm(numbers - table.end_vector, axis=1)
    nearest = int(np.argmin(distances))
    content: Dict[str, Any] = {
        'width': table.width,
        'dim': table.dim,
        'explained_variance_ratio': projection.explained_variance_ratio.tolist(),
        'total_explained': projection.total_explained,
        'components': projection.components.tolist(),
        'numbers': [
            {'value': value, 'coordinates': projection.coordinates[value].tolist(), 'holdout': value in holdout}
            for value in range(len(numbers))
        ],
        'end_token': {
            'coordinates': projection.project(table.end_vector[None, :])[0].tolist(),
            'nearest_number': nearest,
            'nearest_distance': float(distances[nearest]),
        },
    }
    PlatformUtils.safe_file_write(path, json.dumps(content, indent=1))
    logger.info("Embedding PCA exported", details={
        'path': str(path), 'total_explained': projection.total_explained, 'holdout': len(holdout)
    })
    return projection


# ---------------------------------------------------------------------------
# 保留数の補間
# ---------------------------------------------------------------------------

def _split(width: int, holdout: Iterable[int]) -> tuple:
    held = sorted({int(x) for x in holdout})
    if not held:
        raise PreconditionError("Interpolation score needs at least one held-out number")
    trained = np.setdiff1d(np.arange(1 << width), held)
    if not len(trained):
        raise PreconditionError("Interpolation score needs at least one trained number", {'holdout': len(held)})
    return np.array(held), trained


def neighbor_interpolation_score(source: Union[NEEModel, EmbeddingTable], holdout: Iterable[int],
                                 radius: int = INTERPOLATION_RADIUS) -> float:
    """保留数 m のうち、最も近い学習数 m' の埋め込みが |m - m'| <= radius を満たす割合

    Raises:
        PreconditionError: 保留数が空の場合
    """
    table = _table(source)
    held, trained = _split(table.width, holdout)
    numbers = table.number_embeddings()
    hits = 0
    for m in held:
        distances = np.linalg.norm(numbers[trained] - numbers[m], axis=1)
        nearest = trained[int(np.argmin(distances))]
        hits += abs(int(nearest) - int(m)) <= radius
    return hits / len(held)


def chance_interpolation_score(holdout: Iterable[int], width: int = 8,
                               radius: int = INTERPOLATION_RADIUS) -> float:
    """学習数を一様に選んだ場合の期待スコア"""
    held, trained = _split(width, holdout)
    near: List[float] = [np.sum(np.abs(trained - m) <= radius) / len(trained) for m in held]
    return float(np.mean(near))
