"""データセットの生成と保存

バイナリ形式（すべてリトルエンディアン）::

    b"NEED" | uint16 バージョン | uint32 長さ + 仕様（正規JSON）
           | uint32 レコード数 | (uint32 長さ + レコード（正規JSON）) * レコード数
           | SHA-256（先頭からここまでのダイジェスト, 32バイト）

仕様にはタスク、シード、件数、分布などの生成条件が入ります。
``--format json`` では同じ内容を人が読めるJSONで書き出します。
読み込みは先頭のマジックで形式を判別します。
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .config import canonical_json
from .errors import DatasetError, PreconditionError
from .graphs import WeightedGraph, gen_graph
from .logging import get_logger
from .platform import PlatformUtils
from .rules import TraceGroup, TraceStep
from .traces import (
    TRAIN_MIX, DistributionSpec, gen_arithmetic_pairs, gen_dijkstra_trace, gen_merge_trace,
    gen_prim_trace, gen_selection_sort_trace, graph_training_steps, sample_sequence,
)


MAGIC = b'NEED'
FORMAT_VERSION = 1
TASKS = ('selection-sort', 'merge', 'add', 'multiply', 'dijkstra', 'prim', 'seq2seq-baseline')
SPLITS = ('train', 'validation')
DEFAULT_HARD_FRACTION = {'dijkstra': 0.5, 'prim': 0.2}

_U16 = struct.Struct('<H')
_U32 = struct.Struct('<I')

logger = get_logger('nee.dataset')

Record = Dict[str, Any]


@dataclass(frozen=True)
class Dataset:
    """生成条件とレコード

    Attributes:
        task: タスク名
        spec: 生成条件（シードを含む）
        train: 学習レコード
        validation: 検証レコード
    """
    task: str
    spec: Dict[str, Any]
    train: Tuple[Record, ...] = field(default_factory=tuple)
    validation: Tuple[Record, ...] = field(default_factory=tuple)

    def records(self, split: str) -> Tuple[Record, ...]:
        if split not in SPLITS:
            raise PreconditionError(f"Unknown split: {split}", {'split': split, 'known': list(SPLITS)})
        return self.train if split == 'train' else self.validation

    def steps(self, split: str = 'train') -> List[TraceStep]:
        """NEEの学習ステップ（グラフタスクは select と min の呼び出し）"""
        steps: List[TraceStep] = []
        for record in self.records(split):
            if 'groups' in record:
                groups = [TraceGroup.from_record(g) for g in record['groups']]
                steps.extend(graph_training_steps(groups))
            else:
                steps.extend(TraceStep.from_record(s) for s in record.get('steps', ()))
        return steps

    def sequences(self, split: str = 'train') -> List[List[int]]:
        """未ソート列（選択ソートとseq2seqベースライン）"""
        return [list(record['sequence']) for record in self.records(split) if 'sequence' in record]

    def graphs(self, split: str = 'train') -> List[Tuple[WeightedGraph, int]]:
        return [(WeightedGraph.from_record(r['graph']), int(r.get('source', 0)))
                for r in self.records(split) if 'graph' in r]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return dataset_bytes(self) == dataset_bytes(other)

    def __hash__(self):
        return hash(dataset_bytes(self))


# ---------------------------------------------------------------------------
# 生成
# ---------------------------------------------------------------------------

def _steps_record(steps: Sequence[TraceStep]) -> List[Dict[str, Any]]:
    return [step.to_record() for step in steps]


def _sequence_record(task: str, rng: np.random.Generator, distribution: DistributionSpec,
                     min_len: int, max_len: int, width: int) -> Record:
    length = int(rng.integers(min_len, max_len + 1))
    sequence = sample_sequence(distribution, length, rng, width)
    if task == 'seq2seq-baseline':
        return {'sequence': sequence}
    if task == 'selection-sort':
        return {'sequence': sequence, 'steps': _steps_record(gen_selection_sort_trace(sequence))}
    # merge: 列を2つに分けて各々ソート
    cut = int(rng.integers(1, length)) if length > 1 else 1
    left, right = sorted(sequence[:cut]), sorted(sequence[cut:])
    return {'left': left, 'right': right, 'steps': _steps_record(gen_merge_trace(left, right))}


def _graph_record(task: str, rng: np.random.Generator, nodes: int, hard_fraction: float) -> Record:
    hard = bool(rng.random() < hard_fraction)
    graph = gen_graph('erdos_renyi', nodes, seed=rng, hard=hard, connected=True)
    groups = gen_dijkstra_trace(graph, 0) if task == 'dijkstra' else gen_prim_trace(graph, 0)
    return {
        'graph': graph.to_record(),
        'source': 0,
        'hard': hard,
        'groups': [g.to_record() for g in groups]
    }


def _arithmetic_split(task: str, spec: Dict[str, Any], rng: np.random.Generator) -> Tuple[List[Record], List[Record]]:
    data = gen_arithmetic_pairs(task, spec['width'] if task == 'add' else None,
                                spec['holdout'], rng, samples=spec.get('samples'))

    def pick(steps: Sequence[TraceStep], count: int) -> List[Record]:
        if not steps or count <= 0:
            return []
        index = rng.choice(len(steps), size=min(count, len(steps)), replace=False)
        return [{'steps': [steps[i].to_record()]} for i in sorted(index)]

    return pick(data.train, spec['n_train']), pick(data.eval_unseen_pairs, spec['n_valid'])


def gen_dataset(task: str, n_train: int, n_valid: int, seed: int = 0, min_len: int = 2, max_len: int = 8,
                distribution: DistributionSpec = TRAIN_MIX, width: int = 8, holdout: Sequence[int] = (),
                graph_nodes: int = 8, hard_fraction: Optional[float] = None,
                samples: Optional[int] = None) -> Dataset:
    """タスクのデータセットを生成

    学習列の長さは min_len..max_len から一様に選びます。学習と検証は
    ``SeedSequence`` から分岐した独立な乱数列を使うので、同じ条件と
    シードからはバイト単位で同じデータセットが得られます。

    Args:
        task: ``TASKS`` のいずれか
        n_train: 学習レコード数
        n_valid: 検証レコード数
        seed: 乱数シード
        distribution: 数列の分布
        holdout: 算術で学習に使わない数
        graph_nodes: グラフタスクのノード数
        hard_fraction: 重みが近い値のグラフの割合（既定は最短経路0.5、最小全域木0.2）
    """
    if task not in TASKS:
        raise PreconditionError(f"Unknown task: {task}", {'task': task, 'known': list(TASKS)})
    if not 1 <= min_len <= max_len:
        raise PreconditionError("Sequence lengths must satisfy 1 <= min_len <= max_len",
                                {'min_len': min_len, 'max_len': max_len})
    if task == 'merge' and max_len < 2:
        raise PreconditionError("Merge sequences need at least two elements", {'max_len': max_len})
    if hard_fraction is None:
        hard_fraction = DEFAULT_HARD_FRACTION.get(task, 0.0)

    spec = {
        'task': task,
        'seed': int(seed),
        'n_train': int(n_train),
        'n_valid': int(n_valid),
        'min_len': int(min_len),
        'max_len': int(max_len),
        'width': int(width),
        'distribution': distribution.model_dump(mode='json'),
        'holdout': sorted(int(x) for x in holdout),
        'graph_nodes': int(graph_nodes),
        'hard_fraction': float(hard_fraction),
        'samples': samples,
        'version': FORMAT_VERSION
    }
    train_seed, valid_seed = np.random.SeedSequence(seed).spawn(2)
    train_rng, valid_rng = np.random.default_rng(train_seed), np.random.default_rng(valid_seed)
    if task == 'merge':
        min_len = max(min_len, 2)

    if task in ('add', 'multiply'):
        train, validation = _arithmetic_split(task, spec, train_rng)
    elif task in ('dijkstra', 'prim'):
        train = [_graph_record(task, train_rng, graph_nodes, hard_fraction) for _ in range(n_train)]
        validation = [_graph_record(task, valid_rng, graph_nodes, hard_fraction) for _ in range(n_valid)]
    else:
        train = [_sequence_record(task, train_rng, distribution, min_len, max_len, width) for _ in range(n_train)]
        validation = [_sequence_record(task, valid_rng, distribution, min_len, max_len, width)
                      for _ in range(n_valid)]

    dataset = Dataset(task, spec, tuple(train), tuple(validation))
    logger.info("Dataset generated", details={
        'task': task, 'seed': seed, 'train': len(train), 'validation': len(validation)
    })
    return dataset


# ---------------------------------------------------------------------------
# 保存と読み込み
# ---------------------------------------------------------------------------

def _prefixed(text: str) -> bytes:
    data = text.encode('utf-8')
    return _U32.pack(len(data)) + data


def dataset_bytes(dataset: Dataset) -> bytes:
    """バイナリ形式のバイト列"""
    records = [{'split': 'train', **r} for r in dataset.train]
    records += [{'split': 'validation', **r} for r in dataset.validation]
    body = [MAGIC, _U16.pack(FORMAT_VERSION), _prefixed(canonical_json({'task': dataset.task, **dataset.spec})),
            _U32.pack(len(records))]
    body.extend(_prefixed(canonical_json(r)) for r in records)
    payload = b''.join(body)
    return payload + hashlib.sha256(payload).digest()


def dataset_json(dataset: Dataset) -> str:
    """人が読めるJSON形式（チェックサム付き）"""
    content = {
        'version': FORMAT_VERSION,
        'spec': {'task': dataset.task, **dataset.spec},
        'train': list(dataset.train),
        'validation': list(dataset.validation),
    }
    content['sha256'] = hashlib.sha256(canonical_json(content).encode('utf-8')).hexdigest()
    return json.dumps(content, indent=1, sort_keys=True, ensure_ascii=False)


def write_dataset(path: Union[str, Path], dataset: Dataset, format: str = 'binary') -> Path:
    """データセットをアトミックに書き出す

    Args:
        format: ``binary`` または ``json``
    """
    path = Path(path)
    if format == 'binary':
        data = dataset_bytes(dataset)
    elif format == 'json':
        data = dataset_json(dataset).encode('utf-8')
    else:
        raise PreconditionError(f"Unknown dataset format: {format}", {'format': format})
    PlatformUtils.safe_bytes_write(path, data)
    logger.info("Dataset written", details={'path': str(path), 'format': format, 'bytes': len(data)})
    return path


def _corrupt(source: str, reason: str, **details) -> DatasetError:
    return DatasetError(f"Corrupt dataset {source}: {reason}", {'path': source, 'reason': reason, **details})


def _from_content(spec: Dict[str, Any], records: List[Record]) -> Dataset:
    task = spec['task']
    train = tuple({k: v for k, v in r.items() if k != 'split'} for r in records if r['split'] == 'train')
    validation = tuple({k: v for k, v in r.items() if k != 'split'} for r in records if r['split'] == 'validation')
    return Dataset(task, spec, train, validation)


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.offset = 0
        self.source = source

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise _corrupt(self.source, 'file is truncated', offset=self.offset)
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, codec: struct.Struct) -> int:
        return codec.unpack(self.take(codec.size))[0]

    def json(self) -> Any:
        raw = self.take(self.unpack(_U32))
        try:
            return json.loads(raw.decode('utf-8'))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise _corrupt(self.source, f'record is not valid JSON ({e})')


def parse_dataset(data: bytes, source: str = '<bytes>') -> Dataset:
    """バイト列（バイナリまたはJSON形式）からデータセットを復元

    Raises:
        DatasetError: 破損、チェックサム不一致、バージョン不一致の場合
    """
    if data[:len(MAGIC)] != MAGIC:
        return _parse_json(data, source)
    if len(data) < len(MAGIC) + _U16.size + 32:
        raise _corrupt(source, 'file is truncated', size=len(data))
    payload, digest = data[:-32], data[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise _corrupt(source, 'checksum does not match')
    reader = _Reader(payload, source)
    reader.take(len(MAGIC))
    version = reader.unpack(_U16)
    if version != FORMAT_VERSION:
        raise DatasetError(
            f"Dataset {source} has format version {version}, expected {FORMAT_VERSION}",
            {'path': source, 'version': version, 'expected': FORMAT_VERSION}
        )
    spec = reader.json()
    count = reader.unpack(_U32)
    records = [reader.json() for _ in range(count)]
    if reader.offset != len(payload):
        raise _corrupt(source, 'trailing bytes after the last record')
    try:
        return _from_content(spec, records)
    except (KeyError, TypeError, AttributeError) as e:
        raise _corrupt(source, f'malformed content ({e})')


def _parse_json(data: bytes, source: str) -> Dataset:
    try:
        content = json.loads(data.decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise _corrupt(source, 'neither a binary dataset nor valid JSON')
    if not isinstance(content, dict):
        raise _corrupt(source, 'JSON dataset must be an object')
    if content.get('version') != FORMAT_VERSION:
        raise DatasetError(
            f"Dataset {source} has format version {content.get('version')}, expected {FORMAT_VERSION}",
            {'path': source, 'version': content.get('version'), 'expected': FORMAT_VERSION}
        )
    digest = content.pop('sha256', None)
    if digest != hashlib.sha256(canonical_json(content).encode('utf-8')).hexdigest():
        raise _corrupt(source, 'checksum does not match')
    try:
        records = [{'split': 'train', **r} for r in content['train']]
        records += [{'split': 'validation', **r} for r in content['validation']]
        return _from_content(content['spec'], records)
    except (KeyError, TypeError, AttributeError) as e:
        raise _corrupt(source, f'malformed content ({e})')


def read_dataset(path: Union[str, Path]) -> Dataset:
    """データセットの読み込み

    Raises:
        DatasetError: ファイルが存在しない、または破損している場合
    """
    path = Path(path)
    data = PlatformUtils.safe_bytes_read(path)
    if data is None:
        raise DatasetError(f"Dataset not found: {path}", {'path': str(path), 'reason': 'not found'})
    dataset = parse_dataset(data, str(path))
    logger.debug("Dataset loaded", details={
        'path': str(path), 'task': dataset.task, 'train': len(dataset.train), 'validation': len(dataset.validation)
    })
    return dataset
