"""データセット生成と保存形式のテスト"""

import json

import pytest

from nee.dataset import MAGIC, TASKS, dataset_bytes, gen_dataset, parse_dataset, read_dataset, write_dataset
from nee.errors import DatasetError, PreconditionError
from nee.graphs import shortest_distances
from nee.rules import TraceGroup, TraceStep
from nee.traces import RANDOM, replay_dijkstra, replay_trace


SIZES = {'selection-sort': (20, 5), 'merge': (20, 5), 'seq2seq-baseline': (20, 5), 'add': (50, 10),
         'multiply': (50, 10), 'dijkstra': (4, 2), 'prim': (4, 2)}


@pytest.mark.parametrize('task', TASKS)
def test_generation_is_deterministic(task):
    n_train, n_valid = SIZES[task]
    kwargs = dict(graph_nodes=5, samples=500 if task == 'multiply' else None)
    first = gen_dataset(task, n_train, n_valid, seed=7, **kwargs)
    second = gen_dataset(task, n_train, n_valid, seed=7, **kwargs)
    assert dataset_bytes(first) == dataset_bytes(second)
    assert first.spec['seed'] == 7
    assert len(first.train) == n_train
    assert len(first.validation) == n_valid


def test_different_seeds_differ():
    assert gen_dataset('selection-sort', 10, 2, seed=1) != gen_dataset('selection-sort', 10, 2, seed=2)


def test_sequence_lengths_and_traces():
    dataset = gen_dataset('selection-sort', 50, 5, seed=3, min_len=2, max_len=4, distribution=RANDOM)
    for record in dataset.train:
        assert 2 <= len(record['sequence']) <= 4
        steps = [TraceStep.from_record(s) for s in record['steps']]
        assert replay_trace(steps) == sorted(record['sequence'])
    assert len(dataset.sequences()) == 50
    assert all(len(s.tokens) <= 5 for s in dataset.steps())


def test_merge_records_are_sorted_halves():
    dataset = gen_dataset('merge', 30, 0, seed=4, min_len=1, max_len=6)
    for record in dataset.train:
        assert record['left'] == sorted(record['left'])
        assert record['right'] == sorted(record['right'])
        assert len(record['left']) >= 1
        steps = [TraceStep.from_record(s) for s in record['steps']]
        assert replay_trace(steps, 'merge') == sorted(record['left'] + record['right'])


def test_graph_records_replay():
    dataset = gen_dataset('dijkstra', 5, 1, seed=5, graph_nodes=6)
    assert dataset.spec['hard_fraction'] == 0.5
    for record, (graph, source) in zip(dataset.train, dataset.graphs()):
        groups = [TraceGroup.from_record(g) for g in record['groups']]
        assert replay_dijkstra(groups, graph.n, source) == shortest_distances(graph, source)
    assert all(len(s.tokens) >= 3 for s in dataset.steps())


def test_prim_default_hard_fraction():
    assert gen_dataset('prim', 1, 0, graph_nodes=4).spec['hard_fraction'] == 0.2


def test_addition_respects_holdout():
    dataset = gen_dataset('add', 200, 20, seed=6, holdout=[5, 6])
    for step in dataset.steps():
        assert 5 not in step.tokens and 6 not in step.tokens
    assert dataset.spec['holdout'] == [5, 6]


def test_invalid_arguments():
    with pytest.raises(PreconditionError):
        gen_dataset('quicksort', 1, 1)
    with pytest.raises(PreconditionError):
        gen_dataset('selection-sort', 1, 1, min_len=5, max_len=3)
    with pytest.raises(PreconditionError):
        gen_dataset('merge', 1, 1, min_len=1, max_len=1)
    with pytest.raises(PreconditionError):
        gen_dataset('selection-sort', 1, 1).records('test')


@pytest.mark.parametrize('format', ['binary', 'json'])
def test_write_and_read(tmp_path, format):
    dataset = gen_dataset('selection-sort', 10, 3, seed=8)
    path = write_dataset(tmp_path / f'data.{format}', dataset, format)
    assert read_dataset(path) == dataset
    if format == 'binary':
        assert path.read_bytes().startswith(MAGIC)
    else:
        assert json.loads(path.read_text(encoding='utf-8'))['spec']['task'] == 'selection-sort'


def test_write_rejects_unknown_format(tmp_path):
    with pytest.raises(PreconditionError):
        write_dataset(tmp_path / 'data.csv', gen_dataset('merge', 1, 0), 'csv')


def test_missing_dataset(tmp_path):
    with pytest.raises(DatasetError) as exc_info:
        read_dataset(tmp_path / 'missing.bin')
    assert exc_info.value.details['reason'] == 'not found'


def test_corrupted_binary_dataset():
    data = bytearray(dataset_bytes(gen_dataset('selection-sort', 5, 1, seed=9)))
    data[20] ^= 0x01
    with pytest.raises(DatasetError) as exc_info:
        parse_dataset(bytes(data))
    assert exc_info.value.details['reason'] == 'checksum does not match'
    with pytest.raises(DatasetError):
        parse_dataset(bytes(data[:10]))


def test_tampered_json_dataset(tmp_path):
    path = write_dataset(tmp_path / 'data.json', gen_dataset('selection-sort', 3, 1, seed=10), 'json')
    content = json.loads(path.read_text(encoding='utf-8'))
    content['train'][0]['sequence'][0] += 1
    with pytest.raises(DatasetError) as exc_info:
        parse_dataset(json.dumps(content).encode('utf-8'))
    assert exc_info.value.details['reason'] == 'checksum does not match'


def test_unsupported_version(tmp_path):
    path = write_dataset(tmp_path / 'data.json', gen_dataset('selection-sort', 3, 1, seed=10), 'json')
    content = json.loads(path.read_text(encoding='utf-8'))
    content['version'] = 2
    with pytest.raises(DatasetError) as exc_info:
        parse_dataset(json.dumps(content).encode('utf-8'))
    assert exc_info.value.details['version'] == 2


def test_garbage_is_rejected():
    with pytest.raises(DatasetError):
        parse_dataset(b'not a dataset')
