"""アブレーション変種とその表のテスト"""

from pathlib import Path

import pytest

from nee.ablation import AblationTable, parse_variant, run_ablation, variant_config
from nee.config import load_yaml_config, parse_config
from nee.errors import ConfigError
from nee.harness import TrainConfig


CONFIG_PATH = Path(__file__).parent / 'config_test.yaml'


@pytest.fixture
def seq2seq_config() -> TrainConfig:
    data = load_yaml_config(CONFIG_PATH)
    data['task'] = 'seq2seq-baseline'
    data['model']['mode'] = 'seq2seq'
    return parse_config(TrainConfig, data, str(CONFIG_PATH))


def flags(variant):
    return tuple(getattr(variant.toggles, f'c{i}') for i in range(1, 7))


@pytest.mark.parametrize('name, expected', [
    ('all_mod', (True, True, True, True, True, False)),
    ('vanilla', (False, False, False, False, False, False)),
    ('all_mod-C5', (True, True, True, True, False, False)),
    ('vanilla+C2+C3', (False, True, True, False, False, False)),
    ('all_mod+C6', (True, True, True, True, True, True)),
])
def test_parse_variant(name, expected):
    variant = parse_variant(name)
    assert flags(variant) == expected
    assert variant.name == name
    assert not variant.supervise_attention


def test_attention_supervision_variant():
    variant = parse_variant('all_mod+attn_sup')
    assert variant.supervise_attention
    assert flags(variant) == flags(parse_variant('all_mod'))
    with pytest.raises(ConfigError):
        parse_variant('all_mod-attn_sup')


@pytest.mark.parametrize('name', ['baseline', 'all_mod-C7', 'vanilla+', 'all_modC5', 'vanilla C2'])
def test_invalid_variants(name):
    with pytest.raises(ConfigError):
        parse_variant(name)


def test_variant_config(seq2seq_config):
    config = variant_config(seq2seq_config, parse_variant('vanilla+attn_sup'), 'one_hot')
    assert config.model.output_encoding == 'one_hot'
    assert config.optim.supervise_attention
    assert not config.model.toggles.c5
    assert config.seed == seq2seq_config.seed
    assert config.config_hash() != seq2seq_config.config_hash()


def test_table_round_trip_and_markdown():
    table = AblationTable(('vanilla', 'all_mod'), ('mixed', 'hard'), ('binary',), (8,))
    table.results[('binary', 'vanilla', 'mixed', 8)] = 0.25
    table.results[('binary', 'all_mod', 'mixed', 8)] = 0.75
    table.results[('binary', 'all_mod', 'hard', 8)] = 0.5
    assert AblationTable.from_dict(table.to_dict()) == table
    assert table.accuracy('all_mod') == 0.75
    assert table.accuracy('all_mod', 'hard', 8, 'binary') == 0.5

    markdown = table.to_markdown()
    assert '| Variant | mixed (8) | hard (8) |' in markdown
    assert '| vanilla | 25.00% | - |' in markdown
    assert '| all_mod | 75.00% | 50.00% |' in markdown


def test_ablation_needs_seq2seq_base(seq2seq_config):
    nee_config = parse_config(TrainConfig, load_yaml_config(CONFIG_PATH), str(CONFIG_PATH))
    with pytest.raises(ConfigError):
        run_ablation(nee_config, ['vanilla'])
    with pytest.raises(ConfigError):
        run_ablation(seq2seq_config, ['vanilla'], test_mixes=['sorted'])
    with pytest.raises(ConfigError):
        run_ablation(seq2seq_config, ['vanilla', 'everything'])


def test_ablation_smoke(seq2seq_config):
    table = run_ablation(seq2seq_config, ['vanilla', 'all_mod-C5'], test_mixes=['mixed', 'hard'],
                         lengths=(3,), n_per_length=2)
    assert table.output_encodings == ('one_hot', 'binary')
    assert len(table.results) == 8
    markdown = table.to_markdown()
    assert '**one_hot encoding**' in markdown
    assert '**binary encoding**' in markdown
    assert markdown.count('| vanilla |') == 2
    assert all(0.0 <= v <= 1.0 for v in table.results.values())
    assert set(table.variants) == {'vanilla', 'all_mod-C5'}
