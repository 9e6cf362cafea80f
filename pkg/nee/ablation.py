"""ソートのアブレーション

seq2seqベースラインにアーキテクチャ変更 C1..C6 を加えた変種を、同じデータと
シードで学習し、mixed / random / hard の各テスト分布で評価します。

変種の書式::

    all_mod            C1..C5 を有効
    vanilla            変更なし
    all_mod-C5         all_mod から C5 を外す
    vanilla+C2+C3      vanilla に C2, C3 を加える
    all_mod+attn_sup   交差注意を出力位置で教師付けする
"""

import json
import re
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

from .config import parse_config
from .errors import ConfigError
from .harness import TrainConfig, dataset_for, evaluate_generalization, train
from .logging import get_logger
from .model import Toggles
from .traces import TEST_MIXES


BASES = {
    'all_mod': {'c1': True, 'c2': True, 'c3': True, 'c4': True, 'c5': True, 'c6': False},
    'vanilla': {'c1': False, 'c2': False, 'c3': False, 'c4': False, 'c5': False, 'c6': False},
}
DEFAULT_VARIANTS = ('vanilla', 'all_mod', 'all_mod-C1', 'all_mod-C2', 'all_mod-C3', 'all_mod-C4',
                    'all_mod-C5', 'all_mod+C6')

_MODIFIER = re.compile(r'([+-])(C[1-6]|attn_sup)', re.IGNORECASE)

logger = get_logger('nee.ablation')


@dataclass(frozen=True)
class Variant:
    name: str
    toggles: Toggles
    supervise_attention: bool = False


def parse_variant(name: str) -> Variant:
    """変種名をトグルに変換

    Raises:
        ConfigError: 書式が不正な場合
    """
    base = next((b for b in BASES if name.startswith(b)), None)
    if base is None:
        raise ConfigError(f"Unknown ablation variant: {name}", {'variant': name, 'bases': sorted(BASES)})
    rest = name[len(base):]
    if _MODIFIER.sub('', rest):
        raise ConfigError(f"Malformed ablation variant: {name}", {'variant': name})
    flags = dict(BASES[base])
    supervise = False
    for sign, target in _MODIFIER.findall(rest):
        if target.lower() == 'attn_sup':
            if sign == '-':
                raise ConfigError("Attention supervision can only be added", {'variant': name})
            supervise = True
        else:
            flags[target.lower()] = sign == '+'
    return Variant(name, Toggles(**flags), supervise)


@dataclass
class AblationTable:
    """変種 × テスト分布の完全一致率

    Attributes:
        results: (出力符号化, 変種, テスト分布, 長さ) → 完全一致率
    """
    variants: Tuple[str, ...]
    test_mixes: Tuple[str, ...]
    output_encodings: Tuple[str, ...]
    lengths: Tuple[int, ...]
    results: Dict[Tuple[str, str, str, int], float] = field(default_factory=dict)

    def accuracy(self, variant: str, mix: str = 'mixed', length: Optional[int] = None,
                 encoding: Optional[str] = None) -> float:
        return self.results[(encoding or self.output_encodings[0], variant, mix, length or self.lengths[0])]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'variants': list(self.variants),
            'test_mixes': list(self.test_mixes),
            'output_encodings': list(self.output_encodings),
            'lengths': list(self.lengths),
            'results': [
                {'encoding': e, 'variant': v, 'mix': m, 'length': n, 'exact_match': acc}
                for (e, v, m, n), acc in sorted(self.results.items())
            ]
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'AblationTable':
        table = cls(tuple(data['variants']), tuple(data['test_mixes']), tuple(data['output_encodings']),
                    tuple(data['lengths']))
        for row in data['results']:
            table.results[(row['encoding'], row['variant'], row['mix'], int(row['length']))] = row['exact_match']
        return table

    def to_markdown(self) -> str:
        """出力符号化ごとに、変種を行・分布と長さを列にした表"""
        columns = [(m, n) for m in self.test_mixes for n in self.lengths]
        blocks = []
        for encoding in self.output_encodings:
            lines = [f"**{encoding} encoding**", '',
                     '| Variant | ' + ' | '.join(f"{m} ({n})" for m, n in columns) + ' |',
                     '|---|' + '---|' * len(columns)]
            for variant in self.variants:
                cells = [self.results.get((encoding, variant, m, n)) for m, n in columns]
                lines.append(f"| {variant} | " + ' | '.join(
                    '-' if c is None else f"{100.0 * c:.2f}%" for c in cells) + ' |')
            blocks.append('\n'.join(lines))
        return '\n\n'.join(blocks) + '\n'


def variant_config(base_config: TrainConfig, variant: Variant, output_encoding: str) -> TrainConfig:
    data = base_config.model_dump(mode='json')
    data['model']['toggles'] = variant.toggles.model_dump()
    data['model']['output_encoding'] = output_encoding
    data['optim']['supervise_attention'] = variant.supervise_attention
    return parse_config(TrainConfig, data, source=f"ablation variant {variant.name}")


def run_ablation(base_config: TrainConfig, variants: Sequence[str] = DEFAULT_VARIANTS,
                 test_mixes: Sequence[str] = ('mixed', 'random', 'hard'),
                 output_encodings: Sequence[str] = ('one_hot', 'binary'), lengths: Sequence[int] = (8,),
                 n_per_length: int = 100) -> AblationTable:
    """アブレーションの実行

    すべての変種を ``base_config`` のシードと同じデータセットで学習します。

    Raises:
        ConfigError: 変種名・テスト分布が不正、またはベース設定がseq2seqベースラインでない場合
    """
    if base_config.task != 'seq2seq-baseline':
        raise ConfigError("Ablations train the seq2seq baseline", {'task': base_config.task})
    unknown = [m for m in test_mixes if m not in TEST_MIXES]
    if unknown:
        raise ConfigError(f"Unknown test mixes: {unknown}", {'known': sorted(TEST_MIXES)})
    parsed = [parse_variant(v) for v in variants]
    dataset = dataset_for(base_config)
    table = AblationTable(tuple(variants), tuple(test_mixes), tuple(output_encodings), tuple(lengths))

    for encoding in output_encodings:
        for variant in parsed:
            config = variant_config(base_config, variant, encoding)
            logger.info("Training ablation variant", details={
                'variant': variant.name, 'encoding': encoding, 'config_hash': config.config_hash()
            })
            model = train(config, dataset).model
            for mix in test_mixes:
                report = evaluate_generalization(model, 'seq2seq-baseline', lengths, n_per_length,
                                                 base_config.seed, TEST_MIXES[mix])
                for length in lengths:
                    table.results[(encoding, variant.name, mix, length)] = report.exact_match[length]
    return table
