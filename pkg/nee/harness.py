"""学習ループと汎化評価

学習は単一スレッドで、同じ設定とシードからはビット単位で同じ損失曲線が
得られます。評価は不変なモデルを共有して複数スレッドで実行できます。
"""

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import Field, model_validator

from .compose import compose_dijkstra, compose_merge_sort, compose_prim
from .config import StrictConfig
from .dataset import Dataset, gen_dataset
from .errors import NEEError, NumericsError, PreconditionError, TrainingError
from .graphs import FAMILIES, gen_graph, is_spanning_tree, mst_weight, shortest_distances, spanning_tree_weight
from .logging import LogContext, get_logger
from .model import (
    ModelConfig, NEEModel, Rollout, collate_sequences, collate_steps, nee_loss, nee_run_many, seq2seq_decode,
    seq2seq_loss,
)
from .numeral import END, Token, is_end
from .numerics import AdamState, LrSchedule, Tape, Tensor, adam_step, backward
from .rules import OracleEngine, TraceStep
from .traces import TEST_MIX, ArithmeticData, DistributionSpec, TRAIN_MIX, holdout_for_training_count, sample_sequence


TASKS = ('selection-sort', 'merge', 'add', 'multiply', 'dijkstra', 'prim', 'seq2seq-baseline')
SEQUENCE_TASKS = ('selection-sort', 'merge', 'seq2seq-baseline')
GRAPH_TASKS = ('dijkstra', 'prim')
GENERALIZATION_LENGTHS = (25, 50, 75, 100)

# フル規模のハイパーパラメータ（埋め込み次元はタスクごと）
FULL_MODEL = {
    'encoder_layers': 6,
    'decoder_layers': 6,
    'ffn_hidden': 128,
    'mask_filter_size': 3,
    'mask_filters': 16,
    'residual_scale': 1.5,
    'dropout': 0.1,
}
FULL_DIM = {'add': 24, 'multiply': 28}
FULL_WARMUP = 4000

logger = get_logger('nee.harness')


class OptimConfig(StrictConfig):
    """最適化と早期終了の設定"""
    steps: int = Field(20000, ge=1)
    batch_size: int = Field(64, ge=1)
    lr_factor: float = Field(1.0, gt=0.0)
    warmup: int = Field(FULL_WARMUP, ge=1)
    eval_every: int = Field(500, ge=1)
    log_every: int = Field(100, ge=1)
    patience: int = Field(10, ge=1)
    eval_size: int = Field(200, ge=1)
    loss_weights: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    supervise_attention: bool = False
    attention_weight: float = Field(1.0, ge=0.0)


class DataSpec(StrictConfig):
    """学習データの生成条件"""
    n_train: int = Field(20000, ge=1)
    n_valid: int = Field(2000, ge=1)
    min_len: int = Field(2, ge=1)
    max_len: int = Field(8, ge=1)
    distribution: DistributionSpec = TRAIN_MIX
    holdout: Tuple[int, ...] = ()
    training_numbers: Optional[int] = Field(None, ge=2)
    graph_nodes: int = Field(8, ge=2)
    hard_fraction: Optional[float] = Field(None, ge=0.0, le=1.0)
    samples: Optional[int] = Field(None, ge=1)


class TrainConfig(StrictConfig):
    """学習設定

    ``scale: full`` ではフル規模のハイパーパラメータ（6+6層、FFN 128、残差1.5、
    ドロップアウト0.1、マスク畳み込み 3×16、ウォームアップ4000）を要求します。
    ``desk`` は層数やステップ数を縮めてもよい縮小版です。
    """
    task: Literal['selection-sort', 'merge', 'add', 'multiply', 'dijkstra', 'prim', 'seq2seq-baseline']
    scale: Literal['desk', 'full'] = 'desk'
    seed: int = 0
    model: ModelConfig = Field(default_factory=ModelConfig)
    data: DataSpec = Field(default_factory=DataSpec)
    optim: OptimConfig = Field(default_factory=OptimConfig)

    @model_validator(mode='after')
    def _check_task(self) -> 'TrainConfig':
        expected_mode = 'seq2seq' if self.task == 'seq2seq-baseline' else 'nee'
        if self.model.mode != expected_mode:
            raise ValueError(f"task {self.task} needs model.mode={expected_mode}, got {self.model.mode}")
        if self.task == 'multiply' and self.model.out_width != 2 * self.model.bit_width:
            raise ValueError("multiply needs output_width = 2 * bit_width")
        if self.task != 'multiply' and self.model.out_width != self.model.bit_width:
            raise ValueError(f"task {self.task} needs output_width = bit_width")
        if self.data.min_len > self.data.max_len:
            raise ValueError("data.min_len must not exceed data.max_len")
        if self.scale == 'full':
            wrong = {k: getattr(self.model, k) for k, v in FULL_MODEL.items() if getattr(self.model, k) != v}
            dim = FULL_DIM.get(self.task, 16)
            if self.model.d != dim:
                wrong['d'] = self.model.d
            if self.optim.warmup != FULL_WARMUP:
                wrong['warmup'] = self.optim.warmup
            if wrong:
                raise ValueError(f"full scale fixes these hyperparameters: {sorted(wrong)}")
        return self


@dataclass(frozen=True)
class TrainResult:
    """学習結果

    Attributes:
        model: 検証精度が最良だったステップのモデル
        losses: 各ステップの学習損失
        validations: (ステップ, 検証exact match) の列
        best_step: 最良の検証ステップ
        stopped_early: 早期終了したか
    """
    model: NEEModel
    losses: Tuple[float, ...]
    validations: Tuple[Tuple[int, float], ...]
    best_step: int
    stopped_early: bool


# ---------------------------------------------------------------------------
# 正解判定
# ---------------------------------------------------------------------------

def exact_match(outputs: Sequence[Token], expected: Sequence[Token]) -> bool:
    """内容と位置が完全に一致するか"""
    return len(outputs) == len(expected) and all(a == b for a, b in zip(outputs, expected))


def elementwise_accuracy(outputs: Sequence[Token], expected: Sequence[Token]) -> float:
    """正しい位置に正しい値が出た割合（不足分と余剰分は誤り）"""
    total = max(len(outputs), len(expected))
    if total == 0:
        return 1.0
    return sum(a == b for a, b in zip(outputs, expected)) / total


def step_accuracy(engine, steps: Sequence[TraceStep]) -> float:
    """1ステップごとのexact match（値、ポインタ、次のマスクがすべて一致）

    ポインタを持たない算術ステップは値だけを比べます。
    """
    if not steps:
        return 0.0
    outcomes = engine.step_batch([s.tokens for s in steps], [s.mask for s in steps])
    correct = 0
    for step, outcome in zip(steps, outcomes):
        if step.pointer is None:
            correct += outcome.value == step.value
        else:
            correct += (outcome.value, outcome.pointer, tuple(outcome.next_mask)) == \
                (step.value, step.pointer, tuple(step.next_mask))
    return correct / len(steps)


# ---------------------------------------------------------------------------
# 学習
# ---------------------------------------------------------------------------

def training_holdout(config: TrainConfig) -> Tuple[int, ...]:
    if config.data.training_numbers is not None:
        return tuple(sorted(holdout_for_training_count(config.data.training_numbers,
                                                       config.model.bit_width, config.seed)))
    return config.data.holdout


def dataset_for(config: TrainConfig) -> Dataset:
    """学習設定からデータセットを生成"""
    data = config.data
    return gen_dataset(
        config.task, data.n_train, data.n_valid, config.seed, data.min_len, data.max_len,
        data.distribution, config.model.bit_width, training_holdout(config), data.graph_nodes,
        data.hard_fraction, data.samples
    )


def _check_dataset(config: TrainConfig, dataset: Dataset) -> None:
    if dataset.task != config.task:
        raise PreconditionError(
            f"Dataset task {dataset.task} does not match training task {config.task}",
            {'dataset_task': dataset.task, 'task': config.task}
        )
    width = dataset.spec.get('width', config.model.bit_width)
    if config.task != 'multiply' and width != config.model.bit_width:
        raise PreconditionError(
            "Dataset and model bit widths disagree",
            {'dataset_width': width, 'model_width': config.model.bit_width}
        )


def _validation_score(model: NEEModel, config: TrainConfig, valid_steps, valid_sequences) -> float:
    if config.model.mode == 'seq2seq':
        decoded = seq2seq_decode(model, [tuple(s) + (END,) for s in valid_sequences], raise_on_budget=False)
        return float(np.mean([exact_match(r.outputs, sorted(s)) for r, s in zip(decoded, valid_sequences)]))
    return step_accuracy(model, valid_steps)


def train(config: TrainConfig, dataset: Optional[Dataset] = None,
          on_validation: Optional[Callable[[int, float], None]] = None) -> TrainResult:
    """モデルの学習

    検証exact matchが ``patience`` 回続けて改善しなければ早期終了し、
    最良だったステップのパラメータを返します。

    Args:
        config: 学習設定
        dataset: 学習データ（省略時は ``config.data`` から生成）
        on_validation: 検証のたびに (ステップ, 精度) を受け取るコールバック

    Raises:
        PreconditionError: データセットのタスクやビット幅がモデルと合わない場合
        TrainingError: 損失やパラメータが非有限値になった場合
    """
    if dataset is None:
        dataset = dataset_for(config)
    _check_dataset(config, dataset)
    optim = config.optim
    seq2seq = config.model.mode == 'seq2seq'
    config_hash = config.config_hash()

    if seq2seq:
        train_items: List[Any] = dataset.sequences('train')
        valid_sequences = dataset.sequences('validation')[:optim.eval_size]
        valid_steps: List[TraceStep] = []
    else:
        train_items = dataset.steps('train')
        valid_sequences = []
        valid_steps = dataset.steps('validation')
        if len(valid_steps) > optim.eval_size:
            pick = np.random.default_rng([config.seed, 1]).choice(len(valid_steps), optim.eval_size, replace=False)
            valid_steps = [valid_steps[i] for i in sorted(pick)]
    if not train_items:
        raise PreconditionError("Dataset has no training examples", {'task': config.task})

    model = NEEModel.initialize(config.model, config.seed)
    params = model.params
    state = AdamState.initial(params)
    schedule = LrSchedule(config.model.d, optim.warmup, optim.lr_factor)
    batch_rng = np.random.default_rng([config.seed, 0])

    losses: List[float] = []
    validations: List[Tuple[int, float]] = []
    best = (-1.0, 0, params)
    stale = 0
    stopped_early = False

    with LogContext(task=config.task, config_hash=config_hash, seed=config.seed):
        logger.info("Training started", details={
            'task': config.task,
            'scale': config.scale,
            'steps': optim.steps,
            'parameters': model.param_count,
            'train_examples': len(train_items),
            'config_hash': config_hash
        })
        for step in range(1, optim.steps + 1):
            index = batch_rng.choice(len(train_items), size=min(optim.batch_size, len(train_items)),
                                     replace=len(train_items) < optim.batch_size)
            items = [train_items[i] for i in index]
            tensors = {name: Tensor(value, requires_grad=True, name=name) for name, value in params.items()}
            dropout_rng = np.random.default_rng([config.seed, step])
            try:
                with Tape() as tape:
                    if seq2seq:
                        loss = seq2seq_loss(tensors, config.model, collate_sequences(items, config.model),
                                            training=True, rng=dropout_rng,
                                            supervise_attention=optim.supervise_attention,
                                            attention_weight=optim.attention_weight)
                    else:
                        loss = nee_loss(tensors, config.model, collate_steps(items, config.model),
                                        training=True, rng=dropout_rng, weights=optim.loss_weights)
            except NumericsError as e:
                raise TrainingError(
                    f"Training diverged at step {step}: {e.message}",
                    {'step': step, 'last_loss': losses[-1] if losses else None, 'cause': e.details}
                )
            grads = backward(tape, loss, tensors)
            params = adam_step(params, grads, state, schedule(step))
            if not all(np.all(np.isfinite(v)) for v in params.values()):
                bad = sorted(name for name, v in params.items() if not np.all(np.isfinite(v)))
                raise TrainingError(
                    f"Parameters became non-finite at step {step}",
                    {'step': step, 'loss': loss.item(), 'parameters': bad}
                )
            losses.append(loss.item())
            if step % optim.log_every == 0:
                logger.metric(step, 'Training loss', loss=losses[-1], lr=schedule(step))

            if step % optim.eval_every == 0 or step == optim.steps:
                score = _validation_score(model.with_params(params, step), config, valid_steps, valid_sequences)
                validations.append((step, score))
                logger.metric(step, 'Validation', exact_match=score)
                if on_validation is not None:
                    on_validation(step, score)
                if score > best[0]:
                    best = (score, step, params)
                    stale = 0
                else:
                    stale += 1
                    if stale >= optim.patience:
                        stopped_early = True
                        logger.info("Early stopping", details={
                            'step': step, 'best_step': best[1], 'best_exact_match': best[0]
                        })
                        break

        _, best_step, best_params = best
        logger.info("Training finished", details={
            'steps': len(losses), 'best_step': best_step, 'final_loss': losses[-1]
        })
    return TrainResult(model.with_params(best_params, best_step), tuple(losses), tuple(validations),
                       best_step, stopped_early)


# ---------------------------------------------------------------------------
# 汎化評価
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    """長さ（ノード数）ごとの評価結果

    Attributes:
        exact_match: 長さ→完全一致率
        elementwise: 長さ→要素ごとの正解率（グラフ: 最短経路は距離、最小全域木は木全体）
        attention: 長さ→ポインタ注意の行最大値の平均
        counts: 長さ→評価数
    """
    task: str
    seed: int
    lengths: Tuple[int, ...]
    exact_match: Dict[int, float] = field(default_factory=dict)
    elementwise: Dict[int, float] = field(default_factory=dict)
    attention: Dict[int, float] = field(default_factory=dict)
    counts: Dict[int, int] = field(default_factory=dict)
    runtime_seconds: float = 0.0
    model_hash: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'task': self.task,
            'seed': self.seed,
            'lengths': list(self.lengths),
            'exact_match': {str(k): v for k, v in self.exact_match.items()},
            'elementwise': {str(k): v for k, v in self.elementwise.items()},
            'attention': {str(k): v for k, v in self.attention.items()},
            'counts': {str(k): v for k, v in self.counts.items()},
            'runtime_seconds': self.runtime_seconds,
            'model_hash': self.model_hash,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'EvalReport':
        def ints(mapping):
            return {int(k): v for k, v in (mapping or {}).items()}
        return cls(data['task'], int(data['seed']), tuple(data['lengths']), ints(data.get('exact_match')),
                   ints(data.get('elementwise')), ints(data.get('attention')), ints(data.get('counts')),
                   float(data.get('runtime_seconds', 0.0)), data.get('model_hash'))

    def to_markdown(self) -> str:
        """長さを列にした表（値は百分率）"""
        unit = 'Nodes' if self.task in GRAPH_TASKS else 'Length'
        header = f"| {unit} | " + ' | '.join(str(n) for n in self.lengths) + ' |'
        rule = '|---|' + '---|' * len(self.lengths)
        rows = [header, rule, self._row('Exact match', self.exact_match),
                self._row('Elementwise', self.elementwise)]
        if self.attention:
            rows.append(self._row('Attention row max', self.attention, percent=False))
        return f"**{self.task}** (seed {self.seed})\n\n" + '\n'.join(rows) + '\n'

    def _row(self, label: str, values: Dict[int, float], percent: bool = True) -> str:
        cells = []
        for n in self.lengths:
            if n not in values:
                cells.append('-')
            elif percent:
                cells.append(f"{100.0 * values[n]:.2f}")
            else:
                cells.append(f"{values[n]:.3f}")
        return f"| {label} | " + ' | '.join(cells) + ' |'


def row_max_statistic(attention: Iterable[np.ndarray]) -> np.ndarray:
    """ステップごとの注意行最大値の平均

    Args:
        attention: 入力ごとの (ステップ数, L) 注意行列

    Returns:
        ステップ番号→平均（そのステップまで進んだ入力だけで平均）
    """
    matrices = [np.asarray(a) for a in attention if len(a)]
    if not matrices:
        return np.zeros(0)
    steps = max(m.shape[0] for m in matrices)
    sums = np.zeros(steps)
    counts = np.zeros(steps)
    for m in matrices:
        sums[:m.shape[0]] += m.max(axis=1)
        counts[:m.shape[0]] += 1
    return sums / counts


def rollouts(model: NEEModel, tokens_list: Sequence[Sequence[Token]]) -> List[Rollout]:
    """NEEは再帰適用、seq2seqベースラインは貪欲デコード（予算切れは例外にしない）"""
    if model.config.mode == 'seq2seq':
        return seq2seq_decode(model, tokens_list, raise_on_budget=False)
    return nee_run_many(model, tokens_list)


def attention_sharpness(model: NEEModel, inputs: Sequence[Sequence[Token]]) -> np.ndarray:
    """デコードの各ステップにおける注意の鋭さ（行最大値の平均）

    NEEはポインタ分布、seq2seqベースラインは最終ブロックの交差注意を使います。
    入力の末尾に終端トークンがなければ補います。
    """
    tokens_list = [tuple(s) if s and is_end(s[-1]) else tuple(s) + (END,) for s in inputs]
    return row_max_statistic(r.attention for r in rollouts(model, tokens_list))


def _chunks(items: Sequence[Any], count: int) -> List[Sequence[Any]]:
    size = max(1, -(-len(items) // max(count, 1)))
    return [items[i:i + size] for i in range(0, len(items), size)]


def _sort_chunk(model: NEEModel, sequences: Sequence[List[int]]) -> List[Tuple[bool, float, Optional[float]]]:
    runs = rollouts(model, [tuple(s) + (END,) for s in sequences])
    results = []
    for rollout, sequence in zip(runs, sequences):
        expected = sorted(sequence)
        outputs = rollout.outputs if rollout.terminated else ()
        sharp = float(rollout.attention.max(axis=1).mean()) if len(rollout.attention) else None
        results.append((exact_match(outputs, expected), elementwise_accuracy(outputs, expected), sharp))
    return results


def _merge_sort_chunk(model: NEEModel, sequences: Sequence[List[int]]) -> List[Tuple[bool, float, Optional[float]]]:
    results = []
    for sequence in sequences:
        expected = sorted(sequence)
        try:
            outputs = compose_merge_sort(model, sequence)
        except NEEError:
            outputs = []
        results.append((exact_match(outputs, expected), elementwise_accuracy(outputs, expected), None))
    return results


def _graph_chunk(model: NEEModel, task: str, add_engine, graphs) -> List[Tuple[bool, float, Optional[float]]]:
    results = []
    for graph in graphs:
        try:
            if task == 'dijkstra':
                expected = shortest_distances(graph, 0)
                outputs = compose_dijkstra(model, add_engine, graph, 0)
                results.append((exact_match(outputs, expected), elementwise_accuracy(outputs, expected), None))
            else:
                edges = compose_prim(model, graph, 0)
                correct = is_spanning_tree(graph, edges) and spanning_tree_weight(edges) == mst_weight(graph)
                results.append((correct, float(correct), None))
        except NEEError:
            results.append((False, 0.0, None))
    return results


def evaluate_generalization(model: NEEModel, task: str, lengths: Sequence[int] = GENERALIZATION_LENGTHS,
                            n_per_length: int = 100, seed: int = 0,
                            distribution: DistributionSpec = TEST_MIX, workers: Optional[int] = None,
                            add_engine=None, families: Sequence[str] = FAMILIES) -> EvalReport:
    """学習より長い入力（大きいグラフ）での汎化評価

    予算内に終端しなかった実行や、合成中のエラーは誤答として数えます。
    モデルは変更しません。

    Args:
        model: 評価するモデル
        task: selection-sort, merge, seq2seq-baseline, dijkstra, prim
        lengths: 評価する長さ（グラフはノード数）
        n_per_length: 長さごとの評価数（グラフは族ごとに均等に分ける）
        seed: 乱数シード
        distribution: 数列の分布（既定は random 60% / close 40%）
        workers: 評価スレッド数（省略時は1）
        add_engine: 最短経路で使う加算エンジン（省略時は厳密な加算）
        families: グラフ族
    """
    if task not in SEQUENCE_TASKS + GRAPH_TASKS:
        raise PreconditionError(
            f"Generalization evaluation does not cover task {task}",
            {'task': task, 'supported': list(SEQUENCE_TASKS + GRAPH_TASKS)}
        )
    expected_mode = 'seq2seq' if task == 'seq2seq-baseline' else 'nee'
    if model.config.mode != expected_mode:
        raise PreconditionError(f"Task {task} needs a {expected_mode}-mode model", {'mode': model.config.mode})
    add_engine = add_engine or OracleEngine('add', width=model.config.out_width)
    workers = max(1, workers or 1)
    started = time.perf_counter()
    report = EvalReport(task, seed, tuple(lengths))
    streams = np.random.SeedSequence(seed).spawn(len(lengths))

    with ThreadPoolExecutor(max_workers=workers) as executor:
        for length, stream in zip(lengths, streams):
            rng = np.random.default_rng(stream)
            if task in GRAPH_TASKS:
                per_family = max(1, n_per_length // len(families))
                instances = [gen_graph(family, length, seed=rng, connected=True)
                             for family in families for _ in range(per_family)]
                run = lambda chunk: _graph_chunk(model, task, add_engine, chunk)
            else:
                instances = [sample_sequence(distribution, length, rng, model.config.bit_width)
                             for _ in range(n_per_length)]
                run = (lambda chunk: _merge_sort_chunk(model, chunk)) if task == 'merge' else \
                    (lambda chunk: _sort_chunk(model, chunk))
            results = [r for chunk in executor.map(run, _chunks(instances, workers)) for r in chunk]

            report.counts[length] = len(results)
            report.exact_match[length] = float(np.mean([r[0] for r in results]))
            report.elementwise[length] = float(np.mean([r[1] for r in results]))
            sharp = [r[2] for r in results if r[2] is not None]
            if sharp:
                report.attention[length] = float(np.mean(sharp))
            logger.info("Evaluated length", details={
                'task': task, 'length': length, 'exact_match': report.exact_match[length],
                'count': len(results)
            })

    report.runtime_seconds = time.perf_counter() - started
    return report


# ---------------------------------------------------------------------------
# 算術の評価
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ArithmeticReport:
    """算術NEEの評価結果

    Attributes:
        unseen_pairs: 学習数同士の未学習ペアでの正解率
        unseen_numbers: 保留数を含むペアでの正解率（保留なしならNone）
        zero_identity: 0 + x = x（乗算は 0 · x = 0）が全てのxで成り立つか
        end_identity: e + x = e が全てのxで成り立つか（乗算はNone）
    """
    op: str
    training_numbers: int
    unseen_pairs: float
    unseen_numbers: Optional[float]
    zero_identity: bool
    end_identity: Optional[bool]
    pairs_evaluated: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            'op': self.op,
            'training_numbers': self.training_numbers,
            'unseen_pairs': self.unseen_pairs,
            'unseen_numbers': self.unseen_numbers,
            'zero_identity': self.zero_identity,
            'end_identity': self.end_identity,
            'pairs_evaluated': self.pairs_evaluated,
        }


def _value_accuracy(engine, steps: Sequence[TraceStep]) -> Optional[float]:
    if not steps:
        return None
    outcomes = engine.step_batch([s.tokens for s in steps], [s.mask for s in steps])
    return float(np.mean([o.value == s.value for o, s in zip(outcomes, steps)]))


def _sample(steps: Sequence[TraceStep], limit: int, rng: np.random.Generator) -> List[TraceStep]:
    if len(steps) <= limit:
        return list(steps)
    return [steps[i] for i in sorted(rng.choice(len(steps), size=limit, replace=False))]


def evaluate_arithmetic(model, data: ArithmeticData, max_pairs: int = 10000, seed: int = 0) -> ArithmeticReport:
    """加算・乗算NEEの評価

    未学習ペアと保留数を含むペアの正解率、および恒等式を検査します。
    ``model`` には ``step_batch`` を持つ任意のエンジンを渡せます。
    """
    rng = np.random.default_rng(seed)
    unseen_pairs = _sample(data.eval_unseen_pairs, max_pairs, rng)
    unseen_numbers = _sample(data.eval_unseen_numbers, max_pairs, rng)
    numbers = range(1 << data.width)
    zero = [((0, x), (0, 0)) for x in numbers]
    zero_out = model.step_batch([t for t, _ in zero], [m for _, m in zero])
    zero_ok = all(o.value == (x if data.op == 'add' else 0) for o, x in zip(zero_out, numbers))
    end_ok = None
    if data.op == 'add':
        end_out = model.step_batch([(END, x) for x in numbers], [(0, 0)] * len(numbers))
        end_ok = all(is_end(o.value) for o in end_out)
    return ArithmeticReport(
        op=data.op,
        training_numbers=len(data.training_numbers),
        unseen_pairs=_value_accuracy(model, unseen_pairs) or 0.0,
        unseen_numbers=_value_accuracy(model, unseen_numbers),
        zero_identity=zero_ok,
        end_identity=end_ok,
        pairs_evaluated=len(unseen_pairs) + len(unseen_numbers)
    )


def arithmetic_table(reports: Sequence[ArithmeticReport]) -> str:
    """学習数の掃引を列にした表（値は百分率）"""
    def percent(value):
        return '-' if value is None else f"{100.0 * value:.2f}"

    header = '| Training numbers | ' + ' | '.join(str(r.training_numbers) for r in reports) + ' |'
    rule = '|---|' + '---|' * len(reports)
    pairs = '| Unseen pairs | ' + ' | '.join(percent(r.unseen_pairs) for r in reports) + ' |'
    numbers = '| Unseen numbers | ' + ' | '.join(percent(r.unseen_numbers) for r in reports) + ' |'
    return '\n'.join([header, rule, pairs, numbers]) + '\n'
