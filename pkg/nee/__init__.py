"""Neural Execution Engines

マスク付きトランスフォーマー（NEE）に比較・加算などの部分手続きを
学習させ、ホスト側の制御ループから合成してソートや最短経路、最小全域木を
実行するライブラリ。自動微分・モデル・トレース生成・学習・評価までを
NumPyだけで実装しています。
"""

__version__ = '0.1.0'

# 基本機能を順序立てて明示的にインポート
from .platform import PlatformUtils
from .errors import (
    BaseError,
    NEEError,
    NumericsError,
    ShapeError,
    EncodingError,
    PreconditionError,
    NonDifferentiableError,
    NonTerminationError,
    TraceError,
    GraphError,
    TrainingError,
    ConfigError,
    CheckpointError,
    ConfigMismatchError,
    DatasetError,
    ErrorHandler
)
from .logging import (
    setup_logging,
    get_logger,
    StructuredLogger,
    LogContext,
    JSONFormatter,
    SafeRotatingFileHandler
)
from .env import EnvVarManager
from .config import Settings, load_yaml_config, parse_config, config_hash
from .numerics import Tensor, Tape, backward, grad_check, AdamState, adam_step, LrSchedule
from .numeral import END, BitWord, EmbeddingTable, encode_uint, decode_bits, embed
from .rules import TraceStep, TraceGroup, StepOutcome, OracleEngine
from .model import (
    Toggles,
    ModelConfig,
    NEEModel,
    nee_step,
    nee_run,
    nee_run_many,
    seq2seq_decode
)
from .checkpoint import Checkpoint, save_checkpoint, load_checkpoint
from .graphs import WeightedGraph, gen_graph
from .traces import (
    DistributionSpec,
    sample_sequence,
    gen_selection_sort_trace,
    gen_merge_trace,
    gen_arithmetic_pairs,
    gen_dijkstra_trace,
    gen_prim_trace
)
from .dataset import Dataset, gen_dataset, read_dataset, write_dataset
from .compose import compose_dijkstra, compose_prim, compose_merge_sort
from .harness import (
    TrainConfig,
    EvalReport,
    train,
    evaluate_generalization,
    evaluate_arithmetic,
    attention_sharpness
)
from .ablation import AblationTable, run_ablation
from .workbench import PcaProjection, export_attention, export_embeddings_pca, neighbor_interpolation_score

# 公開APIを明示的に列挙
__all__ = [
    # エラー関連
    'BaseError',
    'NEEError',
    'NumericsError',
    'ShapeError',
    'EncodingError',
    'PreconditionError',
    'NonDifferentiableError',
    'NonTerminationError',
    'TraceError',
    'GraphError',
    'TrainingError',
    'ConfigError',
    'CheckpointError',
    'ConfigMismatchError',
    'DatasetError',
    'ErrorHandler',

    # ロギング関連
    'setup_logging',
    'get_logger',
    'LogContext',
    'StructuredLogger',
    'JSONFormatter',
    'SafeRotatingFileHandler',

    # プラットフォーム・設定
    'PlatformUtils',
    'EnvVarManager',
    'Settings',
    'load_yaml_config',
    'parse_config',
    'config_hash',

    # 数値計算
    'Tensor',
    'Tape',
    'backward',
    'grad_check',
    'AdamState',
    'adam_step',
    'LrSchedule',

    # 数の表現
    'END',
    'BitWord',
    'EmbeddingTable',
    'encode_uint',
    'decode_bits',
    'embed',

    # モデル
    'Toggles',
    'ModelConfig',
    'NEEModel',
    'StepOutcome',
    'OracleEngine',
    'nee_step',
    'nee_run',
    'nee_run_many',
    'seq2seq_decode',
    'Checkpoint',
    'save_checkpoint',
    'load_checkpoint',

    # トレース・データ
    'TraceStep',
    'TraceGroup',
    'DistributionSpec',
    'sample_sequence',
    'gen_selection_sort_trace',
    'gen_merge_trace',
    'gen_arithmetic_pairs',
    'gen_dijkstra_trace',
    'gen_prim_trace',
    'WeightedGraph',
    'gen_graph',
    'Dataset',
    'gen_dataset',
    'read_dataset',
    'write_dataset',

    # 合成・学習・評価
    'compose_dijkstra',
    'compose_prim',
    'compose_merge_sort',
    'TrainConfig',
    'EvalReport',
    'train',
    'evaluate_generalization',
    'evaluate_arithmetic',
    'attention_sharpness',
    'AblationTable',
    'run_ablation',

    # 観察
    'PcaProjection',
    'export_attention',
    'export_embeddings_pca',
    'neighbor_interpolation_score'
]
