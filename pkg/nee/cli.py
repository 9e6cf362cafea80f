"""コマンドラインインターフェース

使用方法:
    nee gen-data --task selection-sort --n 20000 --max-len 8 --seed 7
    nee train --config configs/selection_sort_desk.yaml
    nee eval --checkpoint runs/selection-sort.nee --task selection-sort --lengths 25,50,75,100
    nee compose --algorithm dijkstra --oracle --nodes 10
    nee ablate --config configs/seq2seq_baseline_desk.yaml --variants vanilla,all_mod,all_mod-C5
    nee export-attention --checkpoint m.nee --input 5,2,7 --output attention.csv
    nee export-pca --checkpoint add.nee --output pca.json
    nee report --input report.json

成功時は結果のJSONをstdoutに出力して終了コード0、失敗時はエラーの
JSON（success, error, error_code, details, exit_code）をstderrに出力します。
乱数はすべて --seed（省略時は環境変数 NEE_SEED）で決まります。
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from .ablation import DEFAULT_VARIANTS, AblationTable, run_ablation
from .checkpoint import load_checkpoint, save_checkpoint
from .compose import compose_dijkstra, compose_merge_sort, compose_prim
from .config import Settings, load_yaml_config, parse_config
from .dataset import TASKS, gen_dataset, write_dataset
from .errors import ConfigError, PreconditionError, create_error_handler
from .graphs import FAMILIES, gen_graph, mst_weight, shortest_distances, spanning_tree_weight
from .harness import (
    ArithmeticReport, EvalReport, TrainConfig, arithmetic_table, evaluate_arithmetic, evaluate_generalization,
    train, training_holdout,
)
from .logging import LogContext, StructuredLogger
from .numeral import END, Token, tokens_to_str
from .platform import PlatformUtils
from .rules import OracleEngine
from .traces import TEST_MIXES, TRAIN_MIX, gen_arithmetic_pairs, holdout_for_training_count
from .workbench import export_attention, export_embeddings_pca, neighbor_interpolation_score


DISTRIBUTIONS = {'train': TRAIN_MIX, **TEST_MIXES}


class CommandParser(argparse.ArgumentParser):
    """使い方の誤りを ConfigError として送出するパーサ"""

    def error(self, message):
        raise ConfigError(f"Invalid command line: {message}", {'usage': self.format_usage().strip()})


def _int_list(text: str) -> List[int]:
    try:
        return [int(x) for x in text.split(',') if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _token_list(text: str) -> List[Token]:
    try:
        return [END if x.strip() == 'e' else int(x) for x in text.split(',') if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers or 'e', got {text!r}")


def _str_list(text: str) -> List[str]:
    return [x.strip() for x in text.split(',') if x.strip()]


def build_parser() -> CommandParser:
    parser = CommandParser(prog='nee', description="Neural execution engines: data, training, evaluation")
    commands = parser.add_subparsers(dest='command', parser_class=CommandParser)
    commands.required = True

    def command(name: str, help_text: str) -> CommandParser:
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument('--seed', type=int, default=None, help="乱数シード（既定: NEE_SEED）")
        return sub

    gen = command('gen-data', "トレースデータセットを生成")
    gen.add_argument('--task', required=True, choices=TASKS)
    gen.add_argument('--n', type=int, default=20000, help="学習レコード数")
    gen.add_argument('--n-valid', type=int, default=None, help="検証レコード数（既定: n/10）")
    gen.add_argument('--min-len', type=int, default=2)
    gen.add_argument('--max-len', type=int, default=8)
    gen.add_argument('--distribution', choices=sorted(DISTRIBUTIONS), default='train')
    gen.add_argument('--graph-nodes', type=int, default=8)
    gen.add_argument('--training-numbers', type=int, default=None, help="算術で学習に使う数の個数")
    gen.add_argument('--format', choices=('binary', 'json'), default='binary')
    gen.add_argument('--output', default=None)

    tr = command('train', "設定ファイルに従って学習")
    tr.add_argument('--config', required=True)
    tr.add_argument('--output', default=None, help="チェックポイントの出力先")
    tr.add_argument('--steps', type=int, default=None, help="学習ステップ数の上書き")

    ev = command('eval', "汎化評価")
    ev.add_argument('--checkpoint', required=True)
    ev.add_argument('--task', required=True, choices=TASKS)
    ev.add_argument('--lengths', type=_int_list, default=[25, 50, 75, 100])
    ev.add_argument('--n', type=int, default=100, help="長さごとの評価数")
    ev.add_argument('--mix', choices=sorted(TEST_MIXES), default='mixed')
    ev.add_argument('--workers', type=int, default=None)
    ev.add_argument('--add-checkpoint', default=None, help="最短経路で使う加算NEE")
    ev.add_argument('--output', default=None, help="JSONレポートの出力先")

    co = command('compose', "NEEを合成してアルゴリズムを実行")
    co.add_argument('--algorithm', required=True, choices=('dijkstra', 'prim', 'merge-sort'))
    co.add_argument('--checkpoint', default=None, help="最小値選択（またはマージ）のNEE")
    co.add_argument('--add-checkpoint', default=None)
    co.add_argument('--oracle', action='store_true', help="厳密な規則で置き換える")
    co.add_argument('--family', choices=FAMILIES, default='erdos_renyi')
    co.add_argument('--nodes', type=int, default=8)
    co.add_argument('--sequence', type=_int_list, default=None)

    ab = command('ablate', "アブレーション")
    ab.add_argument('--config', required=True)
    ab.add_argument('--variants', type=_str_list, default=list(DEFAULT_VARIANTS))
    ab.add_argument('--mixes', type=_str_list, default=['mixed', 'random', 'hard'])
    ab.add_argument('--encodings', type=_str_list, default=['one_hot', 'binary'])
    ab.add_argument('--lengths', type=_int_list, default=[8])
    ab.add_argument('--n', type=int, default=100)
    ab.add_argument('--output', default=None)

    at = command('export-attention', "デコーダ注意をCSVに書き出す")
    at.add_argument('--checkpoint', required=True)
    at.add_argument('--input', type=_token_list, required=True)
    at.add_argument('--output', required=True)

    pca = command('export-pca', "埋め込みのPCAをJSONに書き出す")
    pca.add_argument('--checkpoint', required=True)
    pca.add_argument('--holdout', type=_int_list, default=None, help="保留数（既定: チェックポイントの記録）")
    pca.add_argument('--output', required=True)

    rep = command('report', "JSONレポートをmarkdownの表にする")
    rep.add_argument('--input', nargs='+', required=True)
    rep.add_argument('--output', default=None)
    return parser


# ---------------------------------------------------------------------------
# コマンド
# ---------------------------------------------------------------------------

def _default_output(settings: Settings, name: str) -> Path:
    return Path(settings.output_dir) / name


def _gen_data(args, settings: Settings, logger: StructuredLogger) -> Dict[str, Any]:
    holdout = ()
    if args.training_numbers is not None:
        holdout = tuple(sorted(holdout_for_training_count(args.training_numbers, seed=args.seed)))
    n_valid = args.n_valid if args.n_valid is not None else max(1, args.n // 10)
    dataset = gen_dataset(args.task, args.n, n_valid, args.seed, args.min_len, args.max_len,
                          DISTRIBUTIONS[args.distribution], holdout=holdout, graph_nodes=args.graph_nodes)
    suffix = 'json' if args.format == 'json' else 'dataset'
    path = Path(args.output) if args.output else _default_output(settings, f"{args.task}.{suffix}")
    write_dataset(path, dataset, args.format)
    return {'path': str(path), 'task': args.task, 'train': len(dataset.train), 'validation': len(dataset.validation)}


def _load_train_config(path: str, seed: Optional[int], steps: Optional[int] = None) -> TrainConfig:
    data = load_yaml_config(path)
    if seed is not None:
        data['seed'] = seed
    if steps is not None:
        data.setdefault('optim', {})['steps'] = steps
    return parse_config(TrainConfig, data, source=path)


def _train(args, settings: Settings, logger: StructuredLogger) -> Dict[str, Any]:
    config = _load_train_config(args.config, args.seed, args.steps)
    logger.info("Training configuration loaded", details={
        'config': args.config, 'config_hash': config.config_hash(), 'seed': config.seed
    })
    result = train(config)
    holdout = list(training_holdout(config))
    path = Path(args.output) if args.output else _default_output(settings, f"{config.task}.nee")
    save_checkpoint(path, result.model, {
        'task': config.task,
        'train_config': config.model_dump(mode='json'),
        'train_config_hash': config.config_hash(),
        'holdout': holdout,
        'best_step': result.best_step,
        'stopped_early': result.stopped_early,
        'losses': list(result.losses),
        'validations': [list(v) for v in result.validations],
    })
    return {
        'path': str(path),
        'task': config.task,
        'config_hash': config.config_hash(),
        'steps': len(result.losses),
        'final_loss': result.losses[-1],
        'best_step': result.best_step,
        'stopped_early': result.stopped_early,
    }


def _eval(args, settings: Settings, logger: StructuredLogger) -> Dict[str, Any]:
    checkpoint = load_checkpoint(args.checkpoint)
    logger.info("Evaluating checkpoint", details={
        'checkpoint': args.checkpoint, 'config_hash': checkpoint.config.config_hash(), 'seed': args.seed
    })
    if args.task in ('add', 'multiply'):
        holdout = checkpoint.metadata.get('holdout', [])
        data = gen_arithmetic_pairs(args.task, checkpoint.config.bit_width, holdout, args.seed)
        report = evaluate_arithmetic(checkpoint.model, data, seed=args.seed)
        content = report.to_dict()
        markdown = arithmetic_table([report])
    else:
        add_engine = load_checkpoint(args.add_checkpoint).model if args.add_checkpoint else None
        report = evaluate_generalization(checkpoint.model, args.task, args.lengths, args.n, args.seed,
                                         TEST_MIXES[args.mix], args.workers or settings.eval_workers, add_engine)
        report.model_hash = checkpoint.config.config_hash()
        content = report.to_dict()
        markdown = report.to_markdown()
    if args.output:
        PlatformUtils.safe_file_write(args.output, json.dumps(content, indent=2, sort_keys=True))
    return {'report': content, 'markdown': markdown}


def _compose(args, settings: Settings, logger: StructuredLogger) -> Dict[str, Any]:
    if args.oracle:
        engine = OracleEngine('merge' if args.algorithm == 'merge-sort' else 'select')
    elif args.checkpoint:
        engine = load_checkpoint(args.checkpoint).model
    else:
        raise ConfigError("compose needs --checkpoint or --oracle", {'usage': 'nee compose --oracle ...'})
    if args.algorithm == 'merge-sort':
        if args.sequence is None:
            raise ConfigError("merge-sort needs --sequence", {'usage': 'nee compose --algorithm merge-sort --sequence 4,1,3,2'})
        result = compose_merge_sort(engine, args.sequence)
        expected = sorted(args.sequence)
        return {'result': result, 'expected': expected, 'match': result == expected}

    graph = gen_graph(args.family, args.nodes, seed=args.seed, connected=args.algorithm == 'prim')
    if args.algorithm == 'dijkstra':
        if args.oracle or not args.add_checkpoint:
            add_engine = OracleEngine('add')
        else:
            add_engine = load_checkpoint(args.add_checkpoint).model
        distances = compose_dijkstra(engine, add_engine, graph, 0)
        expected = shortest_distances(graph, 0)
        return {'graph': graph.to_record(), 'result': tokens_to_str(distances),
                'expected': tokens_to_str(expected), 'match': distances == expected}
    edges = compose_prim(engine, graph, 0)
    weight = spanning_tree_weight(edges)
    return {'graph': graph.to_record(), 'result': sorted(list(e) for e in edges), 'weight': weight,
            'expected_weight': mst_weight(graph), 'match': weight == mst_weight(graph)}


def _ablate(args, settings: Settings, logger: StructuredLogger) -> Dict[str, Any]:
    config = _load_train_config(args.config, args.seed)
    logger.info("Ablation configuration loaded", details={
        'config': args.config, 'config_hash': config.config_hash(), 'seed': config.seed
    })
    table = run_ablation(config, args.variants, args.mixes, args.encodings, args.lengths, args.n)
    if args.output:
        PlatformUtils.safe_file_write(args.output, table.to_json())
    return {'table': table.to_dict(), 'markdown': table.to_markdown()}


def _export_attention(args, settings: Settings, logger: StructuredLogger) -> Dict[str, Any]:
    checkpoint = load_checkpoint(args.checkpoint)
    matrix = export_attention(checkpoint.model, args.input, args.output)
    return {'path': args.output, 'steps': int(matrix.shape[0]), 'positions': int(matrix.shape[1])}


def _export_pca(args, settings: Settings, logger: StructuredLogger) -> Dict[str, Any]:
    checkpoint = load_checkpoint(args.checkpoint)
    holdout = args.holdout if args.holdout is not None else checkpoint.metadata.get('holdout', [])
    projection = export_embeddings_pca(checkpoint.model, holdout, args.output)
    content = {
        'path': args.output,
        'explained_variance_ratio': projection.explained_variance_ratio.tolist(),
        'total_explained': projection.total_explained,
    }
    if holdout:
        content['neighbor_interpolation_score'] = neighbor_interpolation_score(checkpoint.model, holdout)
    return content


def render_report(content: Any) -> str:
    """評価・算術・アブレーションのJSONをmarkdownにする"""
    if isinstance(content, list):
        if all(isinstance(c, dict) and 'op' in c for c in content):
            return arithmetic_table([ArithmeticReport(**c) for c in content])
        return '\n'.join(render_report(c) for c in content)
    if not isinstance(content, dict):
        raise PreconditionError("Report content must be a JSON object or list", {'type': type(content).__name__})
    if 'report' in content:
        return render_report(content['report'])
    if 'table' in content:
        return render_report(content['table'])
    if 'variants' in content:
        return AblationTable.from_dict(content).to_markdown()
    if 'op' in content:
        return arithmetic_table([ArithmeticReport(**content)])
    if 'exact_match' in content:
        return EvalReport.from_dict(content).to_markdown()
    raise PreconditionError("Unrecognized report content", {'keys': sorted(content)})


def _report(args, settings: Settings, logger: StructuredLogger) -> Dict[str, Any]:
    blocks = []
    for path in args.input:
        text = PlatformUtils.safe_file_read(path)
        if text is None:
            raise ConfigError(f"Report file not found: {path}", {'path': path})
        try:
            content = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Report file is not valid JSON: {path}", {'path': path, 'error': str(e)})
        blocks.append(render_report(content))
    markdown = '\n'.join(blocks)
    if args.output:
        PlatformUtils.safe_file_write(args.output, markdown)
    return {'markdown': markdown}


COMMANDS = {
    'gen-data': _gen_data,
    'train': _train,
    'eval': _eval,
    'compose': _compose,
    'ablate': _ablate,
    'export-attention': _export_attention,
    'export-pca': _export_pca,
    'report': _report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """エントリポイント

    Returns:
        終了コード（成功0、失敗1、使い方の誤り2）
    """
    settings = None
    logger = None
    try:
        settings = Settings()
        logger = settings.setup_logger()
        args = build_parser().parse_args(argv)
        if args.seed is None:
            args.seed = settings.seed
        with LogContext(command=args.command, seed=args.seed):
            logger.info("Command started", details={'command': args.command, 'seed': args.seed})
            result = COMMANDS[args.command](args, settings, logger)
            logger.info("Command finished", details={'command': args.command})
    except Exception as e:
        if logger is None:
            from .logging import get_logger
            logger = get_logger('nee.cli')
        outcome = create_error_handler(logger).handle(e, {'argv': list(argv) if argv is not None else sys.argv[1:]})
        print(json.dumps(outcome, default=str, ensure_ascii=False), file=sys.stderr)
        return outcome['exit_code']

    markdown = result.pop('markdown', None)
    if args.command == 'report' and markdown is not None:
        print(markdown)
    else:
        print(json.dumps({'success': True, **result}, default=str, ensure_ascii=False, indent=2))
    return 0


if __name__ == '__main__':
    sys.exit(main())
