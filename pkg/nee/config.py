"""設定管理モジュール

実行時設定は環境変数から、学習・モデル設定はYAMLファイルから読み込みます。

環境設定:
- NEE_ENV: 実行環境 (production, test, development)

ロギング設定:
- NEE_LOG_LEVEL: ログレベル (INFO, DEBUG, etc.)
- NEE_LOG_FORMAT: ログフォーマット (json)
- NEE_LOG_FILE: ログファイル名

実行設定:
- NEE_SEED: 既定の乱数シード（CLIの --seed が優先）
- NEE_OUTPUT_DIR: 成果物の既定出力先
- NEE_EVAL_WORKERS: 評価の並列ワーカー数
"""

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Type, TypeVar, Union

import yaml
from pydantic import BaseModel, ConfigDict, ValidationError

from .env import EnvVarManager
from .errors import ConfigError
from .logging import StructuredLogger, get_logger, setup_logging


ENVIRONMENTS = ('production', 'development', 'test')

M = TypeVar('M', bound=BaseModel)


class StrictConfig(BaseModel):
    """設定モデルの基底クラス

    未知のキーを拒否し、生成後は変更できません。
    """
    model_config = ConfigDict(extra='forbid', frozen=True)

    def canonical_json(self) -> str:
        return canonical_json(self.model_dump(mode='json'))

    def config_hash(self) -> str:
        return config_hash(self.model_dump(mode='json'))


def canonical_json(data: Any) -> str:
    """キーをソートし空白を除いた正規JSON文字列"""
    return json.dumps(data, sort_keys=True, separators=(',', ':'), ensure_ascii=False)


def config_hash(data: Union[BaseModel, Dict[str, Any]]) -> str:
    """設定の正規JSONに対するSHA-256

    Args:
        data: pydanticモデルまたは辞書

    Returns:
        16進文字列のハッシュ
    """
    if isinstance(data, BaseModel):
        data = data.model_dump(mode='json')
    return hashlib.sha256(canonical_json(data).encode('utf-8')).hexdigest()


def load_yaml_config(path: Union[str, Path]) -> Dict[str, Any]:
    """YAML設定ファイルの読み込み

    Args:
        path: 設定ファイルのパス

    Returns:
        設定の辞書

    Raises:
        ConfigError: ファイルが存在しない、YAMLとして読めない、マッピングでない場合
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(
            f"Configuration file not found: {path}",
            {'path': str(path)}
        )

    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(
            f"Invalid YAML in configuration file {path}: {e}",
            {'path': str(path), 'error': str(e)}
        )

    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(
            f"Configuration file must contain a mapping: {path}",
            {'path': str(path), 'type': type(data).__name__}
        )
    return data


def parse_config(model_cls: Type[M], data: Dict[str, Any], source: Optional[str] = None) -> M:
    """辞書をpydantic設定モデルに変換

    Raises:
        ConfigError: 検証に失敗した場合（pydanticのエラー一覧をdetailsに含める）
    """
    try:
        return model_cls.model_validate(data)
    except ValidationError as e:
        errors = [
            {'location': '.'.join(str(part) for part in err['loc']), 'message': err['msg']}
            for err in e.errors()
        ]
        raise ConfigError(
            f"Invalid {model_cls.__name__}" + (f" in {source}" if source else ''),
            {'model': model_cls.__name__, 'source': source, 'errors': errors}
        )


@dataclass
class LoggingConfig:
    """ロギング設定"""
    level: str = 'INFO'
    format: str = 'json'
    file: str = 'nee.log'


class Settings:
    """実行時設定

    環境変数から読み込み、test/development環境では出力を詳細化します。
    """

    def __init__(self, env: Optional[EnvVarManager] = None):
        self._env_vars = env or EnvVarManager()
        self.environment = self._env_vars.get('ENV', 'production')
        if self.environment not in ENVIRONMENTS:
            raise ConfigError(
                f"Invalid environment: {self.environment}",
                {'parameter': self._env_vars.full_key('ENV'), 'value': self.environment,
                 'expected': list(ENVIRONMENTS)}
            )

        self._logging_config = LoggingConfig(
            level=self._env_vars.get('LOG_LEVEL', 'INFO'),
            format=self._env_vars.get('LOG_FORMAT', 'json'),
            file=self._env_vars.get('LOG_FILE', 'nee.log')
        )
        self.seed = self._env_vars.get_int('SEED', 0)
        self.output_dir = self._env_vars.get('OUTPUT_DIR', 'runs')
        self.eval_workers = self._env_vars.get_int('EVAL_WORKERS', 1)
        if self.eval_workers < 1:
            raise ConfigError(
                f"NEE_EVAL_WORKERS must be positive: {self.eval_workers}",
                {'parameter': self._env_vars.full_key('EVAL_WORKERS'), 'value': self.eval_workers}
            )

        self._adjust_config_for_environment()

    def _adjust_config_for_environment(self):
        """環境に応じて設定を調整

        明示的に指定されたログ設定は上書きしません。
        """
        if self.environment == 'test':
            if self._env_vars.get('LOG_LEVEL') is None:
                self._logging_config.level = 'DEBUG'
            if self._env_vars.get('LOG_FILE') is None:
                self._logging_config.file = 'nee_test.log'
        elif self.environment == 'development':
            if self._env_vars.get('LOG_LEVEL') is None:
                self._logging_config.level = 'DEBUG'
            if self._env_vars.get('LOG_FILE') is None:
                self._logging_config.file = 'nee_dev.log'

    @property
    def logging(self) -> Dict[str, Any]:
        """ロギングの設定を取得"""
        return {
            'level': self._logging_config.level,
            'format': self._logging_config.format,
            'file': self._logging_config.file
        }

    def setup_logger(self, **context) -> StructuredLogger:
        """ロギングを構成し、環境情報付きのロガーを返す"""
        setup_logging(self.logging)
        logger = get_logger('nee', {'environment': self.environment, **context})
        logger.debug("Settings loaded", details={
            'environment': self.environment,
            'log_level': self._logging_config.level,
            'log_file': self._logging_config.file,
            'seed': self.seed,
            'output_dir': self.output_dir,
            'eval_workers': self.eval_workers
        })
        return logger

    def get_config(self) -> Dict[str, Any]:
        """全ての設定を取得"""
        return {
            'environment': self.environment,
            'logging': self.logging,
            'seed': self.seed,
            'output_dir': self.output_dir,
            'eval_workers': self.eval_workers
        }
