"""NEEのロギング機能

JSON形式のログ出力とログローテーションを提供します。
学習ループの損失・検証指標も同じJSON行として出力され、
``details`` にはNumPyのスカラーや配列をそのまま渡せます。
"""

import logging
import json
import os
import sys
import contextvars
from logging.handlers import RotatingFileHandler
from typing import Dict, Any, Optional
from pathlib import Path

import numpy as np

from .platform import PlatformUtils


LOGGER_NAME = 'nee'

# LogContextで積まれた一時コンテキスト（スレッド/タスクごと）
_active_context: contextvars.ContextVar = contextvars.ContextVar('nee_log_context', default={})


def _json_default(value: Any) -> Any:
    """json.dumpsが扱えない値の変換"""
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (set, frozenset)):
        return sorted(value, key=repr)
    if isinstance(value, Path):
        return str(value)
    if value == float('inf'):
        return 'e'
    return repr(value)


class JSONFormatter(logging.Formatter):
    """JSON形式のログフォーマッタ"""

    def format(self, record: logging.LogRecord) -> str:
        """ログレコードをJSON形式に変換"""
        log_data = {
            'timestamp': self.formatTime(record),
            'level': record.levelname,
            'logger': record.name,
            'message': record.getMessage(),
            'module': record.module,
            'function': record.funcName,
            'line': record.lineno,
            'details': {}
        }

        details = getattr(record, 'details', None)
        if isinstance(details, dict):
            log_data['details'] = details

        if record.exc_info and record.exc_info[0] is not None:
            log_data['error'] = {
                'type': record.exc_info[0].__name__,
                'message': str(record.exc_info[1]),
                'traceback': self.formatException(record.exc_info)
            }

        try:
            return json.dumps(log_data, ensure_ascii=False, default=_json_default)
        except Exception as e:
            # JSON変換に失敗した場合のフォールバック
            fallback_data = {
                'timestamp': self.formatTime(record),
                'level': 'ERROR',
                'message': 'Failed to format log message',
                'error': str(e),
                'original_message': record.getMessage(),
                'details': {}
            }
            return json.dumps(fallback_data, ensure_ascii=False)


class SafeRotatingFileHandler(RotatingFileHandler):
    """親ディレクトリを自動作成し、1レコードごとにフラッシュするRotatingFileHandler"""

    def __init__(self, filename, **kwargs):
        """初期化

        Args:
            filename: ログファイルのパス
            **kwargs: RotatingFileHandlerの追加パラメータ
        """
        filename = PlatformUtils.get_safe_path(filename)
        PlatformUtils.ensure_directory(Path(filename).parent)

        kwargs['mode'] = kwargs.get('mode', 'a')
        kwargs['encoding'] = kwargs.get('encoding', 'utf-8')
        kwargs['delay'] = False

        super().__init__(filename, **kwargs)
        self.terminator = '\n'

    def emit(self, record):
        """ログレコードの出力

        Args:
            record: ログレコード
        """
        try:
            if self.shouldRollover(record):
                self.doRollover()
            if self.stream is None:
                self.stream = self._open()
            self.stream.write(self.format(record) + self.terminator)
            self.flush()
        except Exception:
            self.handleError(record)

    def close(self):
        """ファイルハンドラのクローズ処理"""
        if self.stream:
            try:
                self.flush()
                self.stream.close()
            except Exception:
                pass
            finally:
                self.stream = None
        super().close()


class LoggingManager:
    """ロギング管理クラス

    ロギングの初期化と管理を担当します。
    """

    @staticmethod
    def configure(config: Dict[str, Any]) -> logging.Logger:
        """ロギングの設定

        Args:
            config: ロギング設定
                - level: ログレベル
                - file: ログファイル名
                - format: ログフォーマット（json固定）
                - console: Trueなら環境に関係なくstderrにも出力

        Returns:
            設定されたロガーインスタンス
        """
        logger = logging.getLogger(LOGGER_NAME)

        log_level = getattr(logging, str(config.get('level', 'INFO')).upper(), logging.INFO)
        logger.setLevel(log_level)
        logger.propagate = config.get('propagate', True)

        # 既存のハンドラをクリア
        for handler in list(logger.handlers):
            handler.close()
            logger.removeHandler(handler)

        try:
            log_file = Path(config['file']).resolve()
            PlatformUtils.ensure_directory(log_file.parent)

            file_handler = SafeRotatingFileHandler(
                str(log_file),
                maxBytes=10 * 1024 * 1024,  # 10MB
                backupCount=5
            )
            file_handler.setFormatter(JSONFormatter())
            logger.addHandler(file_handler)

            # stdoutはレポート出力に使うので、コンソールログはstderrへ
            if config.get('console') or os.getenv('NEE_ENV') in ['development', 'test']:
                console_handler = logging.StreamHandler(sys.stderr)
                console_handler.setFormatter(JSONFormatter())
                logger.addHandler(console_handler)

            return logger

        except Exception as e:
            console_handler = logging.StreamHandler(sys.stderr)
            console_handler.setFormatter(logging.Formatter('%(levelname)s: %(message)s'))
            logger.addHandler(console_handler)

            logger.error(f"Logging setup failed: {str(e)}", exc_info=True)
            return logger


class StructuredLogger:
    """構造化ロギング用クラス

    詳細情報（details）付きのログを出力します。
    """

    def __init__(self, logger: logging.Logger, context: Optional[Dict[str, Any]] = None):
        """初期化

        Args:
            logger: 基本のロガーインスタンス
            context: コンテキスト情報（すべてのログに付加される）
        """
        self.logger = logger
        self.context = dict(context or {})

    def _prepare_extras(self, details=None, **kwargs):
        """extra情報の準備

        固定コンテキスト、LogContextの一時コンテキスト、呼び出し時のdetailsの順に重ねます。
        """
        combined_details = dict(self.context)
        combined_details.update(_active_context.get())
        if details:
            combined_details.update(details)

        extra = dict(kwargs.pop('extra', None) or {})
        extra['details'] = combined_details
        kwargs['extra'] = extra
        return kwargs

    def debug(self, message, details=None, **kwargs):
        """DEBUGログの出力"""
        kwargs = self._prepare_extras(details, **kwargs)
        self.logger.debug(message, **kwargs)

    def info(self, message, details=None, **kwargs):
        """INFOログの出力"""
        kwargs = self._prepare_extras(details, **kwargs)
        self.logger.info(message, **kwargs)

    def warning(self, message, details=None, **kwargs):
        """WARNINGログの出力"""
        kwargs = self._prepare_extras(details, **kwargs)
        self.logger.warning(message, **kwargs)

    def error(self, message, error=None, details=None, **kwargs):
        """ERRORログの出力

        Args:
            message: ログメッセージ
            error: 例外オブジェクト
            details: 詳細情報
            **kwargs: その他のパラメータ
        """
        error_details = dict(details or {})
        if error:
            error_details.update({
                'error_type': error.__class__.__name__,
                'error_message': str(error)
            })

        kwargs = self._prepare_extras(error_details, **kwargs)
        exc_info = (type(error), error, error.__traceback__) if error is not None else None
        self.logger.error(message, exc_info=exc_info, **kwargs)

    def critical(self, message, error=None, details=None, **kwargs):
        """CRITICALログの出力"""
        error_details = dict(details or {})
        if error:
            error_details.update({
                'error_type': error.__class__.__name__,
                'error_message': str(error)
            })

        kwargs = self._prepare_extras(error_details, **kwargs)
        exc_info = (type(error), error, error.__traceback__) if error is not None else None
        self.logger.critical(message, exc_info=exc_info, **kwargs)

    def metric(self, step: int, message: str = 'metric', **values):
        """学習曲線用の指標ログ

        Args:
            step: 学習ステップ
            message: ログメッセージ
            **values: 指標名と値
        """
        self.info(message, details={'step': int(step), 'metrics': values})


class LogContext:
    """ロギングコンテキストマネージャ

    with文の内側で出力される構造化ログすべてに、実行ID・タスク・設定ハッシュなどの
    一時的なコンテキストを付加します。入れ子にすると内側の値が優先されます。
    """

    def __init__(self, **context):
        """初期化

        Args:
            **context: 付加するコンテキスト情報
        """
        self.context = context
        self._token = None

    def __enter__(self):
        merged = dict(_active_context.get())
        merged.update(self.context)
        self._token = _active_context.set(merged)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if self._token is not None:
            _active_context.reset(self._token)
            self._token = None
        return False


def setup_logging(config: Dict[str, Any]) -> StructuredLogger:
    """ロギングの設定

    Args:
        config: ロギング設定（LoggingManager.configureを参照）

    Returns:
        構造化ロガーインスタンス
    """
    logger = LoggingManager.configure(config)
    return StructuredLogger(logger)


def get_logger(name: str = LOGGER_NAME, context: Optional[Dict[str, Any]] = None) -> StructuredLogger:
    """詳細情報を含むロガーを取得

    Args:
        name: ロガー名（``nee`` 配下の名前を推奨）
        context: 基本的な詳細情報

    Returns:
        構造化ロガーインスタンス
    """
    return StructuredLogger(logging.getLogger(name), context)
