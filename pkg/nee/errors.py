"""NEEのエラー処理

標準化されたエラー型とエラーハンドリングを提供します。エラー階層：

BaseError (基底クラス)
├── NEEError (ライブラリ全般)
│   ├── NumericsError (非有限値・未知のプリミティブ)
│   ├── ShapeError (形状不一致・スカラーでない損失)
│   ├── EncodingError (ビット幅に収まらない値)
│   ├── PreconditionError (前提条件違反)
│   │   └── NonDifferentiableError (ハード決定を含む勾配検査)
│   ├── NonTerminationError (ステップ予算超過)
│   ├── TraceError (トレース入力の不正)
│   ├── GraphError (グラフパラメータの不正)
│   └── TrainingError (学習中の発散)
├── ConfigError (設定エラー)
├── CheckpointError (チェックポイントの破損)
│   └── ConfigMismatchError (設定ハッシュ不一致)
└── DatasetError (データセットの破損・改ざん・バージョン不一致)

各エラータイプにはエラーコードが設定され、詳細情報を辞書形式で保持できます。
"""

from typing import Dict, Any, Optional

from .logging import StructuredLogger


class BaseError(Exception):
    """NEE基本エラー

    すべてのNEE固有エラーの基底クラス。

    Attributes:
        error_code: エラーコード
        message: エラーメッセージ
        details: エラーの詳細情報
    """
    error_code = 'UNKNOWN'

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        """初期化

        Args:
            message: エラーメッセージ
            details: エラーの詳細情報
        """
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def __str__(self) -> str:
        return f"[{self.error_code}] {self.message}"


class NEEError(BaseError):
    """NEEエラー

    特定のカテゴリに分類できないライブラリ内部のエラーに使用します。
    """
    error_code = 'NEE'


class NumericsError(NEEError):
    """数値エラー

    順伝播でNaN/Infが発生した場合や、未知のプリミティブが要求された場合に発生します。
    """
    error_code = 'NUM'


class ShapeError(NEEError):
    """形状エラー"""
    error_code = 'SHAPE'


class EncodingError(NEEError):
    """符号化エラー

    値が指定ビット幅やアルファベットの範囲外の場合に発生します。
    """
    error_code = 'ENC'


class PreconditionError(NEEError):
    """前提条件エラー

    全位置がマスクされた入力、モード違いのモデル呼び出し、空のホールドアウトなど。
    """
    error_code = 'PRE'


class NonDifferentiableError(PreconditionError):
    """微分不能エラー

    argmaxなどのハード決定を含む関数に勾配検査を行った場合に発生します。
    """
    error_code = 'NONDIFF'


class NonTerminationError(NEEError):
    """非停止エラー

    再帰適用がステップ予算内に終端トークンを出さなかった場合に発生します。
    評価では不正解として数えます。
    """
    error_code = 'NONTERM'


class TraceError(NEEError):
    """トレース生成エラー"""
    error_code = 'TRACE'


class GraphError(NEEError):
    """グラフ生成エラー"""
    error_code = 'GRAPH'


class TrainingError(NEEError):
    """学習エラー

    学習中の発散（NaN）を診断情報付きで報告します。
    """
    error_code = 'TRAIN'


class ConfigError(BaseError):
    """設定エラー

    設定の読み込みや解析中に発生するエラーを示します。
    設定ファイルの欠落・形式不正、不正なCLI引数にも使用します。
    """
    error_code = 'CFG'


class CheckpointError(BaseError):
    """チェックポイントエラー

    ファイルの切り詰め・破損・マジックバイト不一致を示します。
    """
    error_code = 'CKPT'


class ConfigMismatchError(CheckpointError):
    """設定不一致エラー

    期待するモデル設定とチェックポイントに埋め込まれた設定ハッシュが異なる場合に発生します。
    """
    error_code = 'CKPT_MISMATCH'


class DatasetError(BaseError):
    """データセットエラー"""
    error_code = 'DATA'


class ErrorHandler:
    """エラーハンドリング統一クラス

    エラー処理を一元化して、適切なログ出力と機械可読な結果辞書を提供します。
    CLIはこの辞書をそのままJSONとしてstderrに書き出します。
    """

    def __init__(self, logger: StructuredLogger):
        """初期化

        Args:
            logger: 構造化ロガー
        """
        self.logger = logger

        # 先に一致したものが使われるので、サブクラスを親より前に並べる
        self.handlers = {
            ConfigError: self._handle_config_error,
            ConfigMismatchError: self._handle_storage_error,
            CheckpointError: self._handle_storage_error,
            DatasetError: self._handle_storage_error,
            NonTerminationError: self._handle_non_termination,
            NumericsError: self._handle_numeric_error,
            TrainingError: self._handle_numeric_error,
            NEEError: self._handle_nee_error,
            BaseError: self._handle_base_error,
            OSError: self._handle_os_error,
            Exception: self._handle_generic_error
        }

    def handle(self, error: Exception, context: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """エラー処理の統一メソッド

        Args:
            error: 例外オブジェクト
            context: エラーコンテキスト

        Returns:
            処理結果の辞書（success, error, error_code, details, exit_code）
        """
        context = context or {}

        for error_type, handler in self.handlers.items():
            if isinstance(error, error_type):
                return handler(error, context)

        return self._handle_generic_error(error, context)

    def _result(self, error: BaseError, exit_code: int = 1) -> Dict[str, Any]:
        return {
            'success': False,
            'error': str(error),
            'error_code': error.error_code,
            'details': error.details,
            'exit_code': exit_code
        }

    def _log(self, label: str, error: BaseError, context: Dict[str, Any]) -> None:
        details = {
            'error_type': error.__class__.__name__,
            'error_code': error.error_code,
            **error.details,
            **context
        }
        self.logger.error(f"{label}: {error.message}", details=details)

    def _handle_config_error(self, error: ConfigError, context: Dict[str, Any]) -> Dict[str, Any]:
        """設定エラー処理

        使い方の誤り（未知のコマンドやフラグ）は終了コード2で返します。
        """
        self._log('Configuration error', error, context)
        exit_code = 2 if error.details.get('usage') else 1
        return self._result(error, exit_code)

    def _handle_storage_error(self, error: BaseError, context: Dict[str, Any]) -> Dict[str, Any]:
        """チェックポイント・データセットのエラー処理"""
        self._log('Storage error', error, context)
        return self._result(error)

    def _handle_non_termination(self, error: NonTerminationError, context: Dict[str, Any]) -> Dict[str, Any]:
        """非停止エラー処理"""
        self._log('Execution did not terminate', error, context)
        return self._result(error)

    def _handle_numeric_error(self, error: NEEError, context: Dict[str, Any]) -> Dict[str, Any]:
        """数値・学習エラー処理"""
        self._log('Numerical failure', error, context)
        return self._result(error)

    def _handle_nee_error(self, error: NEEError, context: Dict[str, Any]) -> Dict[str, Any]:
        """NEE一般エラー処理"""
        self._log('NEE error', error, context)
        return self._result(error)

    def _handle_base_error(self, error: BaseError, context: Dict[str, Any]) -> Dict[str, Any]:
        """基本エラー処理"""
        self._log('Error', error, context)
        return self._result(error)

    def _handle_os_error(self, error: OSError, context: Dict[str, Any]) -> Dict[str, Any]:
        """ファイル入出力エラー処理"""
        details = {
            'error_type': error.__class__.__name__,
            'filename': getattr(error, 'filename', None),
            'errno': getattr(error, 'errno', None),
            **context
        }
        self.logger.error(f"I/O error: {error}", details=details)
        return {
            'success': False,
            'error': str(error),
            'error_code': 'IO',
            'details': details,
            'exit_code': 1
        }

    def _handle_generic_error(self, error: Exception, context: Dict[str, Any]) -> Dict[str, Any]:
        """汎用エラー処理"""
        error_info = {
            'error_type': error.__class__.__name__,
            'error_message': str(error),
            **context
        }

        self.logger.error(f"Unexpected error: {str(error)}", details=error_info)

        return {
            'success': False,
            'error': str(error),
            'error_code': 'UNKNOWN',
            'details': error_info,
            'exit_code': 1
        }


def create_error_handler(logger: StructuredLogger) -> ErrorHandler:
    """エラーハンドラの作成

    Args:
        logger: 構造化ロガー

    Returns:
        エラーハンドラインスタンス
    """
    return ErrorHandler(logger)
