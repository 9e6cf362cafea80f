"""テスト用ユーティリティ

一時ディレクトリ、環境変数の隔離、JSONログの読み戻しと、小さなモデル設定を提供します。
"""

import os
import tempfile
import json
import pytest
import logging
from pathlib import Path

from nee.model import ModelConfig
from nee.platform import PlatformUtils


class TempDirectory:
    """テスト用一時ディレクトリ

    終了時にnee系ロガーのハンドラを閉じてから削除します。
    """

    def __init__(self, prefix="nee_test_"):
        self.path = Path(tempfile.mkdtemp(prefix=prefix))

    def subdirectory(self, name):
        subdir = self.path / name
        subdir.mkdir(parents=True, exist_ok=True)
        return subdir

    def cleanup(self):
        for logger_name in ['nee', 'root']:
            logger = logging.getLogger(logger_name)
            for handler in list(logger.handlers):
                try:
                    handler.close()
                    logger.removeHandler(handler)
                except Exception:
                    pass

        PlatformUtils.safe_rmtree(self.path)


class TestEnvironment:
    """テスト環境管理クラス

    環境変数を退避し、終了時に元へ戻します。
    """

    def __init__(self):
        self.original_env = os.environ.copy()
        self.directories = []

    def setup(self):
        """環境のセットアップ"""
        pass

    def set_env_vars(self, env_vars):
        for key, value in env_vars.items():
            os.environ[key] = str(value)

    def temp_directory(self, prefix="nee_test_"):
        directory = TempDirectory(prefix)
        self.directories.append(directory)
        return directory

    def cleanup(self):
        """環境の復元"""
        for directory in self.directories:
            directory.cleanup()

        os.environ.clear()
        os.environ.update(self.original_env)

    def __enter__(self):
        self.setup()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.cleanup()


class LogTestEnvironment(TestEnvironment):
    """ロギングテスト用環境クラス

    一時ディレクトリにJSONログを書かせ、そのエントリを読み戻します。
    """

    def __init__(self, env_name="test"):
        super().__init__()
        self.env_name = env_name
        self.log_file_path = None

    def setup(self):
        """ロギング環境のセットアップ"""
        super().setup()
        logs_dir = self.temp_directory(prefix="nee_log_").subdirectory("logs")
        self.log_file_path = logs_dir / "test.log"

        self.set_env_vars({
            'NEE_ENV': self.env_name,
            'NEE_LOG_LEVEL': 'DEBUG',
            'NEE_LOG_FILE': str(self.log_file_path),
            'NEE_LOG_FORMAT': 'json'
        })

    def get_log_entries(self):
        """ログエントリ（JSONオブジェクト）の一覧"""
        if not self.log_file_path.exists():
            return []

        for logger_name in ['nee', 'root']:
            for handler in logging.getLogger(logger_name).handlers:
                handler.flush()

        content = self.log_file_path.read_text(encoding='utf-8').strip()
        return [json.loads(line) for line in content.splitlines() if line.strip()]

    def find_log_entries(self, level=None, message_contains=None):
        """条件に一致するログエントリを検索

        Args:
            level: ログレベル（INFO/DEBUG/ERROR等）
            message_contains: メッセージに含まれる文字列
        """
        return [
            entry for entry in self.get_log_entries()
            if (level is None or entry.get('level') == level)
            and (message_contains is None or message_contains in entry.get('message', ''))
        ]


@pytest.fixture
def log_test_env():
    """ロギングテスト用環境のフィクスチャ"""
    env = LogTestEnvironment()
    with env:
        yield env


def tiny_model_config(**overrides):
    """テスト用の最小モデル設定（1+1層、d=8、ドロップアウトなし）"""
    values = dict(d=8, encoder_layers=1, decoder_layers=1, ffn_hidden=8, mask_filters=2, dropout=0.0)
    values.update(overrides)
    return ModelConfig(**values)
