"""プラットフォーム依存の処理を抽象化するモジュール

チェックポイント・データセット・レポートの書き出しで使う、
ディレクトリ作成とアトミックなファイル書き込みを提供します。
"""

import os
import time
import shutil
import logging
import tempfile
from pathlib import Path
from typing import Optional, Union


logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class PlatformUtils:
    """プラットフォーム固有の処理を抽象化するユーティリティクラス"""

    @staticmethod
    def get_safe_path(path: PathLike) -> str:
        """OS対応パス取得

        Args:
            path: 変換対象のパス

        Returns:
            str: 絶対パスに正規化されたパス
        """
        return str(Path(path).resolve())

    @staticmethod
    def ensure_directory(path: PathLike) -> Path:
        """ディレクトリが確実に存在することを保証

        Args:
            path: 作成するディレクトリのパス

        Returns:
            Path: 作成されたディレクトリのパスオブジェクト
        """
        dir_path = Path(path)
        if not dir_path.exists():
            dir_path.mkdir(parents=True, exist_ok=True)
        return dir_path

    @staticmethod
    def safe_rmtree(path: PathLike, max_retries: int = 3, retry_delay: float = 0.2) -> bool:
        """安全なディレクトリ削除

        Args:
            path: 削除するディレクトリのパス
            max_retries: 最大リトライ回数
            retry_delay: リトライ間隔（秒）

        Returns:
            bool: 削除成功時True
        """
        path = Path(path)
        if not path.exists():
            return True

        for i in range(max_retries):
            try:
                if i > 0:
                    logger.debug(f"Retrying rmtree for {path} (attempt {i+1}/{max_retries})")
                shutil.rmtree(path, ignore_errors=True)
                if not path.exists():
                    return True
            except Exception as e:
                logger.debug(f"Failed to remove directory {path}: {e}")
            if i < max_retries - 1:
                time.sleep(retry_delay)

        return not path.exists()

    @staticmethod
    def safe_bytes_write(path: PathLike, data: bytes) -> Path:
        """アトミックなバイナリ書き込み

        同じディレクトリに一時ファイルを書いてから ``os.replace`` で置き換えるため、
        途中で失敗しても既存ファイルが半端な内容になることはありません。

        Args:
            path: 書き込み先ファイルパス
            data: 書き込むバイト列

        Returns:
            書き込んだファイルのパス
        """
        path = Path(path)
        PlatformUtils.ensure_directory(path.parent)

        fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=str(path.parent))
        try:
            with os.fdopen(fd, 'wb') as f:
                f.write(data)
                f.flush()
                try:
                    os.fsync(f.fileno())
                except OSError as e:
                    logger.debug(f"Failed to fsync file {tmp_name}: {e}")
            os.replace(tmp_name, path)
        except BaseException:
            try:
                os.unlink(tmp_name)
            except OSError:
                pass
            raise
        return path

    @staticmethod
    def safe_file_write(path: PathLike, content: str, encoding: str = 'utf-8') -> Path:
        """安全なテキストファイル書き込み

        Args:
            path: 書き込み先ファイルパス
            content: 書き込む内容
            encoding: 文字エンコーディング

        Returns:
            書き込んだファイルのパス
        """
        return PlatformUtils.safe_bytes_write(path, content.replace('\r\n', '\n').encode(encoding))

    @staticmethod
    def safe_bytes_read(path: PathLike) -> Optional[bytes]:
        """安全なバイナリ読み込み

        Args:
            path: 読み込むファイルパス

        Returns:
            ファイルの内容。存在しない場合や読めない場合はNone
        """
        path = Path(path)
        if not path.is_file():
            return None
        try:
            return path.read_bytes()
        except OSError as e:
            logger.debug(f"Failed to read file {path}: {e}")
            return None

    @staticmethod
    def safe_file_read(path: PathLike, encoding: str = 'utf-8') -> Optional[str]:
        """安全なテキストファイル読み込み

        Args:
            path: 読み込むファイルパス
            encoding: 文字エンコーディング

        Returns:
            str or None: ファイルの内容、エラー時はNone
        """
        data = PlatformUtils.safe_bytes_read(path)
        if data is None:
            return None
        try:
            return data.decode(encoding)
        except UnicodeDecodeError as e:
            logger.debug(f"Failed to decode file {path}: {e}")
            return None
