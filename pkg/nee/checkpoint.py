"""チェックポイントの保存と読み込み

ファイル形式（すべてリトルエンディアン）::

    b"NEE1" | uint32 ヘッダ長 | ヘッダ（正規JSON, UTF-8） | パラメータ本体（'<f8'）

ヘッダには設定、設定ハッシュ、学習ステップ、シード、任意のメタデータ、
パラメータのマニフェスト（名前・形状・本体内のバイトオフセット）と
本体のSHA-256が入ります。パラメータは名前順に連結します。
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
from pydantic import ValidationError

from .config import canonical_json
from .errors import CheckpointError, ConfigMismatchError
from .logging import get_logger
from .model import ModelConfig, NEEModel
from .platform import PlatformUtils


MAGIC = b'NEE1'
FORMAT_VERSION = 1
_HEADER_LENGTH = struct.Struct('<I')

logger = get_logger('nee.checkpoint')


@dataclass(frozen=True)
class Checkpoint:
    """読み込んだチェックポイント"""
    model: NEEModel
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def config(self) -> ModelConfig:
        return self.model.config


def checkpoint_bytes(model: NEEModel, metadata: Optional[Dict[str, Any]] = None) -> bytes:
    """チェックポイントのバイト列（同じモデルなら常に同じバイト列）"""
    manifest = []
    chunks = []
    offset = 0
    for name, value in sorted(model.params.items()):
        data = np.ascontiguousarray(value, dtype='<f8').tobytes()
        manifest.append({'name': name, 'shape': list(value.shape), 'offset': offset})
        chunks.append(data)
        offset += len(data)
    payload = b''.join(chunks)

    header = {
        'format': FORMAT_VERSION,
        'config': model.config.model_dump(mode='json'),
        'config_hash': model.config.config_hash(),
        'step': model.step,
        'seed': model.seed,
        'metadata': metadata or {},
        'manifest': manifest,
        'payload_bytes': len(payload),
        'payload_sha256': hashlib.sha256(payload).hexdigest()
    }
    header_bytes = canonical_json(header).encode('utf-8')
    return MAGIC + _HEADER_LENGTH.pack(len(header_bytes)) + header_bytes + payload


def checkpoint_digest(model: NEEModel) -> str:
    """モデルのSHA-256（評価の前後で変化しないことの確認用）"""
    return hashlib.sha256(checkpoint_bytes(model)).hexdigest()


def save_checkpoint(path: Union[str, Path], model: NEEModel, metadata: Optional[Dict[str, Any]] = None) -> Path:
    """チェックポイントをアトミックに書き出す"""
    path = Path(path)
    data = checkpoint_bytes(model, metadata)
    PlatformUtils.safe_bytes_write(path, data)
    logger.info("Checkpoint written", details={
        'path': str(path),
        'bytes': len(data),
        'step': model.step,
        'config_hash': model.config.config_hash()
    })
    return path


def _corrupt(path: str, reason: str, **details) -> CheckpointError:
    return CheckpointError(f"Corrupt checkpoint {path}: {reason}", {'path': path, 'reason': reason, **details})


def parse_checkpoint(data: bytes, source: str = '<bytes>',
                     expected_config: Optional[ModelConfig] = None) -> Checkpoint:
    """バイト列からチェックポイントを復元

    Raises:
        CheckpointError: 切り詰め、マジック不一致、ハッシュ不一致など
        ConfigMismatchError: ``expected_config`` と設定ハッシュが異なる場合
    """
    prefix = len(MAGIC) + _HEADER_LENGTH.size
    if len(data) < prefix:
        raise _corrupt(source, 'file is truncated', size=len(data))
    if data[:len(MAGIC)] != MAGIC:
        raise _corrupt(source, 'magic bytes do not match', magic=data[:len(MAGIC)].hex())
    (header_length,) = _HEADER_LENGTH.unpack(data[len(MAGIC):prefix])
    if len(data) < prefix + header_length:
        raise _corrupt(source, 'header is truncated', header_length=header_length, size=len(data))

    try:
        header = json.loads(data[prefix:prefix + header_length].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise _corrupt(source, f'header is not valid JSON ({e})')
    if not isinstance(header, dict) or header.get('format') != FORMAT_VERSION:
        raise _corrupt(source, 'unsupported header format',
                       format=header.get('format') if isinstance(header, dict) else None)

    payload = data[prefix + header_length:]
    try:
        if len(payload) != header['payload_bytes']:
            raise _corrupt(source, 'payload is truncated', expected=header['payload_bytes'], size=len(payload))
        if hashlib.sha256(payload).hexdigest() != header['payload_sha256']:
            raise _corrupt(source, 'payload checksum does not match')
        config = ModelConfig.model_validate(header['config'])
        if config.config_hash() != header['config_hash']:
            raise _corrupt(source, 'embedded config hash does not match the config')
        params = {}
        for entry in header['manifest']:
            count = int(np.prod(entry['shape'], dtype=np.int64))
            start = entry['offset']
            end = start + 8 * count
            if start < 0 or end > len(payload):
                raise _corrupt(source, f"parameter {entry['name']} lies outside the payload")
            params[entry['name']] = np.frombuffer(payload[start:end], dtype='<f8').reshape(entry['shape'])
        model = NEEModel(config, params, step=header['step'], seed=header['seed'])
    except (KeyError, TypeError, ValueError, ValidationError) as e:
        raise _corrupt(source, f'header is malformed ({e.__class__.__name__}: {e})')
    except CheckpointError:
        raise
    except Exception as e:
        # パラメータ形状の不一致（ShapeError）など
        raise _corrupt(source, str(e))

    if expected_config is not None and expected_config.config_hash() != config.config_hash():
        raise ConfigMismatchError(
            f"Checkpoint {source} was written for a different model configuration",
            {
                'path': source,
                'expected_hash': expected_config.config_hash(),
                'found_hash': config.config_hash(),
                'expected_bit_width': expected_config.bit_width,
                'found_bit_width': config.bit_width
            }
        )
    return Checkpoint(model, header.get('metadata') or {})


def load_checkpoint(path: Union[str, Path], expected_config: Optional[ModelConfig] = None) -> Checkpoint:
    """チェックポイントの読み込み

    Args:
        path: ファイルパス
        expected_config: 指定すると設定ハッシュの一致を検査

    Raises:
        CheckpointError: ファイルが存在しない、または破損している場合
        ConfigMismatchError: 設定ハッシュが一致しない場合
    """
    path = Path(path)
    data = PlatformUtils.safe_bytes_read(path)
    if data is None:
        raise CheckpointError(f"Checkpoint not found: {path}", {'path': str(path), 'reason': 'not found'})
    checkpoint = parse_checkpoint(data, str(path), expected_config)
    logger.debug("Checkpoint loaded", details={
        'path': str(path),
        'step': checkpoint.model.step,
        'config_hash': checkpoint.config.config_hash()
    })
    return checkpoint
