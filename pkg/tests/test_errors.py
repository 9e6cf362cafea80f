"""エラー処理と構造化ログのテスト"""

import pytest

from nee.config import Settings
from nee.errors import (
    BaseError, CheckpointError, ConfigError, ConfigMismatchError, DatasetError, NEEError,
    NonDifferentiableError, NonTerminationError, PreconditionError, TrainingError, create_error_handler
)
from nee.logging import LogContext, get_logger
from tests.utils import log_test_env


@pytest.fixture
def handler():
    return create_error_handler(get_logger('nee.test'))


def test_error_string_carries_code():
    error = PreconditionError("All positions are masked", {'length': 3})
    assert str(error) == "[PRE] All positions are masked"
    assert error.details == {'length': 3}
    assert BaseError("x").details == {}


def test_error_hierarchy():
    assert issubclass(NonDifferentiableError, PreconditionError)
    assert issubclass(ConfigMismatchError, CheckpointError)
    assert issubclass(TrainingError, NEEError)
    assert not issubclass(ConfigError, NEEError)
    assert NonDifferentiableError("x").error_code == 'NONDIFF'


@pytest.mark.parametrize('error, code', [
    (ConfigError("Invalid command line: x", {'usage': 'nee [-h]'}), 2),
    (ConfigError("Configuration file not found", {'path': 'x.yaml'}), 1),
    (ConfigMismatchError("Checkpoint was saved with another configuration"), 1),
    (DatasetError("Dataset checksum does not match"), 1),
    (NonTerminationError("Rollout did not terminate", {'budget': 8}), 1),
    (TrainingError("Training diverged", {'step': 3}), 1),
    (PreconditionError("All positions are masked"), 1),
])
def test_exit_codes(handler, error, code):
    outcome = handler.handle(error, {'argv': ['train']})
    assert outcome['success'] is False
    assert outcome['exit_code'] == code
    assert outcome['error_code'] == error.error_code
    assert outcome['details'] == error.details
    assert outcome['error'] == str(error)


def test_subclass_keeps_its_code(handler):
    assert handler.handle(ConfigMismatchError("mismatch"))['error_code'] == 'CKPT_MISMATCH'


def test_os_and_unexpected_errors(handler):
    outcome = handler.handle(FileNotFoundError(2, 'No such file', 'x.nee'))
    assert outcome['error_code'] == 'IO'
    assert outcome['details']['filename'] == 'x.nee'
    outcome = handler.handle(RuntimeError('boom'), {'command': 'eval'})
    assert outcome['error_code'] == 'UNKNOWN'
    assert outcome['details']['command'] == 'eval'
    assert outcome['exit_code'] == 1


def test_log_context_is_attached(log_test_env):
    logger = Settings().setup_logger(command='unit')
    with LogContext(task='selection-sort', config_hash='abc'):
        with LogContext(config_hash='def'):
            logger.metric(3, 'Validation', exact_match=0.5)
        logger.info("Outside inner context")
    logger.info("Outside all contexts")

    metric = log_test_env.find_log_entries(level='INFO', message_contains='Validation')[0]['details']
    assert metric['step'] == 3
    assert metric['metrics'] == {'exact_match': 0.5}
    assert metric['task'] == 'selection-sort'
    assert metric['config_hash'] == 'def'
    assert metric['command'] == 'unit'

    inner = log_test_env.find_log_entries(message_contains='Outside inner context')[0]['details']
    assert inner['config_hash'] == 'abc'
    outer = log_test_env.find_log_entries(message_contains='Outside all contexts')[0]['details']
    assert 'task' not in outer


def test_error_log_records_exception(log_test_env):
    logger = Settings().setup_logger()
    error = TrainingError("Training diverged", {'step': 3})
    logger.error("Training failed", error=error, details={'step': 3})
    entry = log_test_env.find_log_entries(level='ERROR', message_contains='Training failed')[0]
    assert entry['details']['error_type'] == 'TrainingError'
    assert entry['error']['type'] == 'TrainingError'
