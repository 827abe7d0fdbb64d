import logging
import os
import tempfile

from SkorokhodDual.lattice.Lattice import Lattice, stabilize_horizon
from SkorokhodDual.utils.LoggerGenerator import LoggerGenerator


def test_shared_logger(verbose=0, **kwargs):
    first = LoggerGenerator.get_shared_logger("shared_check")
    second = LoggerGenerator.get_shared_logger("shared_check")
    assert first is second
    assert len(first.handlers) == 1
    assert LoggerGenerator.get_shared_logger("other_check") is not first


def test_no_logger_growth(verbose=0, **kwargs):
    Lattice(2, 1.)
    stabilize_horizon(lambda n: 1., 2, 1e-3, 8)
    count = len(logging.Logger.manager.loggerDict)
    for _ in range(20):
        Lattice(2, 1.)
        stabilize_horizon(lambda n: 1., 2, 1e-3, 8)
    if verbose:
        print(count, len(logging.Logger.manager.loggerDict))
    assert len(logging.Logger.manager.loggerDict) == count


def test_level_change(verbose=0, **kwargs):
    previous = LoggerGenerator._default_log_level
    try:
        LoggerGenerator.set_global_log_level('ERROR')
        quiet = LoggerGenerator.get_shared_logger("level_check")
        assert quiet.level == logging.ERROR
        LoggerGenerator.set_global_log_level('DEBUG')
        loud = LoggerGenerator.get_shared_logger("level_check")
        assert loud is not quiet and loud.level == logging.DEBUG
    finally:
        LoggerGenerator.set_global_log_level(previous)


def test_release_shared_loggers(verbose=0, **kwargs):
    with tempfile.TemporaryDirectory() as folder:
        LoggerGenerator.set_default_write_file(True, folder)
        try:
            logger = LoggerGenerator.get_shared_logger("file_check")
            logger.error("written")
        finally:
            LoggerGenerator.set_default_write_file(False)
        assert os.path.exists(os.path.join(folder, "file_check.log"))
        LoggerGenerator.release_shared_loggers()
        assert logger.handlers == []
    assert LoggerGenerator.get_shared_logger("file_check") is not logger
