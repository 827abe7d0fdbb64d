import logging
import os
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

from SkorokhodDual.utils.paths import get_data_path


class LoggerGenerator:
    """
    This class is a utility to facilitate the creation of loggers for the solvers and the command line
    """
    LOGS_FOLDER_PATH = get_data_path() / "logs"
    LOG_FORMAT = '[%(asctime)s %(name)s %(levelname)s] %(message)s [%(pathname)s:%(lineno)d in %(funcName)s]'

    _default_log_level = logging.WARNING
    _default_write_file = False
    _default_log_folder: Optional[Path] = None
    _logger_count = 0
    _shared_loggers: Dict[Tuple, logging.Logger] = {}

    @staticmethod
    def set_global_log_level(log_level: Union[int, str]):
        """
        set the default log level for loggers creation

        :param log_level: threshold to display the message, level name are accepted (ex: 'INFO')
        :type log_level: Union[int, str]
        :return: None
        :rtype: None
        """
        if isinstance(log_level, str):
            log_level = logging.getLevelName(log_level.upper())
        LoggerGenerator._default_log_level = log_level

    @staticmethod
    def set_default_write_file(write_file: bool, log_folder: Optional[Union[str, Path]] = None):
        """
        set the default write behaviour for loggers creation

        :param write_file: if the loggers should save the messages in a file
        :type write_file: bool
        :param log_folder: folder of the log files, the logs folder of the user data directory if None
        :type log_folder: Optional[Union[str, Path]]
        :return: None
        :rtype: None
        """
        LoggerGenerator._default_write_file = write_file
        LoggerGenerator._default_log_folder = None if log_folder is None else Path(log_folder)

    @staticmethod
    def get_logger(logger_name: str, write_file: Optional[bool] = None,
                   log_level: Optional[int] = None) -> logging.Logger:
        """
        create a logger that will display messages according to the log level threshold. If specified, it will
        also save the messages in a file of the log folder

        :param logger_name: name of the logger (a unique logger id will be added after the name)
        :type logger_name: str
        :param write_file: if the logger should save the message in a file
        :type write_file: bool
        :param log_level: threshold to display the message
        :type log_level: logging enum (ex: logging.WARNING)
        :return: the logger object
        :rtype: logging.Logger
        """
        if log_level is None:
            log_level = LoggerGenerator._default_log_level
        if write_file is None:
            write_file = LoggerGenerator._default_write_file

        logger = logging.getLogger(f"sk_{LoggerGenerator._logger_count}_{logger_name}")
        logger.setLevel(level=log_level)
        logger.propagate = False
        LoggerGenerator._logger_count += 1

        formatter = logging.Formatter(LoggerGenerator.LOG_FORMAT)

        if write_file:
            log_folder = LoggerGenerator._default_log_folder or LoggerGenerator.LOGS_FOLDER_PATH
            os.makedirs(log_folder, exist_ok=True)
            fh = logging.FileHandler(Path(log_folder) / f"{logger_name}.log")
            fh.setLevel(level=log_level)
            fh.setFormatter(formatter)
            logger.addHandler(fh)

        ch = logging.StreamHandler()
        ch.setLevel(level=log_level)
        ch.setFormatter(formatter)
        logger.addHandler(ch)

        return logger

    @staticmethod
    def get_shared_logger(logger_name: str) -> logging.Logger:
        """
        return a logger shared by every caller of the same name: it is created by get_logger on the first call and
        reused as long as the default log level and write behaviour are unchanged

        :param logger_name: name of the logger
        :type logger_name: str
        :return: the logger object
        :rtype: logging.Logger
        """
        key = (logger_name, LoggerGenerator._default_log_level, LoggerGenerator._default_write_file,
               LoggerGenerator._default_log_folder)
        logger = LoggerGenerator._shared_loggers.get(key)
        if logger is None:
            logger = LoggerGenerator.get_logger(logger_name)
            LoggerGenerator._shared_loggers[key] = logger
        return logger

    @staticmethod
    def close_logger(logger: logging.Logger):
        """
        detach and close the handlers of a logger created by get_logger

        :param logger: the logger to release
        :type logger: logging.Logger
        :return: None
        :rtype: None
        """
        for handler in list(logger.handlers):
            logger.removeHandler(handler)
            handler.close()

    @staticmethod
    def release_shared_loggers():
        """
        close the loggers returned by get_shared_logger and empty the cache

        :return: None
        :rtype: None
        """
        for logger in LoggerGenerator._shared_loggers.values():
            LoggerGenerator.close_logger(logger)
        LoggerGenerator._shared_loggers.clear()
