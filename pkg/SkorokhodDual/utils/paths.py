import os
from pathlib import Path
from appdirs import AppDirs

_app_dirs = AppDirs("SkorokhodDual", "EtWnn")


def get_data_path() -> Path:
    """
    Return the folder path where to store the data created by this project (logs, default run outputs)
    It uses the library appdirs to follow the conventions across multi OS(MAc, Linux, Windows)

    https://pypi.org/project/appdirs/

    :return: path of the folder to use for data saving
    :rtype: pathlib.Path
    """
    return Path(_app_dirs.user_data_dir)


def get_run_path(run_name: str) -> Path:
    """
    Return the default output folder of a run, created if needed

    :param run_name: name of the run, usually the stem of its configuration file
    :type run_name: str
    :return: path of the run folder
    :rtype: pathlib.Path
    """
    run_path = get_data_path() / "runs" / run_name
    os.makedirs(run_path, exist_ok=True)
    return run_path
