import hashlib
import json
import logging
import sys
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Union

import numba
import numpy as np
import psutil
from colorama import Fore, Style, just_fix_windows_console

from epifocus.constants import LOGGER_NAME

_LEVEL_COLORS = {
    logging.DEBUG: Fore.CYAN,
    logging.INFO: Fore.GREEN,
    logging.WARNING: Fore.YELLOW,
    logging.ERROR: Fore.RED,
    logging.CRITICAL: Fore.RED + Style.BRIGHT,
}


def log(s):
    logging.getLogger(LOGGER_NAME).info(s)


def get_logger(name: str = None) -> logging.Logger:
    return logging.getLogger(LOGGER_NAME if name is None else f'{LOGGER_NAME}.{name}')


class _ColorFormatter(logging.Formatter):
    def format(self, record):
        color = _LEVEL_COLORS.get(record.levelno, '')
        record.levelname_colored = f'{color}{record.levelname:<7}{Style.RESET_ALL}'
        return super().format(record)


def setup_logging(level: Union[str, int] = 'INFO'):
    just_fix_windows_console()
    logger = logging.getLogger(LOGGER_NAME)
    logger.handlers.clear()
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_ColorFormatter('%(asctime)s %(levelname_colored)s %(name)s: %(message)s', '%H:%M:%S'))
    logger.addHandler(handler)
    logger.setLevel(level)
    logger.propagate = False
    return logger


def sha256(message: Union[str, bytes, np.ndarray]) -> str:
    if isinstance(message, np.ndarray):
        message = np.ascontiguousarray(message).tobytes()
    elif isinstance(message, str):
        message = message.encode('utf-8')
    return hashlib.sha256(message).hexdigest()


def file_sha256(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


class CustomJSONEncoder(json.JSONEncoder):
    def default(self, o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, Enum):
            return o.value
        if isinstance(o, (Path, datetime)):
            return str(o)
        if hasattr(o, 'model_dump'):
            return o.model_dump(mode='json')
        if hasattr(o, 'as_dict'):
            return o.as_dict()
        return super().default(o)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(',', ':'), cls=CustomJSONEncoder)


def physical_cores() -> int:
    return psutil.cpu_count(logical=False) or psutil.cpu_count() or 1


def peak_memory_mb() -> float:
    return psutil.Process().memory_info().rss / 2 ** 20


def set_worker_threads(workers: int) -> int:
    """Threads used by the parallel reconstruction and projection kernels."""
    workers = max(1, min(int(workers), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(workers)
    return workers
