import os
import logging
import tempfile
from contextlib import contextmanager
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime

from .config import LOG_DIR, LOG_FORMAT, LOG_LEVEL
from .exceptions import LockError

LOCK_NAME = '.driftlens.lock'


def setup_logging(name=None, log_to_file=False, level=None):
    """
    Set up logging configuration

    Args:
        name (str): Logger name (None configures the root logger)
        log_to_file (bool): Whether to log to a file
        level (str): Overrides DRIFTLENS_LOG_LEVEL

    Returns:
        logging.Logger: Configured logger
    """
    logger = logging.getLogger(name)
    logger.setLevel(getattr(logging, (level or LOG_LEVEL).upper()))

    formatter = logging.Formatter(LOG_FORMAT)

    # repeated calls must not stack handlers
    if not logger.handlers:
        console_handler = logging.StreamHandler()
        console_handler.setFormatter(formatter)
        logger.addHandler(console_handler)

        if log_to_file:
            os.makedirs(LOG_DIR, exist_ok=True)
            log_file = os.path.join(LOG_DIR, f"{name or 'driftlens'}_{datetime.now().strftime('%Y%m%d')}.log")
            file_handler = logging.FileHandler(log_file)
            file_handler.setFormatter(formatter)
            logger.addHandler(file_handler)

    return logger


@contextmanager
def atomic_write(path, mode='w', encoding='utf-8', newline=None):
    """
    Open a temporary file next to `path` and move it into place on success

    A failure inside the block removes the temporary file, so no partial
    artifact is ever visible under `path`.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix='.tmp_', suffix=os.path.basename(path))
    try:
        if 'b' in mode:
            f = os.fdopen(fd, mode)
        else:
            f = os.fdopen(fd, mode, encoding=encoding, newline=newline)
        with f:
            yield f
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


@contextmanager
def directory_lock(directory):
    """Single-writer lock on an output directory"""
    os.makedirs(directory, exist_ok=True)
    lock_path = os.path.join(directory, LOCK_NAME)
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockError(f"{directory} is locked by another run (remove {lock_path} if stale)")
    try:
        os.write(fd, str(os.getpid()).encode('ascii'))
        os.close(fd)
        yield lock_path
    finally:
        if os.path.exists(lock_path):
            os.remove(lock_path)


def run_jobs(fn, keys, threads=1):
    """
    Run fn(key) for every key, possibly concurrently

    Args:
        fn: callable taking one key
        keys: iterable of hashable job keys
        threads (int): worker cap

    Returns:
        dict: key -> result, in the order of `keys`
    """
    keys = list(keys)
    if threads <= 1 or len(keys) <= 1:
        return {key: fn(key) for key in keys}

    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = {key: pool.submit(fn, key) for key in keys}
        return {key: futures[key].result() for key in keys}


def format_ci(mean, halfwidth, digits=3):
    """Render a value the way the result tables do: '69.200 ± 6.026'"""
    if halfwidth is None or halfwidth != halfwidth:
        return f"{mean:.{digits}f}"
    return f"{mean:.{digits}f} ± {halfwidth:.{digits}f}"


def parse_ci(text):
    """Inverse of format_ci: returns (mean, halfwidth or None)"""
    text = str(text).replace('$\\pm$', '±').strip()
    if '±' in text:
        mean, halfwidth = text.split('±', 1)
        return float(mean), float(halfwidth)
    return float(text), None
