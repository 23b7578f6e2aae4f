"""Shared logging setup.

Functions:
    logging_config: dictConfig for the console plus an optional log file.
"""
# Imports
from __future__ import annotations
import copy
import pathlib
from typing import Any


# Consts
log_config: dict[str, Any] = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'standard': {
            'format': '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        },
        'brief': {
            'format': '%(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'level': 'INFO',
            'formatter': 'brief',
            'class': 'logging.StreamHandler',
            'stream': 'ext://sys.stderr',
        },
    },
    'loggers': {
        'tokenloom': {
            'handlers': ['console'],
            'level': 'DEBUG',
            'propagate': True,
        },
        # per-step tensor bookkeeping
        'tokenloom.tensor': {
            'level': 'INFO',
        },
    },
}


# Functions
def logging_config(logfile: pathlib.Path | str | None = None, console_level: str = 'INFO') -> dict[str, Any]:
    """A fresh copy of `log_config`, with a DEBUG file handler when `logfile` is given."""
    config = copy.deepcopy(log_config)
    config['handlers']['console']['level'] = console_level
    if logfile is not None:
        config['handlers']['logfile'] = {
            'level': 'DEBUG',
            'formatter': 'standard',
            'class': 'logging.FileHandler',
            'filename': str(logfile),
            'mode': 'a',
        }
        config['loggers']['tokenloom']['handlers'].append('logfile')
    return config
