"""Run script for the command line."""

import asyncio
import logging.config
import sys

from tokenloom.cli.commands import build_parser, run
from tokenloom.common import logging_config
from tokenloom.errors import TokenLoomError


LOGFILE = "tokenloom.log"
_logger = logging.getLogger('tokenloom.cli.__main__')


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.config.dictConfig(logging_config(LOGFILE))
    _logger.debug(f"Running {args.command}...")
    try:
        return asyncio.run(run(args))
    except (TokenLoomError, ValueError, FileNotFoundError) as e:
        _logger.error(f"{args.command} failed: {e}")
        return 1
    except KeyboardInterrupt:
        print("Interrupted.")
        return 130


if __name__ == '__main__':
    sys.exit(main())
