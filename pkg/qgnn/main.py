"""
CLI Entry Point

Parses arguments, configures logging and dispatches to a subcommand.
Domain errors are logged and turned into the process exit code:

    0  success
    1  configuration error
    2  query or template verification error
    3  data / encoding / store mismatch
    4  I/O error
"""

from typing import List, Optional
import logging
import sys

from qgnn.cli.commands import build_parser
from qgnn.core.config import settings
from qgnn.core.errors import QgnnError

logger = logging.getLogger("qgnn")


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = (args.log_level or settings.log_level).upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.handler(args)
    except QgnnError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
