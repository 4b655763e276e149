"""
refine3d command-line entry point
"""
import argparse
import logging
import sys
from typing import List, Optional

from dotenv import load_dotenv
from rich.console import Console
from rich.logging import RichHandler

load_dotenv()

from refine3d import __version__, data_commands, eval_commands, report_commands, train_commands  # noqa: E402
from refine3d.autodiff.tensor import set_debug_checks  # noqa: E402
from refine3d.errors import Refine3DError  # noqa: E402
from refine3d.settings import get_settings  # noqa: E402

logger = logging.getLogger("refine3d")
error_console = Console(stderr=True)


def configure_logging(level: str) -> None:
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=error_console, rich_tracebacks=True, show_path=False)],
        force=True,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="refine3d",
        description="Multi-view voxel reconstruction with attention fusion and a 3D refiner",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    data_commands.register(subparsers)
    train_commands.register(subparsers)
    eval_commands.register(subparsers)
    report_commands.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = get_settings()
        configure_logging(settings.log_level)
        set_debug_checks(settings.debug)
        return args.handler(args)
    except Refine3DError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return e.exit_code
    except OSError as e:
        logger.error("I/O error: %s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
