"""
report and params commands
"""
import argparse
import logging

from rich.console import Console
from rich.table import Table

from refine3d.model.config import PRESETS, PUBLISHED_PARAMETERS_M, get_preset
from refine3d.model.network import param_count, param_count_by_partition
from refine3d.model.registry import Partition
from refine3d.report.plots_service import write_report

logger = logging.getLogger(__name__)
console = Console()


def cmd_report(args: argparse.Namespace) -> int:
    """Render loss, IoU-vs-views and refiner-gap charts as SVG"""
    for path in write_report(args.metrics, args.eval, args.out):
        console.print(f"wrote {path}")
    return 0


def cmd_params(args: argparse.Namespace) -> int:
    """Trainable parameter counts per partition"""
    names = sorted(PRESETS) if args.preset is None else [args.preset]
    table = Table(title="Trainable parameters")
    table.add_column("preset")
    for partition in Partition:
        table.add_column(partition.value, justify="right")
    table.add_column("total", justify="right")
    table.add_column("total (M)", justify="right")
    for name in names:
        cfg = get_preset(name)
        counts = param_count_by_partition(cfg)
        total = param_count(cfg)
        table.add_row(name, *(f"{counts[p]:,}" for p in Partition), f"{total:,}", f"{total / 1e6:.1f}")
    console.print(table)
    console.print(f"published full-size model: {PUBLISHED_PARAMETERS_M}M parameters (for comparison only)")
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser(
        "report", help="SVG charts from metrics and eval CSVs", formatter_class=argparse.ArgumentDefaultsHelpFormatter
    )
    parser.add_argument("--metrics", required=True, help="training metrics CSV")
    parser.add_argument("--eval", required=True, help="IoU CSV written by eval")
    parser.add_argument("--out", required=True, help="output directory for the SVG files")
    parser.set_defaults(handler=cmd_report)

    parser = subparsers.add_parser(
        "params", help="parameter counts per partition", formatter_class=argparse.ArgumentDefaultsHelpFormatter
    )
    parser.add_argument("--preset", choices=sorted(PRESETS), default=None, help="preset (default: all presets)")
    parser.set_defaults(handler=cmd_params)
