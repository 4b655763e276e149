"""
gen-data command
"""
import argparse
import logging

from rich.console import Console
from rich.table import Table

from refine3d.synthdata.dataset_service import gen_dataset

logger = logging.getLogger(__name__)
console = Console()


def cmd_gen_data(args: argparse.Namespace) -> int:
    """Generate a procedural multi-view dataset"""
    manifest = gen_dataset(args.num, args.views, args.dim, args.img, args.seed, args.out)

    table = Table(title=f"Dataset {args.out}")
    table.add_column("category")
    for split in ("train", "val", "test"):
        table.add_column(split, justify="right")
    for category in sorted({s.category for s in manifest.samples}):
        counts = [sum(1 for s in manifest.samples if s.category == category and s.split == split) for split in ("train", "val", "test")]
        table.add_row(category, *(str(c) for c in counts))
    console.print(table)
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser(
        "gen-data",
        help="generate a synthetic dataset",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--out", required=True, help="dataset root directory")
    parser.add_argument("--num", type=int, default=32, help="number of samples")
    parser.add_argument("--views", type=int, default=4, help="rendered views per sample")
    parser.add_argument("--dim", type=int, default=16, help="voxel grid side length")
    parser.add_argument("--img", type=int, default=32, help="image side length in pixels")
    parser.add_argument("--seed", type=int, default=0, help="generation seed")
    parser.set_defaults(handler=cmd_gen_data)
