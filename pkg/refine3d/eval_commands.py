"""
eval and reconstruct commands
"""
import argparse
import logging
from typing import List

import numpy as np
from rich.console import Console
from rich.table import Table

from refine3d.autodiff.tensor import Tensor, no_grad
from refine3d.errors import ConfigError, DimensionError
from refine3d.fsutil import write_files_atomic
from refine3d.objectives.evaluation_service import evaluate
from refine3d.objectives.metrics_service import DEFAULT_THRESHOLD, OVERALL, IouReport, binarize, write_iou_csv
from refine3d.report.plots_service import decoder_table_path
from refine3d.synthdata.binvox import encode_binvox
from refine3d.synthdata.dataset_service import load_dataset
from refine3d.synthdata.png import read_png
from refine3d.training.checkpoint import load_checkpoint

logger = logging.getLogger(__name__)
console = Console()


def parse_view_counts(text: str) -> List[int]:
    try:
        counts = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"--views must be a comma-separated list of integers, got {text!r}")
    if not counts:
        raise ConfigError("--views is empty")
    return counts


def _print_table(title: str, reports: List[IouReport]) -> None:
    table = Table(title=title)
    table.add_column("category")
    for report in reports:
        table.add_column(f"{report.views} view(s)", justify="right")
    for name in list(reports[0].categories) + [OVERALL]:
        cells = [f"{(r.overall if name == OVERALL else r.categories.get(name, float('nan'))):.4f}" for r in reports]
        table.add_row(name, *cells)
    console.print(table)


def cmd_eval(args: argparse.Namespace) -> int:
    """Per-category IoU for each requested view count"""
    view_counts = parse_view_counts(args.views)
    ckpt = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    samples = dataset.split(args.split)
    if not samples:
        raise ConfigError(f"the dataset has no {args.split!r} samples")

    result = evaluate(ckpt.net, samples, view_counts, args.threshold, args.seed)
    write_iou_csv(result.refined, args.out)
    if args.compare_refiner:
        write_iou_csv(result.decoder, str(decoder_table_path(args.out)))

    _print_table("Refined IoU", result.refined)
    if args.compare_refiner:
        _print_table("Decoder IoU", result.decoder)
    return 0


def cmd_reconstruct(args: argparse.Namespace) -> int:
    """Reconstruct a voxel model from one or more images"""
    ckpt = load_checkpoint(args.checkpoint)
    cfg = ckpt.net.cfg
    paths = [p for p in args.images.split(",") if p.strip()]
    if not paths:
        raise ConfigError("--images needs at least one PNG")
    images = []
    for path in paths:
        image = read_png(path)
        if image.shape[1:] != (cfg.input_size, cfg.input_size):
            raise DimensionError(
                f"{path} is {image.shape[2]}x{image.shape[1]}; preset {cfg.name!r} expects {cfg.input_size}x{cfg.input_size}"
            )
        images.append(image)
    # canonical order, so any permutation of the inputs gives the same bytes
    images.sort(key=lambda img: img.tobytes())

    with no_grad():
        _, v_refined = ckpt.net.forward(Tensor(np.stack(images)), training=False)
    grid = binarize(v_refined.data, args.threshold)

    outputs = {args.out: encode_binvox(grid)}
    if args.probs:
        outputs[args.probs] = np.ascontiguousarray(v_refined.data, dtype="<f4").tobytes()
    write_files_atomic(outputs)
    logger.info("Reconstructed %d occupied voxels from %d view(s) -> %s", int(grid.sum()), len(images), args.out)
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser(
        "eval", help="IoU tables by view count", formatter_class=argparse.ArgumentDefaultsHelpFormatter
    )
    parser.add_argument("--checkpoint", required=True, help="checkpoint to evaluate")
    parser.add_argument("--data", required=True, help="dataset root")
    parser.add_argument("--views", default="1,2,3,4", help="comma-separated view counts")
    parser.add_argument("--out", required=True, help="IoU CSV to write")
    parser.add_argument("--split", choices=["train", "val", "test"], default="test", help="dataset split")
    parser.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD, help="binarization threshold")
    parser.add_argument("--seed", type=int, default=0, help="seed for the per-sample view subsets")
    parser.add_argument(
        "--compare-refiner", action="store_true", help="also write the decoder-output table to <out>_decoder.csv"
    )
    parser.set_defaults(handler=cmd_eval)

    parser = subparsers.add_parser(
        "reconstruct", help="images to a binvox model", formatter_class=argparse.ArgumentDefaultsHelpFormatter
    )
    parser.add_argument("--checkpoint", required=True, help="trained checkpoint")
    parser.add_argument("--images", required=True, help="comma-separated PNG paths")
    parser.add_argument("--out", required=True, help="binvox file to write")
    parser.add_argument("--probs", default=None, help="optional raw float32 little-endian probability dump")
    parser.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD, help="binarization threshold")
    parser.set_defaults(handler=cmd_reconstruct)
