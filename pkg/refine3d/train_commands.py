"""
train command
"""
import argparse
import logging
from pathlib import Path
from typing import List

from refine3d.errors import ConfigError
from refine3d.model.config import get_preset
from refine3d.model.network import Refine3DNet
from refine3d.settings import RunConfig, load_run_config
from refine3d.synthdata.dataset_service import Dataset, load_dataset
from refine3d.training.checkpoint import load_checkpoint, save_checkpoint
from refine3d.training.jtso_service import JTSOTrainer
from refine3d.training.metrics_log import MetricsLog

logger = logging.getLogger(__name__)

PHASE_CHOICES = ["1", "2", "3", "all", "joint"]


def phase_checkpoint_path(out: str, phase: str) -> Path:
    path = Path(out)
    return path.with_name(f"{path.stem}_phase{phase}{path.suffix}")


def _check_dataset(dataset: Dataset, run: RunConfig) -> None:
    cfg = get_preset(run.preset)
    if dataset.voxel_dim != cfg.voxel_dim or dataset.image_size != cfg.input_size:
        raise ConfigError(
            f"dataset has {dataset.voxel_dim}^3 grids and {dataset.image_size}px images; "
            f"preset {run.preset!r} needs {cfg.voxel_dim}^3 and {cfg.input_size}px"
        )


def cmd_train(args: argparse.Namespace) -> int:
    """Train phase by phase (or all phases in order) and write checkpoints and metrics"""
    run = load_run_config(
        args.config,
        {
            "preset": args.preset,
            "seed": args.seed,
            "batch_size": args.batch_size,
            "views_max": args.views_max,
            "data": args.data,
            "out": args.out,
            "metrics": args.metrics,
        },
    )
    if not run.data or not run.out:
        raise ConfigError("both a dataset (--data) and a checkpoint path (--out) are required")
    dataset = load_dataset(run.data)
    _check_dataset(dataset, run)

    if args.resume:
        ckpt = load_checkpoint(args.resume, expected_preset=run.preset)
        metrics = MetricsLog.read(run.metrics) if run.metrics and Path(run.metrics).is_file() else MetricsLog()
        trainer = JTSOTrainer(ckpt.net, dataset, run, ckpt.state, ckpt.optimizers, metrics)
        logger.info("Resuming from %s at step %d", args.resume, ckpt.state.global_step)
    else:
        trainer = JTSOTrainer(Refine3DNet(get_preset(run.preset), seed=run.seed), dataset, run)

    phases: List[str] = ["1", "2", "3"] if args.phase == "all" else [args.phase]

    def on_phase_end(phase: str, t: JTSOTrainer) -> None:
        if run.metrics:
            t.metrics.write(run.metrics)
        if args.phase == "all":
            save_checkpoint(phase_checkpoint_path(run.out, phase), t.net, t.optimizers, t.state)

    trainer.run_phases(phases, allow_out_of_order=args.allow_out_of_order, on_phase_end=on_phase_end)
    save_checkpoint(run.out, trainer.net, trainer.optimizers, trainer.state)
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser(
        "train",
        help="run training phases",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--config", default=None, help="JSON run configuration; flags override its values")
    parser.add_argument("--data", default=None, help="dataset root")
    parser.add_argument("--phase", choices=PHASE_CHOICES, default="all", help="phase to run; joint is the ablation baseline")
    parser.add_argument("--out", default=None, help="checkpoint to write")
    parser.add_argument("--metrics", default=None, help="metrics CSV to write")
    parser.add_argument("--resume", default=None, help="checkpoint to continue from")
    parser.add_argument("--allow-out-of-order", action="store_true", help="skip the 1 -> 2 -> 3 phase order check")
    parser.add_argument("--preset", choices=["paper", "desk"], default=None, help="model preset (config default: desk)")
    parser.add_argument("--seed", type=int, default=None, help="training seed (config default: 0)")
    parser.add_argument("--batch-size", type=int, default=None, help="batch size (config default: 4)")
    parser.add_argument("--views-max", type=int, default=None, help="largest multi-view batch (config default: 4)")
    parser.set_defaults(handler=cmd_train)
