"""
SVG charts for training and evaluation outputs
"""
import io
import logging
from pathlib import Path
from typing import Dict, List, Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from refine3d.errors import FormatError  # noqa: E402
from refine3d.fsutil import PathLike, write_bytes_atomic  # noqa: E402
from refine3d.objectives.metrics_service import OVERALL, IouReport, read_iou_csv  # noqa: E402
from refine3d.training.metrics_log import MetricsLog  # noqa: E402

logger = logging.getLogger(__name__)

matplotlib.rcParams["svg.hashsalt"] = "refine3d"
matplotlib.rcParams["svg.fonttype"] = "none"

LOSS_CHART = "loss_curves.svg"
IOU_CHART = "iou_vs_views.svg"
GAP_CHART = "refiner_gap.svg"


def _svg_bytes(fig) -> bytes:
    buffer = io.BytesIO()
    fig.savefig(buffer, format="svg", bbox_inches="tight", metadata={"Date": None})
    plt.close(fig)
    return buffer.getvalue()


def loss_curves_svg(metrics: MetricsLog) -> bytes:
    steps = [row.step for row in metrics.rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    for column in ("l_p", "l_r", "l_m"):
        ax.plot(steps, [getattr(row, column) for row in metrics.rows], label=column, gid=f"series-{column}")
    ax.set_xlabel("step")
    ax.set_ylabel("cross-entropy")
    ax.set_title("Training losses")
    ax.legend()
    ax.grid(alpha=0.3)
    return _svg_bytes(fig)


def _per_category(reports: List[IouReport]) -> Dict[str, List[float]]:
    series: Dict[str, List[float]] = {}
    for report in reports:
        for name, score in report.categories.items():
            series.setdefault(name, []).append(score)
        series.setdefault(OVERALL, []).append(report.overall)
    return series


def iou_vs_views_svg(reports: List[IouReport]) -> bytes:
    """One line per category plus the overall mean"""
    views = [r.views for r in reports]
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, scores in _per_category(reports).items():
        if len(scores) != len(views):
            raise FormatError(f"category {name!r} is missing from some view counts")
        style = {"color": "black", "linewidth": 2.5} if name == OVERALL else {}
        ax.plot(views, scores, marker="o", label=name, gid=f"series-{name}", **style)
    ax.set_xlabel("views")
    ax.set_ylabel(f"mean IoU @ {reports[0].threshold:g}")
    ax.set_xticks(views)
    ax.set_title("IoU by number of views")
    ax.legend(fontsize="small")
    ax.grid(alpha=0.3)
    return _svg_bytes(fig)


def refiner_gap_svg(refined: List[IouReport], decoder: List[IouReport]) -> bytes:
    """Refined minus decoder-output IoU per view count"""
    if [r.views for r in refined] != [d.views for d in decoder]:
        raise FormatError("refined and decoder tables cover different view counts")
    views = [r.views for r in refined]
    fig, ax = plt.subplots(figsize=(7, 4))
    ref, dec = _per_category(refined), _per_category(decoder)
    for name in ref:
        if name not in dec:
            raise FormatError(f"category {name!r} is missing from the decoder table")
        gaps = [a - b for a, b in zip(ref[name], dec[name])]
        style = {"color": "black", "linewidth": 2.5} if name == OVERALL else {}
        ax.plot(views, gaps, marker="o", label=name, gid=f"series-{name}", **style)
    ax.axhline(0.0, color="grey", linewidth=0.8)
    ax.set_xlabel("views")
    ax.set_ylabel("refined IoU - decoder IoU")
    ax.set_xticks(views)
    ax.set_title("Refiner effect by number of views")
    ax.legend(fontsize="small")
    ax.grid(alpha=0.3)
    return _svg_bytes(fig)


def decoder_table_path(eval_path: PathLike) -> Path:
    path = Path(eval_path)
    return path.with_name(f"{path.stem}_decoder{path.suffix}")


def write_report(metrics_path: PathLike, eval_path: PathLike, out_dir: PathLike) -> List[Path]:
    """
    Read both CSVs, render every chart in memory, and only then write the SVGs.

    The gap chart needs the decoder table written by `eval --compare-refiner`
    next to the eval CSV; without it that chart is skipped.
    """
    metrics = MetricsLog.read(metrics_path)
    if not metrics.rows:
        raise FormatError(f"{metrics_path}: no metric rows", row=2)
    refined = read_iou_csv(str(eval_path))
    decoder: Optional[List[IouReport]] = None
    decoder_path = decoder_table_path(eval_path)
    if decoder_path.is_file():
        decoder = read_iou_csv(str(decoder_path))
    else:
        logger.warning("No decoder table at %s; skipping the refiner gap chart", decoder_path)

    charts = {LOSS_CHART: loss_curves_svg(metrics), IOU_CHART: iou_vs_views_svg(refined)}
    if decoder is not None:
        charts[GAP_CHART] = refiner_gap_svg(refined, decoder)

    out = Path(out_dir)
    written = []
    for name, payload in charts.items():
        write_bytes_atomic(out / name, payload)
        written.append(out / name)
    logger.info("Wrote %d chart(s) to %s", len(written), out)
    return written
