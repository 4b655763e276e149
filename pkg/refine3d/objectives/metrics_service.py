"""
Voxel losses and IoU metrics, and the IoU table CSV format used by eval and report
"""
import csv
import io
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator

from refine3d.autodiff import ops
from refine3d.autodiff.tensor import Tensor
from refine3d.errors import DimensionError, EmptySetError, FormatError
from refine3d.fsutil import write_text_atomic

logger = logging.getLogger(__name__)

CLIP_EPS = 1e-7
DEFAULT_THRESHOLD = 0.25
OVERALL = "__overall__"
IOU_COLUMNS = ["category", "views", "threshold", "mean_iou"]


# ---------------- loss ----------------
def _check_binary(gt: np.ndarray) -> None:
    if not np.all((gt == 0) | (gt == 1)):
        values = np.unique(gt[(gt != 0) & (gt != 1)])[:3]
        raise FormatError(f"ground-truth grid must contain only 0 and 1, found {values.tolist()}")


def voxel_cross_entropy(pred: Tensor, gt) -> Tensor:
    """
    Mean voxel-wise binary cross-entropy, non-negative.

    pred holds probabilities and is clipped to [1e-7, 1 - 1e-7] before the log.
    Works on single grids and on batches alike (mean over every voxel).
    """
    gt_data = gt.data if isinstance(gt, Tensor) else np.asarray(gt)
    if pred.shape != gt_data.shape:
        raise DimensionError(f"voxel_cross_entropy: prediction {list(pred.shape)} vs ground truth {list(gt_data.shape)}")
    _check_binary(gt_data)
    target = Tensor(gt_data.astype(pred.dtype))
    p = ops.clip(pred, CLIP_EPS, 1.0 - CLIP_EPS)
    occupied = ops.mul(target, ops.log(p))
    empty = ops.mul(ops.sub(1.0, target), ops.log(ops.sub(1.0, p)))
    return ops.neg(ops.mean(ops.add(occupied, empty)))


@dataclass(frozen=True)
class LossTriple:
    l_p: float
    l_r: float

    @property
    def l_m(self) -> float:
        return (self.l_p + self.l_r) * 0.5


# ---------------- IoU ----------------
def binarize(pred, t: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """1 where p > t (strict), else 0"""
    data = pred.data if isinstance(pred, Tensor) else np.asarray(pred)
    return (data > t).astype(np.uint8)


def iou(pred, gt, t: float = DEFAULT_THRESHOLD) -> float:
    """Intersection over union of binarize(pred, t) and gt; two empty sets count as a perfect match"""
    pred_bin = binarize(pred, t).astype(bool)
    gt_bin = np.asarray(gt.data if isinstance(gt, Tensor) else gt) > 0
    if pred_bin.shape != gt_bin.shape:
        raise DimensionError(f"iou: prediction {list(pred_bin.shape)} vs ground truth {list(gt_bin.shape)}")
    union = int(np.count_nonzero(pred_bin | gt_bin))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(pred_bin & gt_bin)) / union


class IouReport(BaseModel):
    """Per-category mean IoU for one view count"""

    categories: Dict[str, float]
    overall: float = Field(..., ge=0.0, le=1.0)
    views: int = Field(..., ge=1)
    threshold: float = DEFAULT_THRESHOLD

    @field_validator("categories")
    @classmethod
    def _in_unit_range(cls, value: Dict[str, float]) -> Dict[str, float]:
        for name, score in value.items():
            if not 0.0 <= score <= 1.0:
                raise ValueError(f"IoU for {name!r} is outside [0, 1]: {score}")
        return value


def aggregate(
    per_sample: Iterable[Tuple[str, float]], views: int = 1, threshold: float = DEFAULT_THRESHOLD
) -> IouReport:
    """Mean within each category; overall is the mean of the category means"""
    grouped: "OrderedDict[str, List[float]]" = OrderedDict()
    for category, score in per_sample:
        grouped.setdefault(category, []).append(float(score))
    if not grouped:
        raise EmptySetError("aggregate: no samples to average")
    categories = {name: math.fsum(scores) / len(scores) for name, scores in sorted(grouped.items())}
    overall = math.fsum(categories.values()) / len(categories)
    return IouReport(categories=categories, overall=overall, views=views, threshold=threshold)


# ---------------- CSV ----------------
def iou_csv_text(reports: Sequence[IouReport]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(IOU_COLUMNS)
    for report in reports:
        for name, score in report.categories.items():
            writer.writerow([name, report.views, repr(report.threshold), repr(score)])
        writer.writerow([OVERALL, report.views, repr(report.threshold), repr(report.overall)])
    return buffer.getvalue()


def write_iou_csv(reports: Sequence[IouReport], path: str) -> None:
    write_text_atomic(path, iou_csv_text(reports))
    logger.info("Wrote IoU table for %d view count(s) to %s", len(reports), path)


def read_iou_csv(path: str) -> List[IouReport]:
    """Parse an IoU table back into one IouReport per view count, in file order"""
    with open(path, "r", encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != IOU_COLUMNS:
        raise FormatError(f"{path}: expected header {','.join(IOU_COLUMNS)}", row=1)

    blocks: "OrderedDict[Tuple[int, float], Dict[str, float]]" = OrderedDict()
    overalls: Dict[Tuple[int, float], float] = {}
    for number, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(IOU_COLUMNS):
            raise FormatError(f"{path}: expected {len(IOU_COLUMNS)} fields, got {len(row)}", row=number)
        category, views, threshold, score = row
        try:
            key = (int(views), float(threshold))
            value = float(score)
        except ValueError:
            raise FormatError(f"{path}: non-numeric field in {row}", row=number)
        if not 0.0 <= value <= 1.0:
            raise FormatError(f"{path}: IoU {value} outside [0, 1]", row=number)
        if category == OVERALL:
            overalls[key] = value
        else:
            blocks.setdefault(key, {})[category] = value

    if not blocks:
        raise FormatError(f"{path}: the table has no category rows", row=len(rows))
    reports = []
    for (views, threshold), categories in blocks.items():
        overall = overalls.get((views, threshold))
        if overall is None:
            overall = math.fsum(categories.values()) / len(categories)
        reports.append(IouReport(categories=categories, overall=overall, views=views, threshold=threshold))
    return reports
