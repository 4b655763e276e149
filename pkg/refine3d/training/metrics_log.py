"""
Training metrics stream: CSV `step,phase,l_p,l_r,l_m,val_iou,lr`
"""
import csv
import io
import logging
from typing import List, Optional

from pydantic import BaseModel

from refine3d.errors import FormatError
from refine3d.fsutil import PathLike, write_text_atomic

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["step", "phase", "l_p", "l_r", "l_m", "val_iou", "lr"]


class MetricsRow(BaseModel):
    step: int
    phase: str
    l_p: float
    l_r: float
    l_m: float
    val_iou: Optional[float] = None
    lr: float

    def cells(self) -> List[str]:
        val = "" if self.val_iou is None else repr(self.val_iou)
        return [str(self.step), self.phase, repr(self.l_p), repr(self.l_r), repr(self.l_m), val, repr(self.lr)]


class MetricsLog:
    def __init__(self, rows: Optional[List[MetricsRow]] = None):
        self.rows: List[MetricsRow] = list(rows or [])

    def append(self, row: MetricsRow) -> None:
        self.rows.append(row)

    def set_last_val_iou(self, value: float) -> None:
        if self.rows:
            self.rows[-1].val_iou = value

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for row in self.rows:
            writer.writerow(row.cells())
        return buffer.getvalue()

    def write(self, path: PathLike) -> None:
        write_text_atomic(path, self.to_csv())
        logger.debug("Wrote %d metric rows to %s", len(self.rows), path)

    @classmethod
    def read(cls, path: PathLike) -> "MetricsLog":
        with open(path, "r", encoding="utf-8", newline="") as f:
            records = list(csv.reader(f))
        if not records or records[0] != METRIC_COLUMNS:
            raise FormatError(f"{path}: expected header {','.join(METRIC_COLUMNS)}", row=1)
        rows = []
        for number, record in enumerate(records[1:], start=2):
            if not record:
                continue
            if len(record) != len(METRIC_COLUMNS):
                raise FormatError(f"{path}: expected {len(METRIC_COLUMNS)} fields, got {len(record)}", row=number)
            step, phase, l_p, l_r, l_m, val_iou, lr = record
            try:
                rows.append(
                    MetricsRow(
                        step=int(step),
                        phase=phase,
                        l_p=float(l_p),
                        l_r=float(l_r),
                        l_m=float(l_m),
                        val_iou=float(val_iou) if val_iou else None,
                        lr=float(lr),
                    )
                )
            except ValueError:
                raise FormatError(f"{path}: malformed metrics row {record}", row=number)
        return cls(rows)
