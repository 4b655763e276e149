"""
binvox v1 reader / writer.

Header lines `#binvox 1`, `dim D D D`, `translate x y z`, `scale s`, `data`, then run-length
pairs (value byte, count byte 1-255). Voxels are stored x-slowest, then z, with y fastest;
grids in memory are indexed [x, y, z].
"""
import logging
from typing import Optional, Tuple

import numpy as np

from refine3d.errors import FormatError
from refine3d.fsutil import PathLike, write_bytes_atomic

logger = logging.getLogger(__name__)

MAGIC = b"#binvox 1"


def encode_rle(flat: np.ndarray) -> bytes:
    """Run-length pairs for a flat 0/1 array; runs longer than 255 are split"""
    if flat.size == 0:
        return b""
    values = flat.astype(np.uint8)
    change = np.flatnonzero(np.diff(values)) + 1
    starts = np.concatenate(([0], change))
    lengths = np.diff(np.concatenate((starts, [values.size])))
    out = bytearray()
    for start, length in zip(starts, lengths):
        value = int(values[start])
        while length > 0:
            run = min(int(length), 255)
            out += bytes((value, run))
            length -= run
    return bytes(out)


def encode_binvox(grid: np.ndarray, translate: Tuple[float, float, float] = (0.0, 0.0, 0.0), scale: float = 1.0) -> bytes:
    grid = np.asarray(grid)
    if grid.ndim != 3 or len(set(grid.shape)) != 1:
        raise ValueError(f"binvox grids must be cubic, got shape {list(grid.shape)}")
    D = grid.shape[0]
    header = (
        f"#binvox 1\ndim {D} {D} {D}\n"
        f"translate {translate[0]:g} {translate[1]:g} {translate[2]:g}\n"
        f"scale {scale:g}\ndata\n"
    ).encode("ascii")
    flat = (grid.transpose(0, 2, 1) > 0).reshape(-1)
    return header + encode_rle(flat)


def write_binvox(grid: np.ndarray, path: PathLike) -> None:
    write_bytes_atomic(path, encode_binvox(grid))


def _read_line(payload: bytes, offset: int) -> Tuple[str, int]:
    end = payload.find(b"\n", offset)
    if end < 0:
        raise FormatError("binvox header ended before the data line", offset=offset)
    try:
        return payload[offset:end].decode("ascii").strip(), end + 1
    except UnicodeDecodeError:
        raise FormatError("binvox header is not ASCII", offset=offset)


def decode_binvox(payload: bytes, expected_dim: Optional[int] = None) -> np.ndarray:
    """Decode a binvox stream into a uint8 grid indexed [x, y, z]"""
    if not payload.startswith(MAGIC):
        raise FormatError("missing '#binvox 1' magic", offset=0)
    _, offset = _read_line(payload, 0)
    dims = None
    while True:
        line_start = offset
        line, offset = _read_line(payload, offset)
        if line == "data":
            break
        fields = line.split()
        if not fields:
            continue
        if fields[0] == "dim":
            try:
                dims = tuple(int(v) for v in fields[1:])
            except ValueError:
                raise FormatError(f"bad dim line {line!r}", offset=line_start)
            if len(dims) != 3 or len(set(dims)) != 1 or dims[0] <= 0:
                raise FormatError(f"only cubic positive grids are supported, got dim {line!r}", offset=line_start)
        elif fields[0] not in ("translate", "scale"):
            raise FormatError(f"unknown header line {line!r}", offset=line_start)
    if dims is None:
        raise FormatError("binvox header has no dim line", offset=offset)
    D = dims[0]
    if expected_dim is not None and D != expected_dim:
        raise FormatError(f"grid is {D}^3 but {expected_dim}^3 was expected", offset=0)

    total = D * D * D
    flat = np.zeros(total, dtype=np.uint8)
    filled = 0
    position = offset
    while filled < total:
        if position + 2 > len(payload):
            raise FormatError(f"data truncated after {filled} of {total} voxels", offset=position)
        value, count = payload[position], payload[position + 1]
        if count == 0:
            raise FormatError("zero-length run", offset=position + 1)
        if value > 1:
            raise FormatError(f"run value {value} is not 0 or 1", offset=position)
        if filled + count > total:
            raise FormatError(f"run of {count} overruns the {total}-voxel grid", offset=position)
        flat[filled : filled + count] = value
        filled += count
        position += 2
    if position != len(payload):
        raise FormatError(f"{len(payload) - position} trailing bytes after the voxel data", offset=position)
    return flat.reshape(D, D, D).transpose(0, 2, 1).copy()


def read_binvox(path: PathLike, expected_dim: Optional[int] = None) -> np.ndarray:
    with open(path, "rb") as f:
        payload = f.read()
    try:
        return decode_binvox(payload, expected_dim)
    except FormatError as e:
        raise FormatError(f"{path}: {e}")
