"""
Procedural ground-truth solids voxelized on a D^3 grid indexed [x, y, z] (z up)
"""
import logging
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from refine3d.errors import ConfigError

logger = logging.getLogger(__name__)

CATEGORIES = ("sphere", "box", "cylinder", "union2")
MIN_OCCUPANCY = 0.02
MAX_OCCUPANCY = 0.60
MAX_RETRIES = 25

Vec3 = Tuple[float, float, float]


class Primitive(BaseModel):
    """
    One analytic solid in voxel units.

    sphere: size[0] is the radius. box: size holds the half extents.
    cylinder (axis along z): size[0] is the radius, size[2] the half height.
    """
    model_config = ConfigDict(frozen=True)

    kind: Literal["sphere", "box", "cylinder"]
    center: Vec3
    size: Vec3


class ShapeSpec(BaseModel):
    """A category, a seed, and optionally explicit primitives (drawn from the seed when empty)"""
    model_config = ConfigDict(frozen=True)

    category: Literal["sphere", "box", "cylinder", "union2"]
    seed: int = Field(0, ge=0)
    parts: List[Primitive] = Field(default_factory=list)


# ---------------- voxelization ----------------
def _centers(D: int):
    axis = np.arange(D, dtype=np.float64) + 0.5
    return np.meshgrid(axis, axis, axis, indexing="ij")


def voxelize(parts: List[Primitive], D: int) -> np.ndarray:
    """Union of primitives by voxel-center inclusion"""
    X, Y, Z = _centers(D)
    grid = np.zeros((D, D, D), dtype=bool)
    for part in parts:
        cx, cy, cz = part.center
        sx, sy, sz = part.size
        if part.kind == "sphere":
            inside = (X - cx) ** 2 + (Y - cy) ** 2 + (Z - cz) ** 2 <= sx * sx
        elif part.kind == "box":
            inside = (np.abs(X - cx) < sx) & (np.abs(Y - cy) < sy) & (np.abs(Z - cz) < sz)
        else:
            inside = ((X - cx) ** 2 + (Y - cy) ** 2 <= sx * sx) & (np.abs(Z - cz) <= sz)
        grid |= inside
    return grid.astype(np.uint8)


def _bounds_problem(grid: np.ndarray) -> Optional[str]:
    occupancy = float(grid.mean())
    if occupancy < MIN_OCCUPANCY:
        return f"occupancy {occupancy:.3f} below {MIN_OCCUPANCY}"
    if occupancy > MAX_OCCUPANCY:
        return f"occupancy {occupancy:.3f} above {MAX_OCCUPANCY}"
    border = np.ones_like(grid, dtype=bool)
    border[1:-1, 1:-1, 1:-1] = False
    if np.any(grid[border]):
        return "solid touches the one-voxel margin"
    return None


# ---------------- parameter drawing ----------------
def _draw_primitive(kind: str, rng: np.random.Generator, D: int, center: Vec3, scale: float = 1.0) -> Primitive:
    if kind == "sphere":
        r = rng.uniform(0.2, 0.35) * D * scale
        size = (r, r, r)
    elif kind == "box":
        size = tuple(float(s) for s in rng.uniform(0.15, 0.35, size=3) * D * scale)
    else:
        r = rng.uniform(0.15, 0.3) * D * scale
        size = (r, r, rng.uniform(0.2, 0.4) * D * scale)
    return Primitive(kind=kind, center=center, size=size)


def draw_parts(category: str, rng: np.random.Generator, D: int) -> List[Primitive]:
    jitter = rng.uniform(-0.1, 0.1, size=3) * D
    center = tuple(float(c) for c in D / 2.0 + jitter)
    if category != "union2":
        return [_draw_primitive(category, rng, D, center)]
    axis = int(rng.integers(3))
    offset = np.zeros(3)
    offset[axis] = 0.15 * D
    kinds = rng.choice(["sphere", "box", "cylinder"], size=2)
    first = tuple(float(c) for c in np.asarray(center) - offset)
    second = tuple(float(c) for c in np.asarray(center) + offset)
    return [
        _draw_primitive(str(kinds[0]), rng, D, first, scale=0.7),
        _draw_primitive(str(kinds[1]), rng, D, second, scale=0.7),
    ]


def _perturb(parts: List[Primitive], problem: str, D: int) -> List[Primitive]:
    """Shrink (or grow) the primitives and pull them toward the grid center"""
    factor = 1.25 if "below" in problem else 0.8
    middle = np.full(3, D / 2.0)
    adjusted = []
    for part in parts:
        center = middle + (np.asarray(part.center) - middle) * 0.8
        adjusted.append(
            Primitive(
                kind=part.kind,
                center=tuple(float(c) for c in center),
                size=tuple(float(s) * factor for s in part.size),
            )
        )
    return adjusted


def gen_shape(spec: ShapeSpec, D: int) -> np.ndarray:
    """
    Binary [D, D, D] grid for `spec`.

    A solid outside the 2%-60% occupancy band, or touching the outer voxel layer,
    is regenerated: drawn parts are redrawn from a derived seed, explicit parts
    are rescaled. After MAX_RETRIES attempts a ConfigError is raised.
    """
    if D < 4:
        raise ConfigError(f"voxel grid of {D}^3 is too small for a shape with a margin")
    parts = list(spec.parts)
    problem = None
    for attempt in range(MAX_RETRIES):
        if not spec.parts:
            rng = np.random.default_rng(np.random.SeedSequence([spec.seed, attempt]))
            parts = draw_parts(spec.category, rng, D)
        grid = voxelize(parts, D)
        problem = _bounds_problem(grid)
        if problem is None:
            if attempt:
                logger.debug("Shape %s/%d accepted after %d retries", spec.category, spec.seed, attempt)
            return grid
        if spec.parts:
            parts = _perturb(parts, problem, D)
    raise ConfigError(f"Could not generate a valid {spec.category} (seed {spec.seed}) at {D}^3: {problem}")
