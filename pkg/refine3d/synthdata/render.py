"""
Orthographic shaded renderer for voxel grids.

World coordinates are voxel units: voxel [i, j, k] fills [i, i+1) x [j, j+1) x [k, k+1),
z is up and the grid center is (D/2, D/2, D/2). A camera at azimuth a and elevation e
sits on the unit direction (cos e cos a, cos e sin a, sin e) and looks back at the center.
"""
import math
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from refine3d.errors import DimensionError, EmptySetError

BASE_COLOR = np.array([0.8, 0.35, 0.2])
BACKGROUND = 1.0
AMBIENT = 0.3
LIGHT = np.array([0.4, -0.3, 0.85]) / np.linalg.norm([0.4, -0.3, 0.85])


class Camera(BaseModel):
    model_config = ConfigDict(frozen=True)

    azimuth_deg: float = Field(..., ge=0.0, lt=360.0)
    elevation_deg: float = Field(..., ge=-30.0, le=30.0)
    # image side length as a multiple of the grid side length
    scale: float = Field(1.5, gt=0.0)

    def basis(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(viewing direction, image right, image up) as unit vectors"""
        az, el = math.radians(self.azimuth_deg), math.radians(self.elevation_deg)
        ca, sa, ce, se = math.cos(az), math.sin(az), math.cos(el), math.sin(el)
        direction = -np.array([ce * ca, ce * sa, se])
        right = np.array([-sa, ca, 0.0])
        up = np.array([-se * ca, -se * sa, ce])
        return direction, right, up


def _surface_normals(grid: np.ndarray) -> np.ndarray:
    """Outward normals [D, D, D, 3] from the central-difference gradient of the occupancy field"""
    padded = np.pad(grid.astype(np.float64), 1)
    gx, gy, gz = np.gradient(padded)
    return -np.stack([gx, gy, gz], axis=-1)[1:-1, 1:-1, 1:-1]


def pixel_rays(cam: Camera, D: int, S: int) -> np.ndarray:
    """Ray origins [S, S, 3]: pixel centers on the plane through the grid center, row 0 at the top"""
    _, right, up = cam.basis()
    pixel = cam.scale * D / S
    offsets = (np.arange(S) + 0.5 - S / 2.0) * pixel
    u = offsets[None, :, None]
    w = -offsets[:, None, None]
    return np.full(3, D / 2.0) + u * right + w * up


def _first_hits(occupied: np.ndarray, origins: np.ndarray, direction: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Walk every ray (line origins[r] + t * direction) through the grid one cell at a
    time, Amanatides-Woo style, and return (hit [R], first occupied cell [R, 3]).

    Every cell the line passes through is visited, so a ray that only clips the
    corner of a voxel still hits it.
    """
    D = occupied.shape[0]
    R = origins.shape[0]
    moving = direction != 0.0
    inv = np.zeros(3)
    inv[moving] = 1.0 / direction[moving]

    # slab entry/exit against the grid box [0, D]^3
    t_lo = np.full((R, 3), -np.inf)
    t_hi = np.full((R, 3), np.inf)
    near = -origins[:, moving] * inv[moving]
    far = (D - origins[:, moving]) * inv[moving]
    t_lo[:, moving] = np.minimum(near, far)
    t_hi[:, moving] = np.maximum(near, far)
    still = origins[:, ~moving]
    parallel_inside = np.all((still >= 0.0) & (still < D), axis=1)
    t_enter = t_lo.max(axis=1)
    active = parallel_inside & (t_enter < t_hi.min(axis=1))

    entry = origins + np.where(active, t_enter, 0.0)[:, None] * direction
    cell = np.clip(np.floor(entry), 0, D - 1).astype(np.int64)
    step = np.sign(direction).astype(np.int64)
    t_max = np.full((R, 3), np.inf)
    boundary = cell[:, moving] + (step[moving] > 0)
    t_max[:, moving] = (boundary - origins[:, moving]) * inv[moving]
    t_delta = np.where(moving, np.abs(inv), np.inf)

    hit = np.zeros(R, dtype=bool)
    hit_cell = np.zeros((R, 3), dtype=np.int64)
    for _ in range(3 * D + 3):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        c = cell[rows]
        found = occupied[c[:, 0], c[:, 1], c[:, 2]]
        hit[rows[found]] = True
        hit_cell[rows[found]] = c[found]
        active[rows[found]] = False

        rows = rows[~found]
        axis = np.argmin(t_max[rows], axis=1)
        cell[rows, axis] += step[axis]
        t_max[rows, axis] += t_delta[axis]
        inside = np.all((cell[rows] >= 0) & (cell[rows] < D), axis=1)
        active[rows[~inside]] = False
    return hit, hit_cell


def render(grid: np.ndarray, cam: Camera, S: int) -> np.ndarray:
    """
    Render a binary grid to an RGB image [3, S, S] with values in [0, 1].

    One orthographic ray per pixel center is traversed cell by cell, so the
    silhouette is exactly the projection of the occupied voxels. The first occupied
    voxel along the ray is shaded with a Lambertian term from a fixed light plus
    ambient. Pixels that miss the solid stay white.
    """
    grid = np.asarray(grid)
    if grid.ndim != 3 or len(set(grid.shape)) != 1:
        raise DimensionError(f"render: expected a cubic grid, got shape {list(grid.shape)}")
    occupied = grid > 0
    if not occupied.any():
        raise EmptySetError("render: the grid has no occupied voxels")
    if S < 1:
        raise DimensionError(f"render: image size must be positive, got {S}")
    D = grid.shape[0]
    direction = cam.basis()[0]
    origins = pixel_rays(cam, D, S)
    any_hit, hit_cells = _first_hits(occupied, origins.reshape(-1, 3), direction)
    any_hit = any_hit.reshape(S, S)
    hit_cells = hit_cells.reshape(S, S, 3)

    normals = _surface_normals(grid)[hit_cells[..., 0], hit_cells[..., 1], hit_cells[..., 2]]
    length = np.linalg.norm(normals, axis=-1, keepdims=True)
    facing = -direction
    normals = np.where(length > 1e-6, normals / np.maximum(length, 1e-12), facing)
    shade = AMBIENT + (1.0 - AMBIENT) * np.clip(normals @ LIGHT, 0.0, None)

    image = np.full((S, S, 3), BACKGROUND)
    image[any_hit] = shade[any_hit][:, None] * BASE_COLOR
    return np.clip(image, 0.0, 1.0).transpose(2, 0, 1)
