"""
Synthetic dataset generation and loading.

Layout under the dataset root:
    <category>/<id>/view_<k>.png
    <category>/<id>/gt.binvox
    manifest.json
"""
import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from refine3d.errors import ConfigError, FormatError
from refine3d.fsutil import PathLike, atomic_directory
from refine3d.settings import worker_count
from refine3d.synthdata.binvox import read_binvox, write_binvox
from refine3d.synthdata.png import read_png, write_png
from refine3d.synthdata.render import Camera, render
from refine3d.synthdata.shapes import CATEGORIES, ShapeSpec, gen_shape

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
TEST_FRACTION = 0.2
VAL_FRACTION = 0.1


# ---------------- manifest ----------------
class ViewRecord(BaseModel):
    file: str
    azimuth_deg: float
    elevation_deg: float


class SampleRecord(BaseModel):
    category: str
    id: str
    split: Literal["train", "val", "test"]
    views: List[ViewRecord]
    gt: str


class DatasetManifest(BaseModel):
    samples: List[SampleRecord]
    root: Optional[str] = Field(None, exclude=True)

    def to_json(self) -> str:
        return json.dumps(self.model_dump(), sort_keys=True, indent=2) + "\n"

    def split_counts(self) -> Dict[str, int]:
        counts = Counter(s.split for s in self.samples)
        return {name: counts.get(name, 0) for name in ("train", "val", "test")}


def assign_splits(num_samples: int, seed: int) -> List[str]:
    """80:20 train-pool/test by seeded shuffle, then 10% of the pool as validation"""
    order = np.random.default_rng(seed).permutation(num_samples)
    n_test = int(round(TEST_FRACTION * num_samples))
    n_val = int(round(VAL_FRACTION * (num_samples - n_test)))
    splits = ["train"] * num_samples
    for position, index in enumerate(order):
        if position < n_test:
            splits[index] = "test"
        elif position < n_test + n_val:
            splits[index] = "val"
    return splits


# ---------------- generation ----------------
@dataclass
class _Job:
    index: int
    category: str
    split: str
    views: int
    voxel_dim: int
    image_size: int
    seed: int
    root: Path


def _generate_sample(job: _Job) -> SampleRecord:
    rng = np.random.default_rng(np.random.SeedSequence([job.seed, job.index]))
    shape_seed = int(rng.integers(0, 2 ** 63 - 1))
    grid = gen_shape(ShapeSpec(category=job.category, seed=shape_seed), job.voxel_dim)

    sample_id = f"{job.index:05d}"
    rel_dir = Path(job.category) / sample_id
    (job.root / rel_dir).mkdir(parents=True, exist_ok=True)
    write_binvox(grid, job.root / rel_dir / "gt.binvox")

    views = []
    for k in range(job.views):
        cam = Camera(
            azimuth_deg=float(rng.uniform(0.0, 360.0)) % 360.0,
            elevation_deg=float(rng.uniform(-30.0, 30.0)),
        )
        rel_file = rel_dir / f"view_{k}.png"
        write_png(render(grid, cam, job.image_size), job.root / rel_file)
        views.append(ViewRecord(file=rel_file.as_posix(), azimuth_deg=cam.azimuth_deg, elevation_deg=cam.elevation_deg))
    return SampleRecord(
        category=job.category,
        id=sample_id,
        split=job.split,
        views=views,
        gt=(rel_dir / "gt.binvox").as_posix(),
    )


def gen_dataset(
    num_samples: int,
    views_per_sample: int,
    D: int,
    S: int,
    seed: int,
    out_root: PathLike,
    threads: Optional[int] = None,
) -> DatasetManifest:
    """
    Generate a dataset under `out_root`.

    Categories cycle through CATEGORIES by sample index. Each sample draws from its
    own stream seeded by (seed, index), so the tree is identical for any thread
    count. The tree is assembled in a temporary sibling and renamed into place; an
    existing `out_root` is only replaced when it is itself a generated dataset.
    """
    if num_samples < 1 or views_per_sample < 1:
        raise ConfigError(f"need at least one sample and one view, got num={num_samples} views={views_per_sample}")
    target = Path(out_root)
    if target.exists() and not (target / MANIFEST_NAME).is_file():
        raise ConfigError(f"{target} exists and is not a generated dataset; refusing to overwrite it")

    splits = assign_splits(num_samples, seed)
    workers = threads or worker_count()
    with atomic_directory(target) as build_root:
        jobs = [
            _Job(i, CATEGORIES[i % len(CATEGORIES)], splits[i], views_per_sample, D, S, seed, build_root)
            for i in range(num_samples)
        ]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(_generate_sample, jobs))
        manifest = DatasetManifest(samples=samples)
        (build_root / MANIFEST_NAME).write_text(manifest.to_json(), encoding="utf-8")

    manifest.root = str(target)
    logger.info("Generated %d samples x %d views in %s (%s)", num_samples, views_per_sample, target, manifest.split_counts())
    return manifest


# ---------------- loading ----------------
@dataclass
class Sample:
    category: str
    id: str
    split: str
    images: np.ndarray  # [V, 3, S, S] float32
    gt: np.ndarray  # [D, D, D] uint8
    cameras: List[ViewRecord] = field(default_factory=list)

    @property
    def view_count(self) -> int:
        return int(self.images.shape[0])


@dataclass
class Dataset:
    manifest: DatasetManifest
    samples: List[Sample]

    def split(self, name: str) -> List[Sample]:
        return [s for s in self.samples if s.split == name]

    @property
    def categories(self) -> List[str]:
        return sorted({s.category for s in self.samples})

    @property
    def voxel_dim(self) -> int:
        return int(self.samples[0].gt.shape[0])

    @property
    def image_size(self) -> int:
        return int(self.samples[0].images.shape[-1])


def read_manifest(root: PathLike) -> DatasetManifest:
    path = Path(root) / MANIFEST_NAME
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
        manifest = DatasetManifest(**raw)
    except FileNotFoundError:
        raise FormatError(f"{path}: dataset manifest not found")
    except (json.JSONDecodeError, TypeError, ValidationError) as e:
        raise FormatError(f"{path}: malformed manifest: {e}")
    manifest.root = str(root)
    return manifest


def _load_sample(root: Path, record: SampleRecord) -> Sample:
    files = [root / v.file for v in record.views] + [root / record.gt]
    missing = [str(f) for f in files if not f.is_file()]
    if missing:
        raise FormatError(f"manifest lists missing files: {', '.join(missing)}")
    images = np.stack([read_png(root / v.file) for v in record.views]) if record.views else np.zeros((0, 3, 1, 1), np.float32)
    return Sample(
        category=record.category,
        id=record.id,
        split=record.split,
        images=images.astype(np.float32),
        gt=read_binvox(root / record.gt),
        cameras=list(record.views),
    )


def load_dataset(root: PathLike, threads: Optional[int] = None) -> Dataset:
    """Read the manifest, every PNG view and every binvox ground truth into memory"""
    root = Path(root)
    manifest = read_manifest(root)
    if not manifest.samples:
        raise FormatError(f"{root / MANIFEST_NAME}: the manifest lists no samples")
    with ThreadPoolExecutor(max_workers=threads or worker_count()) as pool:
        samples = list(pool.map(lambda record: _load_sample(root, record), manifest.samples))

    dims = {s.gt.shape for s in samples}
    sizes = {s.images.shape[-1] for s in samples if s.view_count}
    if len(dims) != 1 or len(sizes) > 1:
        raise FormatError(f"{root}: samples disagree on grid or image size ({dims}, {sizes})")
    logger.info("Loaded %d samples from %s (%s)", len(samples), root, manifest.split_counts())
    return Dataset(manifest=manifest, samples=samples)
