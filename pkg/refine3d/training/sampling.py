"""
Seeded batch sampling for the training phases
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Set, Tuple

import numpy as np

from refine3d.errors import EmptySetError
from refine3d.synthdata.dataset_service import Sample

logger = logging.getLogger(__name__)


@dataclass
class Batch:
    images: np.ndarray  # [B, N, 3, S, S]
    gt: np.ndarray  # [B, D, D, D]
    categories: List[str]

    @property
    def views(self) -> int:
        return int(self.images.shape[1])


class BatchSampler:
    """
    Draws batches from `samples` using one numpy Generator, so the batch sequence is
    reproducible from the seed (and resumable from the generator state).
    """

    def __init__(self, samples: Sequence[Sample], rng: np.random.Generator):
        if not samples:
            raise EmptySetError("no training samples")
        self.samples = list(samples)
        self.rng = rng
        self._warned: Set[str] = set()

    def _multi_view_pool(self, pool: Sequence[Sample]) -> List[Sample]:
        eligible = []
        for sample in pool:
            if sample.view_count >= 2:
                eligible.append(sample)
            elif sample.id not in self._warned:
                self._warned.add(sample.id)
                logger.warning("Skipping sample %s/%s for multi-view batches: only %d view(s)", sample.category, sample.id, sample.view_count)
        return eligible

    def _assemble(self, pool: Sequence[Sample], batch_size: int, n: int) -> Batch:
        picks = self.rng.integers(0, len(pool), size=batch_size)
        images, gts, categories = [], [], []
        for pick in picks:
            sample = pool[int(pick)]
            chosen = self.rng.choice(sample.view_count, size=n, replace=False)
            images.append(sample.images[np.sort(chosen)])
            gts.append(sample.gt)
            categories.append(sample.category)
        return Batch(np.stack(images), np.stack(gts).astype(np.float32), categories)

    def single_view(self, batch_size: int, pool: Optional[Sequence[Sample]] = None) -> Batch:
        pool = [s for s in (pool if pool is not None else self.samples) if s.view_count >= 1]
        if not pool:
            raise EmptySetError("no samples with at least one view")
        return self._assemble(pool, batch_size, 1)

    def multi_view(self, batch_size: int, views_max: int, pool: Optional[Sequence[Sample]] = None) -> Optional[Batch]:
        """Batch whose view count is drawn uniformly from {2..views_max}; None when no sample has 2 views"""
        eligible = self._multi_view_pool(pool if pool is not None else self.samples)
        if not eligible:
            return None
        n = int(self.rng.integers(2, views_max + 1))
        wide_enough = [s for s in eligible if s.view_count >= n]
        if not wide_enough:
            n = max(s.view_count for s in eligible)
            wide_enough = [s for s in eligible if s.view_count >= n]
        return self._assemble(wide_enough, batch_size, n)

    def any_view(self, batch_size: int, views_max: int) -> Batch:
        """Batch whose view count is drawn uniformly from {1..views_max}"""
        most = max(s.view_count for s in self.samples)
        n = min(int(self.rng.integers(1, views_max + 1)), most)
        return self._assemble([s for s in self.samples if s.view_count >= n], batch_size, n)

    def category_pair(self, batch_size: int, views_max: int) -> Tuple[str, Batch, Optional[Batch]]:
        """A single-view batch and a multi-view batch drawn from the same category"""
        categories = sorted({s.category for s in self.samples})
        category = categories[int(self.rng.integers(0, len(categories)))]
        pool = [s for s in self.samples if s.category == category]
        batch_a = self.single_view(batch_size, pool)
        batch_b = self.multi_view(batch_size, views_max, pool)
        if batch_b is None:
            logger.warning("Category %s has no sample with 2+ views; skipping its multi-view sub-step", category)
        return category, batch_a, batch_b
