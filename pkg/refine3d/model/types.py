from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from refine3d.errors import DimensionError, EmptySetError

# D x D x D occupancy probabilities in [0, 1], or {0, 1} after thresholding
VoxelGrid = np.ndarray


@dataclass
class ViewSet:
    """Unordered RGB views of one object, images [N, 3, S, S] with values in [0, 1]"""
    images: np.ndarray
    cameras: List[dict] = field(default_factory=list)

    def __post_init__(self):
        self.images = np.asarray(self.images)
        if self.images.ndim != 4 or self.images.shape[1] != 3 or self.images.shape[2] != self.images.shape[3]:
            if self.images.ndim == 4 and self.images.shape[0] == 0:
                raise EmptySetError("A view set needs at least one image")
            raise DimensionError(f"View images must be [N, 3, S, S], got {list(self.images.shape)}")
        if self.images.shape[0] == 0:
            raise EmptySetError("A view set needs at least one image")

    @property
    def count(self) -> int:
        return int(self.images.shape[0])

    @property
    def image_size(self) -> int:
        return int(self.images.shape[-1])

    def subset(self, indices: Optional[List[int]]) -> "ViewSet":
        if indices is None:
            return self
        cameras = [self.cameras[i] for i in indices] if self.cameras else []
        return ViewSet(self.images[list(indices)], cameras)
