"""
ParameterRegistry - named parameter tensors partitioned into Θ_base, Φ_att and Φ_ref
"""
import hashlib
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from refine3d.autodiff.tensor import Tensor
from refine3d.errors import ConfigError


class Partition(str, Enum):
    THETA_BASE = "theta_base"
    PHI_ATT = "phi_att"
    PHI_REF = "phi_ref"


# checkpoint tag bytes; 3 is reserved for optimizer / trainer state
PARTITION_TAGS = {Partition.THETA_BASE: 0, Partition.PHI_ATT: 1, Partition.PHI_REF: 2}
OPTIMIZER_TAG = 3


@dataclass
class RegistryEntry:
    tensor: Tensor
    partition: Partition
    trainable: bool = True


class ParameterRegistry:
    """
    Ordered map name -> tensor. Every entry has exactly one partition.

    Non-trainable entries are buffers (batch-norm running statistics); they are saved
    with the model but never receive gradients or optimizer updates.
    """

    def __init__(self):
        self._entries: Dict[str, RegistryEntry] = {}

    def add(self, name: str, data: np.ndarray, partition: Partition, trainable: bool = True) -> Tensor:
        if name in self._entries:
            raise ConfigError(f"Duplicate parameter name {name!r}")
        tensor = Tensor(np.array(data, copy=True), requires_grad=trainable)
        self._entries[name] = RegistryEntry(tensor, Partition(partition), trainable)
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._entries[name].tensor
        except KeyError:
            raise ConfigError(f"Unknown parameter {name!r}")

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def entries(self) -> Iterator[Tuple[str, RegistryEntry]]:
        return iter(self._entries.items())

    def partition_of(self, name: str) -> Partition:
        return self._entries[name].partition

    def names(self, partition: Optional[Partition] = None, trainable_only: bool = True) -> List[str]:
        return [
            name
            for name, entry in self._entries.items()
            if (partition is None or entry.partition == partition) and (entry.trainable or not trainable_only)
        ]

    def parameters(self, partition: Optional[Partition] = None) -> Dict[str, Tensor]:
        return {name: self._entries[name].tensor for name in self.names(partition)}

    def zero_grad(self) -> None:
        for entry in self._entries.values():
            entry.tensor.zero_grad()

    def count(self, partition: Optional[Partition] = None) -> int:
        return int(sum(self._entries[name].tensor.size for name in self.names(partition)))

    def digest(self, partition: Optional[Partition] = None) -> str:
        """SHA-256 over the raw bytes of a partition (including its buffers)"""
        sha = hashlib.sha256()
        for name in self.names(partition, trainable_only=False):
            sha.update(name.encode("utf-8"))
            sha.update(np.ascontiguousarray(self._entries[name].tensor.data).tobytes())
        return sha.hexdigest()

    def astype(self, dtype) -> "ParameterRegistry":
        """Deep copy with every tensor converted to `dtype`"""
        copy = ParameterRegistry()
        for name, entry in self._entries.items():
            copy.add(name, entry.tensor.data.astype(dtype), entry.partition, entry.trainable)
        return copy
