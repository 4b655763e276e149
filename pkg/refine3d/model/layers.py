"""
Parameter specs and deterministic initialization shared by the network components
"""
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from refine3d.autodiff.ops import LEAKY_SLOPE
from refine3d.model.registry import ParameterRegistry, Partition


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: Tuple[int, ...]
    partition: Partition
    init: str = "he"
    fan_in: int = 1
    trainable: bool = True

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1


def conv_specs(name: str, out_ch: int, in_ch: int, kernel: Sequence[int], partition: Partition) -> List[ParamSpec]:
    fan_in = in_ch * int(np.prod(kernel))
    return [
        ParamSpec(f"{name}.weight", (out_ch, in_ch) + tuple(kernel), partition, "he", fan_in),
        ParamSpec(f"{name}.bias", (out_ch,), partition, "zeros"),
    ]


def deconv_specs(
    name: str, in_ch: int, out_ch: int, kernel: Sequence[int], stride: int, partition: Partition
) -> List[ParamSpec]:
    # each output voxel sees roughly in_ch * (k / stride)^3 inputs
    fan_in = max(1, int(round(in_ch * np.prod(kernel) / stride ** len(kernel))))
    return [
        ParamSpec(f"{name}.weight", (in_ch, out_ch) + tuple(kernel), partition, "he", fan_in),
        ParamSpec(f"{name}.bias", (out_ch,), partition, "zeros"),
    ]


def batchnorm_specs(name: str, channels: int, partition: Partition) -> List[ParamSpec]:
    return [
        ParamSpec(f"{name}.gamma", (channels,), partition, "ones"),
        ParamSpec(f"{name}.beta", (channels,), partition, "zeros"),
        ParamSpec(f"{name}.running_mean", (channels,), partition, "zeros", trainable=False),
        ParamSpec(f"{name}.running_var", (channels,), partition, "ones", trainable=False),
    ]


def _initial_value(spec: ParamSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.init == "zeros":
        return np.zeros(spec.shape)
    if spec.init == "ones":
        return np.ones(spec.shape)
    if spec.init == "he":
        std = math.sqrt(2.0 / ((1.0 + LEAKY_SLOPE ** 2) * max(spec.fan_in, 1)))
        return rng.normal(0.0, std, size=spec.shape)
    if spec.init == "xavier":
        fan_out = spec.shape[-1] if spec.shape else 1
        std = math.sqrt(2.0 / max(spec.fan_in + fan_out, 1))
        return rng.normal(0.0, std, size=spec.shape)
    raise ValueError(f"Unknown init {spec.init!r} for {spec.name}")


def build_registry(specs: Sequence[ParamSpec], seed: int, dtype=np.float32) -> ParameterRegistry:
    """Allocate and initialise every spec in order from one seeded stream"""
    rng = np.random.default_rng(seed)
    registry = ParameterRegistry()
    for spec in specs:
        registry.add(spec.name, _initial_value(spec, rng).astype(dtype), spec.partition, spec.trainable)
    return registry
