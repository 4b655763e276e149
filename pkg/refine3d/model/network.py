"""
Refine3DNet - encoder, attention fuser, decoder and refiner bundled with their parameters
"""
import logging
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from refine3d.autodiff import ops
from refine3d.autodiff.tensor import Tensor, grad_enabled, reset_graph
from refine3d.errors import DimensionError, EmptySetError
from refine3d.model.attention import attend, attention_specs
from refine3d.model.config import ModelConfig, get_preset
from refine3d.model.decoder import decode, decoder_specs
from refine3d.model.encoder import encode, encoder_specs
from refine3d.model.layers import ParamSpec, build_registry
from refine3d.model.refiner import refine, refiner_specs
from refine3d.model.registry import ParameterRegistry, Partition
from refine3d.model.types import ViewSet

logger = logging.getLogger(__name__)

Views = Union[ViewSet, Tensor, np.ndarray]


def parameter_specs(cfg: ModelConfig) -> List[ParamSpec]:
    """Every tensor the model owns, in construction order"""
    return encoder_specs(cfg) + attention_specs(cfg) + decoder_specs(cfg) + refiner_specs(cfg)


def build_parameters(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> ParameterRegistry:
    return build_registry(parameter_specs(cfg), seed, dtype)


def param_count(cfg: ModelConfig) -> int:
    """Trainable element count; computed from the specs without allocating anything"""
    return sum(spec.size for spec in parameter_specs(cfg) if spec.trainable)


def param_count_by_partition(cfg: ModelConfig) -> Dict[Partition, int]:
    counts = {partition: 0 for partition in Partition}
    for spec in parameter_specs(cfg):
        if spec.trainable:
            counts[spec.partition] += spec.size
    return counts


def _as_view_tensor(views: Views) -> Tensor:
    if isinstance(views, ViewSet):
        return Tensor(views.images)
    if isinstance(views, Tensor):
        return views
    return Tensor(np.asarray(views))


class Refine3DNet:
    """
    The reconstruction network for one ModelConfig.

    forward() takes a view set [N, 3, S, S] or a batch of equally sized view sets
    [B, N, 3, S, S] and returns (decoder volume, refined volume).
    """

    def __init__(self, cfg: ModelConfig, params: Optional[ParameterRegistry] = None, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.params = params if params is not None else build_parameters(cfg, seed, dtype)

    @classmethod
    def from_preset(cls, name: str, seed: int = 0, dtype=np.float32) -> "Refine3DNet":
        return cls(get_preset(name), seed=seed, dtype=dtype)

    @property
    def dtype(self):
        first = next(iter(self.params.entries()), None)
        return first[1].tensor.dtype if first else np.dtype(np.float32)

    def encode_views(self, images: Tensor) -> Tensor:
        """[B, N, 3, S, S] -> [B, N, L]; all B * N images share one encoder pass"""
        B, N = images.shape[:2]
        flat = ops.reshape(images, (B * N,) + images.shape[2:])
        return ops.reshape(encode(flat, self.cfg, self.params), (B, N, self.cfg.latent_dim))

    def forward(
        self, views: Views, training: bool = False, refiner_trace: Optional[List[int]] = None
    ) -> Tuple[Tensor, Tensor]:
        """
        With gradients enabled, a forward pass from leaf images starts a fresh graph record;
        a record left over from an earlier pass without backward is dropped.
        """
        images = _as_view_tensor(views)
        if grad_enabled() and images.is_leaf:
            reset_graph()
        if images.dtype != self.dtype:
            images = Tensor(images.data.astype(self.dtype), requires_grad=images.requires_grad)
        single = images.ndim == 4
        if single:
            images = ops.reshape(images, (1,) + images.shape)
        if images.ndim != 5:
            raise DimensionError(f"forward: expected [N, 3, S, S] or [B, N, 3, S, S] views, got {list(images.shape)}")
        if images.shape[1] == 0:
            raise EmptySetError("forward: the view set is empty")

        fused = attend(self.encode_views(images), self.cfg, self.params)
        v_decoder = decode(fused, self.cfg, self.params)
        v_refined = refine(v_decoder, self.cfg, self.params, mode="train" if training else "eval", trace=refiner_trace)
        if single:
            D = self.cfg.voxel_dim
            return ops.reshape(v_decoder, (D, D, D)), ops.reshape(v_refined, (D, D, D))
        return v_decoder, v_refined

    __call__ = forward

    def parameter_counts(self) -> Dict[Partition, int]:
        return {partition: self.params.count(partition) for partition in Partition}
