"""
Shared 2D image encoder: residual conv blocks, then a fully-connected projection to the latent size
"""
from typing import List

from refine3d.autodiff import ops
from refine3d.autodiff.tensor import Tensor
from refine3d.errors import DimensionError
from refine3d.model.config import ModelConfig
from refine3d.model.layers import ParamSpec, conv_specs
from refine3d.model.registry import ParameterRegistry, Partition


def encoder_specs(cfg: ModelConfig) -> List[ParamSpec]:
    specs: List[ParamSpec] = []
    c_in = 3
    for b, c in enumerate(cfg.encoder_channels):
        prefix = f"encoder.block{b}"
        specs += conv_specs(f"{prefix}.conv1", c, c_in, (3, 3), Partition.THETA_BASE)
        specs += conv_specs(f"{prefix}.conv2", c, c, (3, 3), Partition.THETA_BASE)
        if b not in cfg.encoder_plain_blocks:
            specs += conv_specs(f"{prefix}.skip", c, c_in, (1, 1), Partition.THETA_BASE)
        c_in = c
    if cfg.encoder_channels and cfg.latent_dim:
        flat = cfg.encoder_flat_dim()
        specs.append(ParamSpec("encoder.fc.weight", (flat, cfg.latent_dim), Partition.THETA_BASE, "he", flat))
        specs.append(ParamSpec("encoder.fc.bias", (cfg.latent_dim,), Partition.THETA_BASE, "zeros"))
    return specs


def _block(x: Tensor, b: int, cfg: ModelConfig, params: ParameterRegistry) -> Tensor:
    prefix = f"encoder.block{b}"
    h = ops.leaky_relu(ops.conv2d(x, params[f"{prefix}.conv1.weight"], params[f"{prefix}.conv1.bias"], 1, 1))
    h = ops.conv2d(h, params[f"{prefix}.conv2.weight"], params[f"{prefix}.conv2.bias"], 1, 1)
    if b not in cfg.encoder_plain_blocks:
        h = ops.add(h, ops.conv2d(x, params[f"{prefix}.skip.weight"], params[f"{prefix}.skip.bias"]))
    return ops.maxpool(ops.leaky_relu(h), 2)


def encode(images: Tensor, cfg: ModelConfig, params: ParameterRegistry) -> Tensor:
    """
    Map images to latent vectors.

    Accepts one image [3, S, S] (returns [latent_dim]) or a stack [B, 3, S, S]
    (returns [B, latent_dim]). Every image goes through the same weights.
    """
    single = images.ndim == 3
    x = ops.reshape(images, (1,) + images.shape) if single else images
    if x.ndim != 4 or x.shape[1] != 3:
        raise DimensionError(f"encode: expected [3, S, S] or [B, 3, S, S] images, got {list(images.shape)}")
    if x.shape[2] != cfg.input_size or x.shape[3] != cfg.input_size:
        raise DimensionError(
            f"encode: preset {cfg.name!r} expects {cfg.input_size}x{cfg.input_size} images, "
            f"got {x.shape[2]}x{x.shape[3]}"
        )
    for b in range(len(cfg.encoder_channels)):
        x = _block(x, b, cfg, params)
    x = ops.flatten(x, 1)
    if "encoder.fc.weight" in params:
        x = ops.leaky_relu(ops.add(ops.matmul(x, params["encoder.fc.weight"]), params["encoder.fc.bias"]))
    return ops.reshape(x, (x.shape[1],)) if single else x
