"""
3D decoder: the fused latent is reshaped into a 2x2x2 seed volume and grown by residual
transposed-conv blocks to voxel_dim^3 occupancy probabilities
"""
import logging
from typing import List, Optional

from refine3d.autodiff import ops
from refine3d.autodiff.tensor import Tensor
from refine3d.errors import ConfigError, DimensionError
from refine3d.model.config import ModelConfig
from refine3d.model.layers import ParamSpec, conv_specs, deconv_specs
from refine3d.model.registry import ParameterRegistry, Partition

logger = logging.getLogger(__name__)

KERNEL = (3, 3, 3)
POINTWISE = (1, 1, 1)


def decoder_specs(cfg: ModelConfig) -> List[ParamSpec]:
    specs: List[ParamSpec] = []
    if not cfg.decoder_channels:
        return specs
    c_prev = cfg.seed_channels
    for i, c in enumerate(cfg.decoder_channels):
        stride = 2 if i < cfg.upsampling_blocks else 1
        prefix = f"decoder.block{i}"
        specs += deconv_specs(f"{prefix}.deconv1", c_prev, c, KERNEL, stride, Partition.THETA_BASE)
        specs += deconv_specs(f"{prefix}.deconv2", c, c, KERNEL, 1, Partition.THETA_BASE)
        specs += conv_specs(f"{prefix}.skip", c, c_prev, POINTWISE, Partition.THETA_BASE)
        c_prev = c
    specs += conv_specs("decoder.out", 1, c_prev, POINTWISE, Partition.THETA_BASE)
    return specs


def _block(x: Tensor, i: int, cfg: ModelConfig, params: ParameterRegistry) -> Tensor:
    prefix = f"decoder.block{i}"
    upsample = i < cfg.upsampling_blocks
    if upsample:
        h = ops.conv_transpose3d(
            x, params[f"{prefix}.deconv1.weight"], params[f"{prefix}.deconv1.bias"], stride=2, pad=1, output_pad=1
        )
        identity = ops.upsample_nearest(x, 2)
    else:
        h = ops.conv_transpose3d(x, params[f"{prefix}.deconv1.weight"], params[f"{prefix}.deconv1.bias"], pad=1)
        identity = x
    h = ops.leaky_relu(h)
    h = ops.conv_transpose3d(h, params[f"{prefix}.deconv2.weight"], params[f"{prefix}.deconv2.bias"], pad=1)
    identity = ops.conv3d(identity, params[f"{prefix}.skip.weight"], params[f"{prefix}.skip.bias"])
    return ops.leaky_relu(ops.add(h, identity))


def decode(latent: Tensor, cfg: ModelConfig, params: ParameterRegistry, trace: Optional[List[int]] = None) -> Tensor:
    """
    latent [L] -> probabilities [D, D, D]; batched [B, L] -> [B, D, D, D].

    If `trace` is given, the spatial extent after the seed reshape and after each
    block is appended to it.
    """
    if cfg.latent_dim % 8 != 0:
        raise ConfigError(f"decode: latent_dim {cfg.latent_dim} cannot form a 2x2x2 seed volume")
    single = latent.ndim == 1
    x = ops.reshape(latent, (1,) + latent.shape) if single else latent
    if x.ndim != 2 or x.shape[1] != cfg.latent_dim:
        raise DimensionError(f"decode: expected a latent of length {cfg.latent_dim}, got shape {list(latent.shape)}")
    B = x.shape[0]
    x = ops.reshape(x, (B, cfg.seed_channels, 2, 2, 2))
    if trace is not None:
        trace.append(x.shape[2])
    for i in range(len(cfg.decoder_channels)):
        x = _block(x, i, cfg, params)
        if trace is not None:
            trace.append(x.shape[2])
    x = ops.sigmoid(ops.conv3d(x, params["decoder.out.weight"], params["decoder.out.bias"]))
    D = cfg.voxel_dim
    logger.debug("Decoded %d latent(s) to %d^3 volumes", B, D)
    return ops.reshape(x, (D, D, D)) if single else ops.reshape(x, (B, D, D, D))
