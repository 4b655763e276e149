"""
3D U-Net refiner over the decoder's occupancy volume
"""
from typing import List, Optional

from refine3d.autodiff import ops
from refine3d.autodiff.tensor import Tensor
from refine3d.errors import DimensionError
from refine3d.model.config import ModelConfig
from refine3d.model.layers import ParamSpec, batchnorm_specs, conv_specs, deconv_specs
from refine3d.model.registry import ParameterRegistry, Partition

ENCODER_KERNEL = (4, 4, 4)
DECODER_KERNEL = (4, 4, 4)
OUT_KERNEL = (3, 3, 3)


def decoder_out_channels(channels: List[int]) -> List[int]:
    """Transposed-conv output channels, mirroring the encoder and ending at half its first width"""
    return list(channels[-2::-1]) + [max(1, channels[0] // 2)]


def skip_channels(channels: List[int]) -> List[int]:
    """Channels concatenated after each transposed conv; the last skip is the input volume"""
    n = len(channels)
    return [channels[n - 2 - i] for i in range(n - 1)] + [1]


def refiner_specs(cfg: ModelConfig) -> List[ParamSpec]:
    channels = cfg.refiner_channels
    specs: List[ParamSpec] = []
    if not channels:
        return specs
    c_prev = 1
    for s, c in enumerate(channels):
        specs += conv_specs(f"refiner.enc{s}.conv", c, c_prev, ENCODER_KERNEL, Partition.PHI_REF)
        specs += batchnorm_specs(f"refiner.enc{s}.bn", c, Partition.PHI_REF)
        c_prev = c
    for i, (c_out, c_skip) in enumerate(zip(decoder_out_channels(channels), skip_channels(channels))):
        specs += deconv_specs(f"refiner.dec{i}.deconv", c_prev, c_out, DECODER_KERNEL, 2, Partition.PHI_REF)
        specs += batchnorm_specs(f"refiner.dec{i}.bn", c_out, Partition.PHI_REF)
        c_prev = c_out + c_skip
    specs += conv_specs("refiner.out", 1, c_prev, OUT_KERNEL, Partition.PHI_REF)
    return specs


def _bn(x: Tensor, prefix: str, params: ParameterRegistry, mode: str) -> Tensor:
    return ops.batchnorm(
        x,
        params[f"{prefix}.gamma"],
        params[f"{prefix}.beta"],
        params[f"{prefix}.running_mean"],
        params[f"{prefix}.running_var"],
        mode=mode,
    )


def refine(
    v: Tensor,
    cfg: ModelConfig,
    params: ParameterRegistry,
    mode: str = "eval",
    trace: Optional[List[int]] = None,
) -> Tensor:
    """
    Refine occupancy probabilities: [D, D, D] -> [D, D, D] or [B, D, D, D] -> [B, D, D, D].

    Encoder stage: conv k4 pad 2 -> batchnorm -> leaky ReLU -> maxpool 2.
    Decoder stage: transposed conv k4 stride 2 pad 1 -> batchnorm -> ReLU, then the
    matching encoder output (or, after the last stage, the input volume) is
    concatenated on the channel axis. A k3 conv and a sigmoid produce the result.

    `trace` collects the spatial extent at the input and after every conv, pool
    and transposed conv.
    """
    single = v.ndim == 3
    D = cfg.voxel_dim
    x = ops.reshape(v, (1,) + v.shape) if single else v
    if x.ndim != 4 or x.shape[1:] != (D, D, D):
        raise DimensionError(f"refine: expected a {D}^3 volume, got shape {list(v.shape)}")
    if not cfg.refiner_channels:
        return v
    B = x.shape[0]
    volume = ops.reshape(x, (B, 1, D, D, D))
    if trace is not None:
        trace.append(D)

    n = len(cfg.refiner_channels)
    pooled: List[Tensor] = []
    x = volume
    for s in range(n):
        x = ops.conv3d(x, params[f"refiner.enc{s}.conv.weight"], params[f"refiner.enc{s}.conv.bias"], pad=2)
        if trace is not None:
            trace.append(x.shape[2])
        x = ops.maxpool(ops.leaky_relu(_bn(x, f"refiner.enc{s}.bn", params, mode)), 2)
        if trace is not None:
            trace.append(x.shape[2])
        pooled.append(x)

    for i in range(n):
        x = ops.conv_transpose3d(
            x, params[f"refiner.dec{i}.deconv.weight"], params[f"refiner.dec{i}.deconv.bias"], stride=2, pad=1
        )
        x = ops.relu(_bn(x, f"refiner.dec{i}.bn", params, mode))
        if trace is not None:
            trace.append(x.shape[2])
        skip = pooled[n - 2 - i] if i < n - 1 else volume
        if skip.shape[2:] != x.shape[2:]:
            raise DimensionError(f"refine: skip of extent {list(skip.shape[2:])} does not match {list(x.shape[2:])}")
        x = ops.concat([x, skip], axis=1)

    x = ops.sigmoid(ops.conv3d(x, params["refiner.out.weight"], params["refiner.out.bias"], pad=1))
    return ops.reshape(x, (D, D, D)) if single else ops.reshape(x, (B, D, D, D))
