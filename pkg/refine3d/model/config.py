"""
Model presets - the same architecture code runs at full size (shape checks) and desk scale (training)
"""
import math
from typing import List, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from refine3d.errors import ConfigError


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    input_size: int = Field(..., ge=1)
    encoder_channels: List[int]
    # zero-based indices of encoder blocks without a 1x1 skip path
    encoder_plain_blocks: Tuple[int, ...] = (3,)
    latent_dim: int = Field(..., ge=0)
    heads: int = Field(..., ge=1)
    decoder_channels: List[int]
    voxel_dim: int = Field(..., ge=2)
    refiner_channels: List[int]

    @model_validator(mode="after")
    def _check(self) -> "ModelConfig":
        if self.latent_dim % self.heads != 0:
            raise ValueError(f"latent_dim {self.latent_dim} is not divisible by heads {self.heads}")
        if self.latent_dim % 8 != 0:
            raise ValueError(f"latent_dim {self.latent_dim} cannot be reshaped into a 2x2x2 seed volume")
        ups = math.log2(self.voxel_dim / 2)
        if ups != int(ups):
            raise ValueError(f"voxel_dim {self.voxel_dim} must be 2 * 2^k")
        if self.decoder_channels and len(self.decoder_channels) < int(ups):
            raise ValueError(
                f"{len(self.decoder_channels)} decoder stages cannot upsample 2 -> {self.voxel_dim} "
                f"({int(ups)} doubling stages needed)"
            )
        if self.refiner_channels and self.voxel_dim % (2 ** len(self.refiner_channels)) != 0:
            raise ValueError(f"voxel_dim {self.voxel_dim} is not divisible by 2^{len(self.refiner_channels)}")
        return self

    @property
    def seed_channels(self) -> int:
        return self.latent_dim // 8

    @property
    def head_dim(self) -> int:
        return self.latent_dim // self.heads

    @property
    def upsampling_blocks(self) -> int:
        return int(math.log2(self.voxel_dim / 2))

    def encoder_sizes(self) -> List[int]:
        """Spatial extent after each encoder block (3x3 convs keep size, pooling halves it)"""
        sizes = [self.input_size]
        for _ in self.encoder_channels:
            sizes.append(sizes[-1] // 2)
        return sizes

    def encoder_flat_dim(self) -> int:
        if not self.encoder_channels:
            return 3 * self.input_size * self.input_size
        final = self.encoder_sizes()[-1]
        return self.encoder_channels[-1] * final * final


PAPER = ModelConfig(
    name="paper",
    input_size=127,
    encoder_channels=[96, 128, 256, 256, 256, 256],
    latent_dim=1024,
    heads=8,
    decoder_channels=[128, 128, 128, 64, 64, 32],
    voxel_dim=32,
    refiner_channels=[32, 64, 128],
)

DESK = ModelConfig(
    name="desk",
    input_size=32,
    encoder_channels=[8, 16, 16, 16],
    latent_dim=64,
    heads=2,
    decoder_channels=[16, 16, 8, 8],
    voxel_dim=16,
    refiner_channels=[8, 16, 32],
)

PRESETS = {"paper": PAPER, "desk": DESK}

# published total for the full-size network, reported next to our own count
PUBLISHED_PARAMETERS_M = 143


def get_preset(name: str) -> ModelConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"Unknown preset {name!r}; choose one of {sorted(PRESETS)}")


def make_config(**fields) -> ModelConfig:
    """Build a custom ModelConfig, surfacing validation problems as ConfigError"""
    try:
        return ModelConfig(**fields)
    except ValidationError as e:
        raise ConfigError(f"Invalid model configuration: {e}")
