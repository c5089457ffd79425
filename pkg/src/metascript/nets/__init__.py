from dataclasses import dataclass

from metascript.nets.discriminator import MultiScaleDiscriminator, ScaleVerdict
from metascript.nets.generator import (
    DenormBlock,
    DenormDecoder,
    DenormLayer,
    Generator,
    StructureEncoder,
    StyleEncoder,
)


@dataclass(frozen=True)
class ModelConfig:
    """Network sizes. ``paper`` is the full 128px model, ``desk`` a CPU-sized one."""

    resolution: int = 128
    base_channels: int = 64
    style_dim: int = 512
    references: int = 4

    @classmethod
    def paper(cls, references: int = 4) -> "ModelConfig":
        return cls(128, 64, 512, references)

    @classmethod
    def desk(cls, references: int = 2) -> "ModelConfig":
        return cls(32, 16, 128, references)

    def build_generator(self) -> Generator:
        return Generator(self.resolution, self.base_channels, self.style_dim, self.references)

    def build_discriminator(self, n_types: int, n_writers: int) -> MultiScaleDiscriminator:
        return MultiScaleDiscriminator(n_types, n_writers, self.resolution, self.base_channels)


__all__ = [
    "DenormBlock",
    "DenormDecoder",
    "DenormLayer",
    "Generator",
    "ModelConfig",
    "MultiScaleDiscriminator",
    "ScaleVerdict",
    "StructureEncoder",
    "StyleEncoder",
]
