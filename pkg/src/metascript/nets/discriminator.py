"""Multi-scale discriminator with authenticity, type and writer heads per scale."""

from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from metascript.nets.blocks import DownBlock, channel_schedule
from metascript.nets.generator import pyramid_levels

SCALES = 3


class ScaleVerdict(NamedTuple):
    authenticity: torch.Tensor  # (B,) raw logit
    types: torch.Tensor  # (B, n) logits
    writers: torch.Tensor  # (B, m) logits


class DiscriminatorBlock(nn.Module):
    """Down-sampling stack, global average pooling and three linear heads."""

    def __init__(self, side: int, n_down: int, base_channels: int, n_types: int, n_writers: int):
        super().__init__()
        self.side = side
        widths = channel_schedule(base_channels, n_down)
        layers, in_ch = [], 1
        for w in widths:
            layers.append(DownBlock(in_ch, w))
            in_ch = w
        self.features = nn.Sequential(*layers)
        self.authenticity = nn.Linear(in_ch, 1)
        self.types = nn.Linear(in_ch, n_types)
        self.writers = nn.Linear(in_ch, n_writers)

    def forward(self, x: torch.Tensor) -> ScaleVerdict:
        if x.dim() != 4 or x.shape[1] != 1 or x.shape[-1] != self.side or x.shape[-2] != self.side:
            raise ValueError(f"discriminator block expects (B, 1, {self.side}, {self.side}), got {tuple(x.shape)}")
        h = self.features(x).mean(dim=(2, 3))
        return ScaleVerdict(self.authenticity(h).squeeze(1), self.types(h), self.writers(h))


class MultiScaleDiscriminator(nn.Module):
    """Three independent blocks judging the glyph at full, half and quarter side."""

    def __init__(self, n_types: int, n_writers: int, resolution: int = 128, base_channels: int = 64):
        super().__init__()
        self.resolution = resolution
        self.n_types = n_types
        self.n_writers = n_writers
        # 5 down blocks at 128 leave a 4x4 map at full scale
        n_down = pyramid_levels(resolution) - 2
        self.blocks = nn.ModuleList(
            DiscriminatorBlock(resolution >> s, n_down, base_channels, n_types, n_writers) for s in range(SCALES)
        )

    @staticmethod
    def scale_inputs(x: torch.Tensor) -> list[torch.Tensor]:
        inputs = [x]
        for _ in range(SCALES - 1):
            x = F.avg_pool2d(x, kernel_size=2)
            inputs.append(x)
        return inputs

    def forward(self, x: torch.Tensor) -> list[ScaleVerdict]:
        return [block(xs) for block, xs in zip(self.blocks, self.scale_inputs(x))]
