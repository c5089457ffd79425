"""Convolutional building blocks shared by the generator and discriminator."""

import torch
import torch.nn as nn
import torch.nn.functional as F


def channel_schedule(base: int, count: int, cap: int = 8) -> list[int]:
    """Doubling channel widths ``base, 2*base, ...`` capped at ``cap * base``."""
    return [base * min(2 ** k, cap) for k in range(count)]


class DownBlock(nn.Module):
    """4x4 stride-2 convolution, instance normalization, leaky activation.

    Instance statistics are undefined on a 1x1 map, so normalization is
    skipped whenever the block output collapses to a single pixel.
    """

    def __init__(self, in_channels: int, out_channels: int, slope: float = 0.2):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, kernel_size=4, stride=2, padding=1)
        self.norm = nn.InstanceNorm2d(out_channels, affine=True)
        self.act = nn.LeakyReLU(slope)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.conv(x)
        if x.shape[-1] > 1 or x.shape[-2] > 1:
            x = self.norm(x)
        return self.act(x)


class UpBlock(nn.Module):
    """Nearest-neighbour x2 upsampling, 3x3 convolution, normalization, activation."""

    def __init__(self, in_channels: int, out_channels: int, slope: float = 0.2):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, kernel_size=3, padding=1)
        self.norm = nn.InstanceNorm2d(out_channels, affine=True)
        self.act = nn.LeakyReLU(slope)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        return self.act(self.norm(self.conv(x)))


class BasicBlock(nn.Module):
    """Two 3x3 convolutions with an identity (or projected) shortcut, as in ResNet-18."""

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_channels)
        self.shortcut = nn.Identity()
        if stride != 1 or in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride, bias=False),
                nn.BatchNorm2d(out_channels),
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))
