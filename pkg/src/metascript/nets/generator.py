"""Character generator: structure U-Net, residual style encoder, denormalization decoder."""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from metascript.nets.blocks import BasicBlock, DownBlock, UpBlock, channel_schedule

NORM_EPS = 1e-5


def pyramid_levels(resolution: int) -> int:
    levels = int(round(math.log2(resolution)))
    if 2 ** levels != resolution or levels < 3:
        raise ValueError(f"resolution must be a power of two >= 8, got {resolution}")
    return levels


def pyramid_channels(resolution: int, base: int) -> list[int]:
    """Channels of the structure maps, coarsest level first."""
    levels = pyramid_levels(resolution)
    fine_to_coarse = [base] + channel_schedule(base, levels - 1)
    return fine_to_coarse[::-1]


def _check_image(x: torch.Tensor, channels: int, resolution: int, what: str) -> None:
    if x.dim() != 4 or x.shape[1] != channels or x.shape[2] != resolution or x.shape[3] != resolution:
        raise ValueError(
            f"{what}: expected (B, {channels}, {resolution}, {resolution}), got {tuple(x.shape)}"
        )


class StructureEncoder(nn.Module):
    """U-Net over the template glyph returning one map per pyramid level.

    The bottleneck is the coarsest map (side 2); every up-sampling block output
    is the next finer map, ending at full resolution.
    """

    def __init__(self, resolution: int = 128, base_channels: int = 64):
        super().__init__()
        self.resolution = resolution
        levels = pyramid_levels(resolution)
        n = levels - 1
        self.down_channels = channel_schedule(base_channels, n)
        self.channels = pyramid_channels(resolution, base_channels)

        downs, in_ch = [], 1
        for ch in self.down_channels:
            downs.append(DownBlock(in_ch, ch))
            in_ch = ch
        self.downs = nn.ModuleList(downs)

        ups = []
        for k in range(1, n + 1):
            in_ch = self.channels[k - 1]
            if k >= 2:
                in_ch += self.down_channels[n - k]
            ups.append(UpBlock(in_ch, self.channels[k]))
        self.ups = nn.ModuleList(ups)

    def forward(self, template: torch.Tensor) -> list[torch.Tensor]:
        _check_image(template, 1, self.resolution, "structure encoder")
        skips, h = [], template
        for down in self.downs:
            h = down(h)
            skips.append(h)
        n = len(self.downs)
        maps = [h]
        for k, up in enumerate(self.ups, start=1):
            if k >= 2:
                h = torch.cat([h, skips[n - k]], dim=1)
            h = up(h)
            maps.append(h)
        return maps


class StyleEncoder(nn.Module):
    """ResNet-18 taking the ``c`` references as input channels, plus a final linear map.

    Channel order matters: permuting the references generally changes the output.
    """

    def __init__(self, references: int = 4, base_channels: int = 64, style_dim: int = 512, resolution: int = 128):
        super().__init__()
        self.references = references
        self.resolution = resolution
        self.stem = nn.Sequential(
            nn.Conv2d(references, base_channels, 7, 2, 3, bias=False),
            nn.BatchNorm2d(base_channels),
            nn.ReLU(),
        )
        # small canvases keep the stem max-pool out so the last stage stays above 1x1
        self.pool = nn.MaxPool2d(3, 2, 1) if resolution >= 64 else nn.Identity()
        widths = channel_schedule(base_channels, 4)
        layers, in_ch = [], base_channels
        for i, w in enumerate(widths):
            stride = 1 if i == 0 else 2
            layers += [BasicBlock(in_ch, w, stride), BasicBlock(w, w)]
            in_ch = w
        self.layers = nn.Sequential(*layers)
        self.fc = nn.Linear(in_ch, style_dim)

    def forward(self, references: torch.Tensor) -> torch.Tensor:
        _check_image(references, self.references, self.resolution, "style encoder")
        h = self.layers(self.pool(self.stem(references)))
        return self.fc(h.mean(dim=(2, 3)))


class DenormLayer(nn.Module):
    """Normalize a feature map, re-warp it twice and blend the warps with a learned mask.

    The structure warp takes its scale and shift from a 1x1 convolution on the
    structure map; the style warp from a linear map on the style vector. A
    sigmoid over a 1x1 convolution of the normalized input gives the blend
    weight of the style warp.
    """

    def __init__(self, channels: int, alpha_channels: int, style_dim: int, eps: float = NORM_EPS):
        super().__init__()
        self.eps = eps
        self.alpha_conv = nn.Conv2d(alpha_channels, 2 * channels, kernel_size=1)
        self.style_fc = nn.Linear(style_dim, 2 * channels)
        self.mask_conv = nn.Conv2d(channels, 1, kernel_size=1)

    def forward(self, gamma, alpha, beta, return_parts: bool = False):
        if gamma.shape[-2:] != alpha.shape[-2:]:
            raise ValueError(
                f"denorm layer: feature side {tuple(gamma.shape[-2:])} != structure side {tuple(alpha.shape[-2:])}"
            )
        mu = gamma.mean(dim=(2, 3), keepdim=True)
        var = gamma.var(dim=(2, 3), unbiased=False, keepdim=True)
        normed = (gamma - mu) / (var.clamp_min(1e-12).sqrt() + self.eps)

        sigma_a, mu_a = self.alpha_conv(alpha).chunk(2, dim=1)
        alpha_hat = sigma_a * normed + mu_a
        sigma_b, mu_b = self.style_fc(beta)[:, :, None, None].chunk(2, dim=1)
        beta_hat = sigma_b * normed + mu_b
        eta = torch.sigmoid(self.mask_conv(normed))
        out = (1 - eta) * alpha_hat + eta * beta_hat
        if return_parts:
            return out, {"normalized": normed, "alpha_hat": alpha_hat, "beta_hat": beta_hat, "eta": eta}
        return out


class DenormBlock(nn.Module):
    """Two (denorm, ReLU, 3x3 conv) layers with a residual shortcut."""

    def __init__(self, in_channels: int, out_channels: int, alpha_channels: int, style_dim: int):
        super().__init__()
        self.norm1 = DenormLayer(in_channels, alpha_channels, style_dim)
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.norm2 = DenormLayer(out_channels, alpha_channels, style_dim)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.shortcut = nn.Identity()
        if in_channels != out_channels:
            self.shortcut = nn.Conv2d(in_channels, out_channels, 1, bias=False)

    def forward(self, gamma, alpha, beta):
        h = self.conv1(F.relu(self.norm1(gamma, alpha, beta)))
        h = self.conv2(F.relu(self.norm2(h, alpha, beta)))
        return h + self.shortcut(gamma)


class DenormDecoder(nn.Module):
    def __init__(self, resolution: int = 128, base_channels: int = 64, style_dim: int = 512):
        super().__init__()
        self.channels = pyramid_channels(resolution, base_channels)
        seed_ch = self.channels[0]
        self.seed_channels = seed_ch
        self.seed = nn.Linear(style_dim, seed_ch * 4)
        blocks, in_ch = [], seed_ch
        for ch in self.channels:
            blocks.append(DenormBlock(in_ch, ch, ch, style_dim))
            in_ch = ch
        self.blocks = nn.ModuleList(blocks)
        self.project = nn.Conv2d(in_ch, 1, kernel_size=1)

    def forward(self, pyramid: list[torch.Tensor], style: torch.Tensor) -> torch.Tensor:
        if len(pyramid) != len(self.blocks):
            raise ValueError(f"decoder expects {len(self.blocks)} structure maps, got {len(pyramid)}")
        gamma = self.seed(style).view(-1, self.seed_channels, 2, 2)
        for i, (block, alpha) in enumerate(zip(self.blocks, pyramid)):
            if i > 0:
                gamma = F.interpolate(gamma, scale_factor=2, mode="nearest")
            gamma = block(gamma, alpha, style)
        return torch.sigmoid(self.project(gamma))


class Generator(nn.Module):
    """Maps ``c`` style references and a prototype template to a glyph in [0, 1]."""

    def __init__(self, resolution: int = 128, base_channels: int = 64, style_dim: int = 512, references: int = 4):
        super().__init__()
        self.resolution = resolution
        self.references = references
        self.structure = StructureEncoder(resolution, base_channels)
        self.style = StyleEncoder(references, base_channels, style_dim, resolution)
        self.decoder = DenormDecoder(resolution, base_channels, style_dim)

    def encode_structure(self, template: torch.Tensor) -> list[torch.Tensor]:
        return self.structure(template)

    def encode_style(self, references: torch.Tensor) -> torch.Tensor:
        return self.style(references)

    def encode_style_single(self, glyph: torch.Tensor) -> torch.Tensor:
        """Style of one glyph per sample, tiled across the reference channels."""
        return self.style(glyph.expand(-1, self.references, -1, -1))

    def decode(self, pyramid: list[torch.Tensor], style: torch.Tensor) -> torch.Tensor:
        return self.decoder(pyramid, style)

    def forward(self, references: torch.Tensor, template: torch.Tensor, return_features: bool = False):
        pyramid = self.encode_structure(template)
        style = self.encode_style(references)
        fake = self.decode(pyramid, style)
        if return_features:
            return fake, pyramid, style
        return fake
