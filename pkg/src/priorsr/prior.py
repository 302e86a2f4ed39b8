"""Compact latent encoders: a shared residual trunk behind two input stems.

The target-aware encoder sees the space-to-depth reduced HR image next to the
LR image; the condition encoder sees the LR image alone. Both emit a vector of
length 4x the trunk width.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, ShapeMismatchError


def pixel_unshuffle(x: torch.Tensor, s: int) -> torch.Tensor:
    """Space-to-depth: (B, C, H, W) -> (B, C*s*s, H/s, W/s), row-major patches."""
    if x.shape[-2] % s or x.shape[-1] % s:
        raise ConfigurationError(
            f"spatial dims {tuple(x.shape[-2:])} not divisible by factor {s}")
    return F.pixel_unshuffle(x, s)


def pixel_shuffle(x: torch.Tensor, s: int) -> torch.Tensor:
    """Inverse of pixel_unshuffle."""
    return F.pixel_shuffle(x, s)


class ResidualBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.act = nn.LeakyReLU(0.2, inplace=True)

    def forward(self, x):
        return x + self.conv2(self.act(self.conv1(x)))


class LatentEncoder(nn.Module):
    """Conv stem, 9 residual blocks with two stride-2 reductions, pooled MLP head."""

    def __init__(self, in_channels, latent_channels):
        super().__init__()
        c = latent_channels
        self.stem = nn.Conv2d(in_channels, c, 3, padding=1)
        self.blocks = nn.ModuleList([ResidualBlock(c) for _ in range(9)])
        # stride-2 reductions after blocks 3 and 6 give the pool a 4x-smaller grid
        self.down1 = nn.Conv2d(c, c, 3, stride=2, padding=1)
        self.down2 = nn.Conv2d(c, c, 3, stride=2, padding=1)
        self.fc1 = nn.Linear(c, 4 * c)
        self.fc2 = nn.Linear(4 * c, 4 * c)
        self.act = nn.LeakyReLU(0.2, inplace=True)

    def forward(self, x):
        x = self.stem(x)
        for i, block in enumerate(self.blocks):
            x = block(x)
            if i == 2:
                x = self.down1(x)
            elif i == 5:
                x = self.down2(x)
        x = x.mean(dim=(-2, -1))
        return self.fc2(self.act(self.fc1(x)))


class PriorExtractor(nn.Module):
    """Compresses an HR/LR pair into the latent vector used as decoder guidance."""

    def __init__(self, latent_channels, scale):
        super().__init__()
        self.scale = scale
        self.encoder = LatentEncoder(2 * scale * scale + 2, latent_channels)

    def forward(self, hr, lr):
        if hr.shape[-2] != lr.shape[-2] * self.scale or hr.shape[-1] != lr.shape[-1] * self.scale:
            raise ShapeMismatchError(
                f"HR {tuple(hr.shape[-2:])} is not {self.scale}x LR {tuple(lr.shape[-2:])}")
        x = torch.cat([pixel_unshuffle(hr, self.scale), lr], dim=1)
        return self.encoder(x)


class ConditionExtractor(nn.Module):
    """Same trunk as PriorExtractor but conditioned on the LR image alone."""

    def __init__(self, latent_channels):
        super().__init__()
        self.encoder = LatentEncoder(2, latent_channels)

    def forward(self, lr):
        return self.encoder(lr)
