"""RGB U-Net: five stride-2 encoder stages and five deconvolution decoder stages."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn


def group_norm(channels: int, groups: int = 8) -> nn.GroupNorm:
    return nn.GroupNorm(math.gcd(groups, channels), channels)


def conv_gn_relu(c_in, c_out, stride=1, groups=8):
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1),
        group_norm(c_out, groups),
        nn.ReLU(inplace=True),
    )


@dataclass
class ImageFeaturePyramid:
    """Decoder maps F_1..F_5, coarse to fine; level 5 is full resolution."""

    levels: list
    image_size: tuple

    def __post_init__(self):
        if len(self.levels) != 5:
            raise ValueError(f"a pyramid has five levels, got {len(self.levels)}")
        for a, b in zip(self.levels, self.levels[1:]):
            if (b.shape[-2], b.shape[-1]) != (2 * a.shape[-2], 2 * a.shape[-1]):
                raise ValueError("pyramid levels must double in size")

    def __getitem__(self, level: int) -> torch.Tensor:
        """1-based level access, matching F_i."""
        if not 1 <= level <= 5:
            raise IndexError(f"pyramid level {level} outside 1..5")
        return self.levels[level - 1]

    def stride_of(self, level: int) -> tuple:
        """(pixels per cell vertically, horizontally)."""
        f = self[level]
        return self.image_size[0] / f.shape[-2], self.image_size[1] / f.shape[-1]


class EncoderStage(nn.Module):
    def __init__(self, c_in, c_out, groups=8):
        super().__init__()
        self.down = conv_gn_relu(c_in, c_out, stride=2, groups=groups)
        self.conv = conv_gn_relu(c_out, c_out, groups=groups)

    def forward(self, x):
        return self.conv(self.down(x))


class DecoderStage(nn.Module):
    """2x2 deconvolution (halves channels), skip concat, two 3x3 convs."""

    def __init__(self, c_in, c_skip, groups=8):
        super().__init__()
        c_out = c_in // 2
        self.c_skip = c_skip
        self.up = nn.ConvTranspose2d(c_in, c_out, 2, stride=2)
        self.conv1 = conv_gn_relu(c_out + c_skip, c_out, groups=groups)
        self.conv2 = conv_gn_relu(c_out, c_out, groups=groups)

    def forward(self, x, skip):
        x = self.up(x)
        if skip.shape[-2:] != x.shape[-2:]:
            raise ValueError(f"skip map {tuple(skip.shape)} does not match upsampled {tuple(x.shape)}")
        return self.conv2(self.conv1(torch.cat([x, skip], 1)))


def encoder_shapes(height: int, width: int, base: int):
    """[(channels, h, w)] for the five encoder stages."""
    return [(base * 2 ** k, height >> (k + 1), width >> (k + 1)) for k in range(5)]


def decoder_shapes(height: int, width: int, base: int):
    """[(channels, h, w)] for decoder levels 1..5 (coarse to full resolution)."""
    return [(base * 16 >> (i + 1), height >> (4 - i), width >> (4 - i)) for i in range(5)]


class ImageUNet(nn.Module):
    """Five-scale U-Net with group norm.

    The full-resolution decoder level takes the input image itself as its
    skip input, the only map at that resolution.
    """

    def __init__(self, base_channels=64, in_channels=3, groups=8):
        super().__init__()
        self.base = base_channels
        widths = [base_channels * 2 ** k for k in range(5)]
        ins = [in_channels] + widths[:-1]
        self.encoder = nn.ModuleList(EncoderStage(i, o, groups) for i, o in zip(ins, widths))
        skips = widths[3::-1] + [in_channels]
        c = widths[-1]
        stages = []
        for s in skips:
            stages.append(DecoderStage(c, s, groups))
            c //= 2
        self.decoder = nn.ModuleList(stages)
        # per-level switch for the skip-connection ablation hook
        self.skip_enabled = [True] * 5

    @property
    def level_channels(self):
        return [self.base * 16 >> (i + 1) for i in range(5)]

    @property
    def bottleneck_channels(self):
        return self.base * 16

    def encode(self, image: torch.Tensor):
        """(B, 3, H, W) -> five encoder maps, stage k at (H/2^k, W/2^k)."""
        H, W = image.shape[-2:]
        if H % 32 or W % 32:
            raise ValueError(f"image size {H}x{W} is not divisible by 32")
        feats, x = [], image
        for stage in self.encoder:
            x = stage(x)
            feats.append(x)
        return feats

    def decode(self, encoder_feats, image: torch.Tensor) -> ImageFeaturePyramid:
        """Encoder maps (+ input image) -> decoder levels F_1..F_5."""
        if len(encoder_feats) != 5:
            raise ValueError("decode needs exactly five encoder maps")
        skips = list(encoder_feats[3::-1]) + [image]
        x, levels = encoder_feats[-1], []
        for stage, skip, on in zip(self.decoder, skips, self.skip_enabled):
            if not on:
                skip = torch.zeros_like(skip)
            x = stage(x, skip)
            levels.append(x)
        return ImageFeaturePyramid(levels, tuple(image.shape[-2:]))

    def forward(self, image):
        feats = self.encode(image)
        return feats, self.decode(feats, image)
