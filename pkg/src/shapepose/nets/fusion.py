"""2D -> 3D feature transfer.

Encoder side: posed point sets are projected into decoder maps and local
features are gathered with RoI align. Decoder side: whole maps are pooled
into vectors that need no pose at all.
"""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..geometry import project_points
from .unet import ImageFeaturePyramid


def roi_align_points(fmap, uv, stride, box_cells=3.0, bins=2, sampling=2):
    """Bilinear RoI align of a square box centred on each projected point.

    Pixel centres sit at integer image coordinates; feature cell j covers
    image pixels [j * stride, (j + 1) * stride). Samples outside the map
    take the nearest border value.

    Input:
        fmap: (B, C, h, w)
        uv: (B, m, 2) image pixel coordinates
        stride: (sy, sx) image pixels per feature cell
    Return:
        (B, m, bins * bins * C), bins row-major, channels fastest
    """
    B, C, h, w = fmap.shape
    m = uv.shape[1]
    sy, sx = stride
    # continuous feature coordinates with cell j spanning [j, j + 1]
    cx = (uv[..., 0] + 0.5) / sx
    cy = (uv[..., 1] + 0.5) / sy
    n = bins * sampling
    offs = (torch.arange(n, dtype=uv.dtype) + 0.5) / n * box_cells - box_cells / 2
    gx = cx.unsqueeze(-1).unsqueeze(-2) + offs.view(1, 1, 1, n)     # (B, m, 1, n)
    gy = cy.unsqueeze(-1).unsqueeze(-1) + offs.view(1, 1, n, 1)     # (B, m, n, 1)
    gx, gy = torch.broadcast_tensors(gx, gy)
    grid = torch.stack([2 * gx / w - 1, 2 * gy / h - 1], -1).reshape(B, m, n * n, 2)
    s = F.grid_sample(fmap, grid.to(fmap.dtype), mode="bilinear", padding_mode="border",
                      align_corners=False)                          # (B, C, m, n*n)
    s = s.view(B, C, m, bins, sampling, bins, sampling).mean((4, 6))  # (B, C, m, by, bx)
    return s.permute(0, 2, 3, 4, 1).reshape(B, m, bins * bins * C)


def roi_gather(pyramid: ImageFeaturePyramid, points, pose, intrinsics, level: int,
               box_cells=3.0, bins=2, sampling=2):
    """Project `points` with `pose` and RoI-align features from decoder level `level`.

    Input:
        points: (B, m, 3) object-space points in the units `pose` acts on
        pose: (rotation, translation) batched
        intrinsics: (B, 4) fx, fy, cx, cy
    Return:
        features (B, m, bins*bins*C) with zero rows where invalid, valid (B, m)
    """
    if not 1 <= level <= 4:
        raise ValueError(f"fusion reads decoder levels 1..4, got {level}")
    uv, valid = project_points(points, pose, intrinsics, image_size=pyramid.image_size)
    fmap = pyramid[level]
    feats = roi_align_points(fmap, uv.to(fmap.dtype), pyramid.stride_of(level), box_cells, bins,
                             sampling)
    return feats * valid.unsqueeze(-1).to(feats.dtype), valid


class RoIProjection(nn.Module):
    """Flattened bins x bins RoI features -> c channels; invalid rows stay zero."""

    def __init__(self, channels, bins=2):
        super().__init__()
        self.proj = nn.Linear(bins * bins * channels, channels)

    def forward(self, feats, valid):
        return self.proj(feats) * valid.unsqueeze(-1).to(feats.dtype)


class EncoderFusion(nn.Module):
    """Per-SA-layer image feature providers for SA layers 1..4 (level 5 - i)."""

    def __init__(self, level_channels, box_cells=3.0):
        super().__init__()
        # SA layer i (1-based) reads level 5 - i
        self.levels = [4, 3, 2, 1]
        self.proj = nn.ModuleList(RoIProjection(level_channels[l - 1]) for l in self.levels)
        self.box_cells = box_cells

    def out_channels(self, level_channels):
        return [level_channels[l - 1] for l in self.levels] + [0]

    def fusers(self, pyramid, rotation, translation, scale, intrinsics):
        """Callables centers -> (features, valid) for SA layers 1..4, None for layer 5.

        Centers are canonical; `scale` (B,) converts them to meters before posing.
        """
        def make(i):
            level = self.levels[i]

            def fuse(centers):
                pts = centers * scale.view(-1, 1, 1)
                feats, valid = roi_gather(pyramid, pts, (rotation, translation), intrinsics,
                                          level, self.box_cells)
                return self.proj[i](feats, valid), valid
            return fuse
        return [make(i) for i in range(4)] + [None]


def fuse_encoder_side(sa_stack, pyramid, pose_gt, intrinsics, scale, fusion: EncoderFusion):
    """Concatenate [F_P(M_i), RoI features] for SA layers 1..4.

    Input:
        sa_stack: list of SAOutput (point features used, fused slices ignored)
        pose_gt: (rotation, translation); required
    """
    if pose_gt is None:
        raise ValueError("encoder-side fusion needs the ground-truth pose")
    rot, trans = pose_gt
    fusers = fusion.fusers(pyramid, rot, trans, scale, intrinsics)
    out = []
    for i in range(4):
        img, _ = fusers[i](sa_stack[i].xyz)
        out.append(torch.cat([sa_stack[i].features, img], -1))
    return out


class MapPooler(nn.Module):
    """One strided 3x3 conv and one FC turn a whole feature map into a vector.

    The conv width is chosen so the flattened map has about `flat_size` entries
    at every level.
    """

    def __init__(self, channels, height, width, out_dim=256, flat_size=1024):
        super().__init__()
        cells = ((height + 1) // 2) * ((width + 1) // 2)
        mid = max(1, flat_size // cells)
        self.conv = nn.Conv2d(channels, mid, 3, stride=2, padding=1)
        self.fc = nn.Linear(mid * cells, out_dim)

    def forward(self, fmap):
        return self.fc(torch.relu(self.conv(fmap)).flatten(1))
