"""Point-cloud VAE: PointNet++ set-abstraction encoder and fully connected decoder."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import torch
import torch.nn as nn

from ..config import DECODER_WIDTHS
from ..geometry import ball_query, farthest_point_sample, gather_points
from .unet import group_norm


@dataclass
class SAOutput:
    """One set-abstraction scale: sampled centers M_i and their features F_P(M_i)."""

    xyz: torch.Tensor        # (B, m, 3)
    features: torch.Tensor   # (B, m, c), point features only
    fused: torch.Tensor      # (B, m, c [+ c_img]) features passed to the next layer
    image_valid: torch.Tensor | None = None


class SALayer(nn.Module):
    """FPS -> ball query -> shared MLP on (relative xyz, features) -> max-pool."""

    def __init__(self, c_in, width, npoint, radius, k_max, groups=8):
        super().__init__()
        self.npoint, self.radius, self.k_max = npoint, radius, k_max
        self.mlp = nn.Sequential(
            nn.Conv2d(c_in + 3, width // 2, 1), group_norm(width // 2, groups), nn.ReLU(inplace=True),
            nn.Conv2d(width // 2, width, 1), group_norm(width, groups), nn.ReLU(inplace=True),
        )
        self.width = width

    def group(self, xyz, feats, start_index=0, generator=None):
        centers_idx = farthest_point_sample(xyz, self.npoint, start_index, generator)
        centers = gather_points(xyz, centers_idx)
        idx = ball_query(centers, xyz, self.radius, self.k_max)
        rel = (gather_points(xyz, idx) - centers.unsqueeze(2)) / self.radius
        grouped = rel if feats is None else torch.cat([rel, gather_points(feats, idx)], -1)
        return centers, grouped

    def forward(self, xyz, feats=None, fuse: torch.Tensor | Callable | None = None,
                start_index=0, generator=None) -> SAOutput:
        """
        Input:
            xyz: (B, N, 3) layer input coordinates
            feats: (B, N, C) or None
            fuse: (B, m, c_img) image features for the sampled centers, or a
                callable centers -> (features, valid)
        """
        if self.npoint > xyz.shape[1]:
            raise ValueError(f"SA layer samples {self.npoint} of only {xyz.shape[1]} points")
        centers, grouped = self.group(xyz, feats, start_index, generator)
        h = self.mlp(grouped.permute(0, 3, 1, 2))        # (B, c, m, k)
        out = h.max(-1).values.transpose(1, 2)            # (B, m, c)
        valid = None
        if fuse is None:
            return SAOutput(centers, out, out)
        if callable(fuse):
            fuse, valid = fuse(centers)
        return SAOutput(centers, out, torch.cat([out, fuse], -1), valid)


class PointEncoder(nn.Module):
    """Five SA layers followed by global max-pool and two FC heads (mu, logvar)."""

    def __init__(self, code_size, npoints, radii, kmax, width=64, image_channels=None, groups=8):
        super().__init__()
        image_channels = list(image_channels or [0] * 5)
        layers, c_in = [], 0
        for i in range(5):
            w = width * 2 ** i
            layers.append(SALayer(c_in, w, npoints[i], radii[i], kmax[i], groups))
            c_in = w + image_channels[i]
        self.sa = nn.ModuleList(layers)
        self.image_channels = image_channels
        self.fc_mu = nn.Linear(width * 16, code_size)
        self.fc_logvar = nn.Linear(width * 16, code_size)

    def forward(self, xyz, fusers=None, start_index=0, generator=None):
        """Return the SA stack; `fusers[i]` (or None) supplies image features for layer i."""
        stack, feats = [], None
        for i, layer in enumerate(self.sa):
            fuse = fusers[i] if fusers is not None else None
            out = layer(xyz, feats, fuse, start_index, generator)
            stack.append(out)
            xyz, feats = out.xyz, out.fused
        return stack

    def encode_to_gaussian(self, stack):
        g = stack[-1].fused.max(1).values
        return self.fc_mu(g), self.fc_logvar(g)


def reparameterize(mu, logvar, generator: torch.Generator | None = None):
    eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype, device=mu.device)
    return mu + torch.exp(0.5 * logvar) * eps


class PointDecoder(nn.Module):
    """Five FC + group norm + ReLU layers of widths 256..4096.

    Layer j (j = 2..5) consumes the previous layer's output concatenated with
    the pooled vector of image level 6 - j, so F_i meets F_D_{5-i}.
    """

    def __init__(self, code_size, image_dim=0, groups=8, widths=DECODER_WIDTHS):
        super().__init__()
        self.widths = tuple(widths)
        self.image_dim = image_dim
        ins = [code_size] + [w + image_dim for w in self.widths[:-1]]
        self.fcs = nn.ModuleList(nn.Linear(i, o) for i, o in zip(ins, self.widths))
        self.norms = nn.ModuleList(group_norm(o, groups) for o in self.widths)

    def forward(self, z, image_vectors=None):
        """
        Input:
            z: (B, D)
            image_vectors: [v_1, v_2, v_3, v_4] pooled image vectors (B, image_dim)
        Return:
            list of five (B, width_j) layer outputs F_D_1..F_D_5
        """
        if self.image_dim and image_vectors is None:
            image_vectors = [z.new_zeros(z.shape[0], self.image_dim)] * 4
        stack, x = [], z
        for j, (fc, norm) in enumerate(zip(self.fcs, self.norms), start=1):
            if j > 1 and self.image_dim:
                x = torch.cat([x, image_vectors[5 - j]], -1)
            x = torch.relu(norm(fc(x)))
            stack.append(x)
        return stack
