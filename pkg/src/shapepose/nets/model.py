"""Joint shape + pose network: image U-Net, point VAE, feature transfer and heads."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from ..config import DECODER_WIDTHS, ModelConfig
from ..geometry import Pose, PointCloud, quat_to_matrix
from ..losses import (LossBreakdown, LossWeights, chamfer_distance, emd_distance,
                      kl_standard_normal, per_point_l2, total_loss)
from .fusion import EncoderFusion, MapPooler
from .pointvae import PointDecoder, PointEncoder, reparameterize
from .unet import ImageUNet, decoder_shapes


@dataclass
class Prediction:
    pc_pred: torch.Tensor            # (B, N, 3) canonical
    quat: torch.Tensor               # (B, 4) unit (w, x, y, z)
    translation: torch.Tensor        # (B, 3) meters
    mu: torch.Tensor | None = None
    logvar: torch.Tensor | None = None
    has_pose: bool = True

    def clouds(self, scale_m=None, category_id=-1):
        pts = self.pc_pred.detach().double().cpu().numpy()
        return [PointCloud(p, scale_m, category_id) for p in pts]

    def poses(self):
        q = self.quat.detach().double().cpu().numpy()
        t = self.translation.detach().double().cpu().numpy()
        return [Pose.from_quat(a, b) for a, b in zip(q, t)]


def mlp(widths, final_bias=None):
    layers = []
    for i, (a, b) in enumerate(zip(widths, widths[1:])):
        layers.append(nn.Linear(a, b))
        if i < len(widths) - 2:
            layers.append(nn.ReLU(inplace=True))
    net = nn.Sequential(*layers)
    if final_bias is not None:
        last = net[-1]
        nn.init.normal_(last.weight, std=1e-3)
        with torch.no_grad():
            last.bias.copy_(torch.as_tensor(final_bias, dtype=last.bias.dtype))
    return net


class PoseHeads(nn.Module):
    """Quaternion + translation regressors: two 5-FC nets, or one with 7 outputs."""

    def __init__(self, in_dim, hidden=(1024, 512, 256, 128), style="two_networks"):
        super().__init__()
        self.style = style
        widths = (in_dim,) + tuple(hidden)
        if style == "two_networks":
            self.rot = mlp(widths + (4,), final_bias=[1.0, 0.0, 0.0, 0.0])
            self.trans = mlp(widths + (3,), final_bias=[0.0, 0.0, 0.0])
        else:
            self.joint = mlp(widths + (7,), final_bias=[1.0, 0, 0, 0, 0, 0, 0])

    def forward(self, feat):
        if self.style == "two_networks":
            q, t = self.rot(feat), self.trans(feat)
        else:
            out = self.joint(feat)
            q, t = out[:, :4], out[:, 4:]
        q = q / q.norm(dim=-1, keepdim=True).clamp_min(1e-12)
        return q, t


class ShapePoseNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        H, W = cfg.image_height, cfg.image_width
        g = cfg.gn_groups
        self.unet = ImageUNet(cfg.base_channels, groups=g)
        level_shapes = decoder_shapes(H, W, cfg.base_channels)
        level_channels = [c for c, _, _ in level_shapes]

        if cfg.use_pc_encoder:
            img_ch = [0] * 5
            if cfg.enable_encoder_fusion:
                self.encoder_fusion = EncoderFusion(level_channels, cfg.roi_box_cells)
                img_ch = self.encoder_fusion.out_channels(level_channels)
            self.point_encoder = PointEncoder(cfg.code_size, cfg.sa_npoints, cfg.sa_radii,
                                              cfg.sa_kmax, cfg.sa_width, img_ch, g)

        image_dim = 0
        if cfg.enable_decoder_fusion:
            self.poolers = nn.ModuleList(MapPooler(c, h, w, cfg.pooled_dim)
                                         for c, h, w in level_shapes[:4])
            image_dim = cfg.pooled_dim
        self.point_decoder = PointDecoder(cfg.code_size, image_dim, g)
        self.shape_head = nn.Linear(DECODER_WIDTHS[-1], 3 * cfg.n_points_out)

        if cfg.pose_head_location == "decoder":
            pose_in = DECODER_WIDTHS[-1] + image_dim
        elif cfg.pose_head_location == "image_encoder":
            pose_in = self.unet.bottleneck_channels * (H // 32) * (W // 32)
        if cfg.has_pose:
            self.pose_heads = PoseHeads(pose_in, cfg.pose_mlp_widths, cfg.pose_head_style)

    # -- pieces --------------------------------------------------------------

    def image_vectors(self, pyramid):
        if not self.cfg.enable_decoder_fusion:
            return None
        return [pool(pyramid[i + 1]) for i, pool in enumerate(self.poolers)]

    def decode(self, z, vectors, enc_feats):
        stack = self.point_decoder(z, vectors)
        B = z.shape[0]
        pc = self.shape_head(stack[-1]).view(B, self.cfg.n_points_out, 3)
        if not self.cfg.has_pose:
            q = z.new_zeros(B, 4)
            q[:, 0] = 1.0
            return stack, pc, q, z.new_zeros(B, 3)
        if self.cfg.pose_head_location == "decoder":
            feat = stack[-1] if vectors is None else torch.cat([stack[-1], vectors[0]], -1)
        else:
            feat = enc_feats[-1].flatten(1)
        q, t = self.pose_heads(feat)
        return stack, pc, q, t

    # -- passes --------------------------------------------------------------

    def forward_train(self, image, points, scale, quat_gt, t_gt, intrinsics,
                      generator: torch.Generator | None = None,
                      weights: LossWeights = LossWeights()):
        """Supervised pass.

        Input:
            image: (B, 3, H, W) in [0, 1]
            points: (B, N, 3) canonical ground-truth cloud
            scale: (B,) meters per canonical unit
            quat_gt, t_gt: (B, 4), (B, 3) object-to-camera pose
            intrinsics: (B, 4) fx, fy, cx, cy
        Return:
            Prediction, LossBreakdown (batch means)
        """
        cfg = self.cfg
        enc_feats, pyramid = self.unet(image)
        B = image.shape[0]
        if cfg.use_pc_encoder:
            fusers = None
            if cfg.enable_encoder_fusion:
                if quat_gt is None or t_gt is None or intrinsics is None:
                    raise ValueError("encoder-side fusion needs the ground-truth pose and intrinsics")
                R_gt = quat_to_matrix(quat_gt).to(points.dtype)
                fusers = self.encoder_fusion.fusers(pyramid, R_gt, t_gt, scale, intrinsics)
            stack = self.point_encoder(points, fusers)
            mu, logvar = self.point_encoder.encode_to_gaussian(stack)
            z = reparameterize(mu, logvar, generator)
        else:
            mu = logvar = z = image.new_zeros(B, cfg.code_size)
        vectors = self.image_vectors(pyramid)
        _, pc, q, t = self.decode(z, vectors, enc_feats)

        if cfg.shape_loss_kind == "chamfer":
            shape = chamfer_distance(pc, points).mean()
        else:
            shape = emd_distance(pc, points).mean()
        kld = kl_standard_normal(mu, logvar).mean()
        if cfg.has_pose:
            metric = points * scale.view(-1, 1, 1)
            pose = per_point_l2(metric, (q, t), (quat_gt, t_gt)).mean()
        else:
            pose = shape.new_zeros(())
        losses = total_loss(shape, kld, pose, weights)
        return Prediction(pc, q, t, mu, logvar, cfg.has_pose), losses

    @torch.no_grad()
    def forward_infer(self, image):
        """Image-only pass with an all-zero latent code; no cloud, pose or intrinsics."""
        enc_feats, pyramid = self.unet(image)
        z = image.new_zeros(image.shape[0], self.cfg.code_size)
        _, pc, q, t = self.decode(z, self.image_vectors(pyramid), enc_feats)
        return Prediction(pc, q, t, has_pose=self.cfg.has_pose)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
