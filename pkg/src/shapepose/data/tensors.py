"""A whole split decoded into stacked arrays for mini-batching."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..config import DataError
from ..geometry import PointCloud, Pose
from .io import DatasetManifest, load_sample


@dataclass
class SplitData:
    images: np.ndarray        # (B, H, W, 3) uint8
    points: np.ndarray        # (B, N, 3) canonical, float64
    scale: np.ndarray         # (B,)
    quat: np.ndarray          # (B, 4)
    trans: np.ndarray         # (B, 3)
    intrinsics: np.ndarray    # (B, 4) fx, fy, cx, cy
    categories: list
    instances: list

    def __len__(self):
        return len(self.images)

    @property
    def image_size(self):
        return self.images.shape[1:3]

    @property
    def n_points(self):
        return self.points.shape[1]

    def image_batch(self, idx, images=None) -> torch.Tensor:
        imgs = self.images if images is None else images
        return torch.from_numpy(np.ascontiguousarray(imgs[idx])).permute(0, 3, 1, 2).float() / 255.0

    def train_batch(self, idx):
        f = lambda a: torch.from_numpy(np.ascontiguousarray(a[idx], dtype=np.float32))
        return (self.image_batch(idx), f(self.points), f(self.scale), f(self.quat), f(self.trans),
                f(self.intrinsics))

    def pose(self, i) -> Pose:
        return Pose(self.quat[i], self.trans[i])

    def cloud(self, i) -> PointCloud:
        return PointCloud(self.points[i], float(self.scale[i]))


def load_split(manifest: DatasetManifest, split: str) -> SplitData:
    idx = manifest.split(split)
    if not idx:
        raise DataError(f"split {split!r} of {manifest.root} is empty")
    samples = [load_sample(manifest, i) for i in idx]
    shapes = {(s.image.shape, s.pc_canonical.points.shape) for s in samples}
    if len(shapes) != 1:
        raise DataError(f"split {split!r} mixes image or cloud sizes: {sorted(shapes)}")
    return SplitData(
        images=np.stack([s.image for s in samples]),
        points=np.stack([s.pc_canonical.points for s in samples]),
        scale=np.array([s.pc_canonical.scale_m for s in samples]),
        quat=np.stack([s.pose.quat for s in samples]),
        trans=np.stack([s.pose.translation for s in samples]),
        intrinsics=np.stack([s.intrinsics.as_vector() for s in samples]),
        categories=[s.category for s in samples],
        instances=[s.instance for s in samples],
    )
