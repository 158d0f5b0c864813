"""Convert real scene frames (NOCS-style annotations) into masked square crops.

The crop keeps the projective geometry: cropping shifts the principal
point and resizing scales focal length and principal point, so the
original object-to-camera pose stays valid for the crop.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from ..geometry import CameraIntrinsics, PointCloud, Pose
from .io import ManifestEntry, Sample, write_manifest, write_sample


def square_box(mask: np.ndarray, margin: float = 0.1):
    """(x0, y0, side) of a square around the mask's bounding box, in pixels."""
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        raise ValueError("instance mask is empty")
    x0, x1, y0, y1 = xs.min(), xs.max() + 1, ys.min(), ys.max() + 1
    side = int(np.ceil(max(x1 - x0, y1 - y0) * (1 + 2 * margin)))
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    return int(np.floor(cx - side / 2)), int(np.floor(cy - side / 2)), side


def crop_intrinsics(k: CameraIntrinsics, x0: int, y0: int, side: int, size: int) -> CameraIntrinsics:
    # pixel centers at integers: full-image x maps to (x - x0 + 0.5) * s - 0.5
    s = size / side
    return CameraIntrinsics(k.fx * s, k.fy * s, (k.cx - x0 + 0.5) * s - 0.5,
                            (k.cy - y0 + 0.5) * s - 0.5, size, size)


def convert_nocs_crop(rgb: np.ndarray, mask: np.ndarray, model_points: np.ndarray, pose: Pose,
                      scale_m: float, intrinsics: CameraIntrinsics, category: str, instance: str,
                      size: int = 128, margin: float = 0.1) -> Sample:
    """Masked crop of one annotated object.

    Input:
        rgb: (H, W, 3) uint8 frame; mask: (H, W) bool instance mask
        model_points: (N, 3) canonical model points (unit bounding-box diagonal)
        pose: object-to-camera pose acting on model_points * scale_m
    """
    x0, y0, side = square_box(mask, margin)
    H, W = mask.shape
    canvas = np.zeros((side, side, 3), np.uint8)
    keep = np.zeros((side, side), bool)
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + side, W), min(y0 + side, H)
    canvas[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = rgb[sy0:sy1, sx0:sx1]
    keep[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = mask[sy0:sy1, sx0:sx1]
    image = np.asarray(Image.fromarray(canvas).resize((size, size), Image.BILINEAR))
    keep = np.asarray(Image.fromarray(keep.astype(np.uint8) * 255).resize((size, size), Image.NEAREST)) > 0
    image = np.where(keep[..., None], image, 0).astype(np.uint8)
    intr = crop_intrinsics(intrinsics, x0, y0, side, size)
    return Sample(image, PointCloud(model_points, scale_m), pose, intr, category, instance)


def ingest(records, out_dir, split: str = "train", size: int = 128):
    """Write converted crops plus a manifest.

    records: iterable of dicts with the keyword arguments of convert_nocs_crop.
    """
    root = Path(out_dir)
    entries = []
    for n, rec in enumerate(records):
        sample = convert_nocs_crop(size=size, **rec)
        rel = f"{sample.category}/{sample.instance}/{n:05d}"
        write_sample(root / rel, sample)
        entries.append(ManifestEntry(rel, split, sample.category, sample.instance))
    write_manifest(root, entries)
    return entries
