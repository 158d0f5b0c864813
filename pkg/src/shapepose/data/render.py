"""Z-buffered triangle rasterizer with flat Lambertian shading on a black background."""
from __future__ import annotations

import numpy as np

from ..geometry import Z_MIN, CameraIntrinsics, Pose

# direction towards the light in camera coordinates (above and left of the camera)
LIGHT_DIR = np.array([-0.3, -0.5, -1.0]) / np.linalg.norm([-0.3, -0.5, -1.0])
AMBIENT = 0.25


def render_mesh(vertices_m: np.ndarray, faces: np.ndarray, pose: Pose, intrinsics: CameraIntrinsics,
                color=(0.8, 0.8, 0.8)):
    """Rasterize a metric-space mesh posed into the camera.

    Pixel (r, c) is covered when its center (c, r) lies inside the projected
    triangle. Shading is two-sided: intensity = ambient + (1 - ambient) |n . l|.

    Return:
        rgb (H, W, 3) uint8, mask (H, W) bool, depth (H, W) float (inf off-object)
    """
    H, W = intrinsics.height, intrinsics.width
    cam = vertices_m @ pose.rotation.T + pose.translation
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intrinsics.fx * cam[:, 0] / z + intrinsics.cx
        v = intrinsics.fy * cam[:, 1] / z + intrinsics.cy
    depth = np.full((H, W), np.inf)
    shade = np.zeros((H, W))
    color = np.asarray(color, dtype=np.float64)

    a, b, c = (cam[faces[:, i]] for i in range(3))
    normals = np.cross(b - a, c - a)
    norm = np.linalg.norm(normals, axis=1)
    intensity = AMBIENT + (1 - AMBIENT) * np.abs(normals @ LIGHT_DIR) / np.where(norm > 0, norm, 1)

    for f, (i0, i1, i2) in enumerate(faces):
        if norm[f] == 0 or min(z[i0], z[i1], z[i2]) <= Z_MIN:
            continue
        xs, ys = u[[i0, i1, i2]], v[[i0, i1, i2]]
        c0, c1 = max(int(np.ceil(xs.min())), 0), min(int(np.floor(xs.max())), W - 1)
        r0, r1 = max(int(np.ceil(ys.min())), 0), min(int(np.floor(ys.max())), H - 1)
        if c0 > c1 or r0 > r1:
            continue
        area = (xs[1] - xs[0]) * (ys[2] - ys[0]) - (xs[2] - xs[0]) * (ys[1] - ys[0])
        if area == 0:
            continue
        px, py = np.meshgrid(np.arange(c0, c1 + 1), np.arange(r0, r1 + 1))
        # barycentric weights from edge functions
        w0 = ((xs[1] - px) * (ys[2] - py) - (xs[2] - px) * (ys[1] - py)) / area
        w1 = ((xs[2] - px) * (ys[0] - py) - (xs[0] - px) * (ys[2] - py)) / area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue
        # perspective-correct depth: 1/z is affine in screen space
        zi = 1.0 / (w0 / z[i0] + w1 / z[i1] + w2 / z[i2])
        win = depth[r0:r1 + 1, c0:c1 + 1]
        closer = inside & (zi < win)
        win[closer] = zi[closer]
        shade[r0:r1 + 1, c0:c1 + 1][closer] = intensity[f]

    mask = np.isfinite(depth)
    rgb = np.clip(np.rint(shade[..., None] * color * 255), 0, 255).astype(np.uint8)
    rgb[~mask] = 0
    return rgb, mask, depth
