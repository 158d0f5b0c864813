"""Rigid transforms, pinhole projection and point-set sampling.

Quaternions are (w, x, y, z), Hamilton convention, right-handed frames.
Differentiable kernels work on torch tensors (numpy input is converted) and
accept leading batch dimensions. Index-producing kernels (FPS, ball query)
are not differentiable.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

Z_MIN = 1e-6


def _as_tensor(x, dtype=None) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x if dtype is None else x.to(dtype)
    x = np.asarray(x)
    if dtype is None and x.dtype.kind in "iub":
        dtype = torch.float64
    return torch.as_tensor(x, dtype=dtype)


# -- domain types ---------------------------------------------------------

@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def as_vector(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.cx, self.cy])


@dataclass(frozen=True)
class Pose:
    """Object-to-camera rigid transform: x_cam = R x + T, T in meters."""

    quat: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.quat, dtype=np.float64).reshape(4)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
            raise ValueError("pose contains non-finite values")
        if abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise ValueError(f"rotation quaternion is not unit norm (|q| = {np.linalg.norm(q):.6g})")
        object.__setattr__(self, "quat", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_quat(cls, quat, translation) -> "Pose":
        q = np.asarray(quat, dtype=np.float64)
        n = np.linalg.norm(q)
        if n == 0:
            raise ValueError("zero-norm quaternion")
        return cls(q / n, translation)

    @classmethod
    def from_matrix(cls, rotation, translation) -> "Pose":
        return cls(matrix_to_quat(rotation), translation)

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.quat).numpy()

    def inverse(self) -> "Pose":
        q = self.quat * np.array([1.0, -1.0, -1.0, -1.0])
        return Pose(q, -(self.rotation.T @ self.translation))


@dataclass
class PointCloud:
    """N x 3 canonical coordinates; scale_m converts canonical units to meters."""

    points: np.ndarray
    scale_m: float | None = 1.0
    category_id: int = -1

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 1:
            raise ValueError(f"point cloud must be N x 3 with N >= 1, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        if self.scale_m is not None and not self.scale_m > 0:
            raise ValueError(f"scale_m must be positive, got {self.scale_m}")
        self.points = pts

    def __len__(self):
        return len(self.points)

    def metric(self) -> np.ndarray:
        if self.scale_m is None:
            raise ValueError("point cloud carries no metric scale")
        return self.points * self.scale_m

    def check_canonical(self, tol: float = 1e-6):
        d = diameter(self.points) if len(self.points) > 1 else 0.0
        if d > 1.0 + tol:
            raise ValueError(f"canonical cloud diameter {d:.6g} exceeds the unit diagonal")


# -- rotations ------------------------------------------------------------

def quat_to_matrix(q) -> torch.Tensor:
    """(..., 4) quaternion (w, x, y, z) -> (..., 3, 3) rotation; normalizes q."""
    q = _as_tensor(q)
    norm = torch.linalg.vector_norm(q, dim=-1, keepdim=True)
    if bool((norm == 0).any()):
        raise ValueError("zero-norm quaternion has no rotation")
    w, x, y, z = (q / norm).unbind(-1)
    rows = (
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    )
    return torch.stack(rows, -1).reshape(q.shape[:-1] + (3, 3))


def matrix_to_quat(R) -> np.ndarray:
    """Rotation matrix -> unit quaternion (w >= 0), Shepperd's method."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    i = int(np.argmax([tr, R[0, 0], R[1, 1], R[2, 2]]))
    if i == 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif i == 1:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif i == 2:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def axis_angle_to_matrix(axis, angle) -> np.ndarray:
    """Rodrigues' formula."""
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


def random_quaternion(rng: np.random.Generator) -> np.ndarray:
    """Uniform on SO(3): normalized 4D Gaussian."""
    q = rng.standard_normal(4)
    return q / np.linalg.norm(q)


def _rotation_translation(pose):
    """Pose | (rotation, translation) -> (R (...,3,3), T (...,3)) tensors.

    rotation may be a (..., 4) quaternion or a (..., 3, 3) matrix.
    """
    if isinstance(pose, Pose):
        return _as_tensor(pose.rotation), _as_tensor(pose.translation)
    rot, t = pose
    rot = _as_tensor(rot)
    if rot.shape[-1] == 4:
        rot = quat_to_matrix(rot)
    return rot, _as_tensor(t, rot.dtype)


# -- transforms and projection --------------------------------------------

def transform_points(points, pose) -> torch.Tensor:
    """Apply x -> R x + T to every row.

    Input:
        points: (..., N, 3) array or PointCloud (canonical coordinates used as-is)
        pose: Pose or (rotation, translation) with batch dims matching points
    Return:
        (..., N, 3) tensor
    """
    if isinstance(points, PointCloud):
        points = points.points
    pts = _as_tensor(points)
    R, T = _rotation_translation(pose)
    R, T = R.to(pts.dtype), T.to(pts.dtype)
    return pts @ R.transpose(-1, -2) + T.unsqueeze(-2)


def project_points(points, pose, intrinsics, image_size=None, z_min: float = Z_MIN):
    """Pinhole projection of object-space points posed into the camera.

    Pixel centers sit at integer coordinates, so the image spans
    [-0.5, W - 0.5) x [-0.5, H - 0.5).

    Input:
        points: (..., N, 3)
        pose: Pose or (rotation, translation)
        intrinsics: CameraIntrinsics, or (..., 4) tensor of (fx, fy, cx, cy)
            together with image_size=(H, W)
    Return:
        uv: (..., N, 2) pixel coordinates (finite even where invalid)
        valid: (..., N) bool, False when Z <= z_min or outside the image
    """
    cam = transform_points(points, pose)
    if isinstance(intrinsics, CameraIntrinsics):
        image_size = (intrinsics.height, intrinsics.width)
        k = torch.as_tensor(intrinsics.as_vector(), dtype=cam.dtype)
    else:
        if image_size is None:
            raise ValueError("image_size is required with raw intrinsics")
        k = _as_tensor(intrinsics, cam.dtype)
    H, W = image_size
    fx, fy, cx, cy = (k[..., i].unsqueeze(-1) for i in range(4))
    X, Y, Z = cam.unbind(-1)
    in_front = Z > z_min
    Zs = torch.where(in_front, Z, torch.ones_like(Z))
    u = fx * X / Zs + cx
    v = fy * Y / Zs + cy
    valid = in_front & (u >= -0.5) & (u < W - 0.5) & (v >= -0.5) & (v < H - 0.5)
    return torch.stack([u, v], -1), valid


# -- sampling and grouping ------------------------------------------------

def farthest_point_sample(points, m: int, start_index: int | None = 0,
                          generator: torch.Generator | None = None) -> torch.Tensor:
    """Greedy farthest point sampling.

    Input:
        points: (N, 3) or (B, N, 3)
        m: number of samples, 1 <= m <= N
        start_index: first pick; None draws it from `generator` per batch item
    Return:
        (m,) or (B, m) long indices
    """
    if isinstance(points, PointCloud):
        points = points.points
    pts = _as_tensor(points)
    squeeze = pts.dim() == 2
    if squeeze:
        pts = pts.unsqueeze(0)
    B, N, _ = pts.shape
    if not 1 <= m <= N:
        raise ValueError(f"cannot sample {m} points from a cloud of {N}")
    pts = pts.detach()
    idx = torch.zeros(B, m, dtype=torch.long)
    if start_index is None:
        farthest = torch.randint(0, N, (B,), generator=generator)
    else:
        if not 0 <= start_index < N:
            raise ValueError(f"start_index {start_index} out of range for {N} points")
        farthest = torch.full((B,), start_index, dtype=torch.long)
    dist = torch.full((B, N), float("inf"), dtype=pts.dtype)
    batch = torch.arange(B)
    for i in range(m):
        idx[:, i] = farthest
        d = ((pts - pts[batch, farthest].unsqueeze(1)) ** 2).sum(-1)
        dist = torch.minimum(dist, d)
        farthest = dist.argmax(-1)
    return idx[0] if squeeze else idx


def ball_query(centers, points, radius: float, k_max: int) -> torch.Tensor:
    """Group up to k_max points within `radius` of each center, nearest first.

    Groups with fewer than k_max members (including none) are padded by
    repeating the center's nearest point.

    Input:
        centers: (M, 3) or (B, M, 3)
        points: (N, 3) or (B, N, 3)
    Return:
        (M, k) or (B, M, k) long indices with k = min(k_max, N)
    """
    if isinstance(points, PointCloud):
        points = points.points
    c, p = _as_tensor(centers).detach(), _as_tensor(points).detach()
    squeeze = p.dim() == 2
    if squeeze:
        c, p = c.unsqueeze(0), p.unsqueeze(0)
    if radius <= 0 or k_max < 1:
        raise ValueError("ball_query needs radius > 0 and k_max >= 1")
    k = min(k_max, p.shape[1])
    d2 = ((c.unsqueeze(2) - p.unsqueeze(1)) ** 2).sum(-1)
    d2k, idx = d2.topk(k, dim=-1, largest=False, sorted=True)
    idx = torch.where(d2k <= radius * radius, idx, idx[..., :1].expand_as(idx))
    return idx[0] if squeeze else idx


def gather_points(values: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
    """values (B, N, C), idx (B, ...) -> (B, ..., C)."""
    B = values.shape[0]
    flat = idx.reshape(B, -1)
    out = torch.gather(values, 1, flat.unsqueeze(-1).expand(-1, -1, values.shape[-1]))
    return out.reshape(idx.shape + (values.shape[-1],))


def diameter(points) -> float:
    """Maximum pairwise Euclidean distance."""
    if isinstance(points, PointCloud):
        points = points.points
    if isinstance(points, torch.Tensor):
        points = points.detach().cpu().numpy()
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < 2:
        raise ValueError("diameter needs at least two points")
    if len(pts) > 2000:
        # the farthest pair always lies on the convex hull
        from scipy.spatial import ConvexHull, QhullError
        try:
            pts = pts[ConvexHull(pts).vertices]
        except (QhullError, ValueError):
            pass
    best = 0.0
    for s in range(0, len(pts), 1024):
        block = pts[s:s + 1024]
        d = np.sqrt(((block[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
        best = max(best, float(d.max()))
    return best
