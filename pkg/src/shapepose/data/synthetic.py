"""Procedural dataset: parametric objects rendered at known poses.

Every instance draws its mesh, color, metric size and views from its own
generator seeded by (seed, category, instance index), so output does not
depend on generation order.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..config import ConfigError, build_dataclass, parse_kv, to_kv
from ..geometry import CameraIntrinsics, Pose, axis_angle_to_matrix, project_points, random_quaternion
from .io import DatasetManifest, ManifestEntry, Sample, write_manifest, write_sample
from .mesh import CATEGORIES, make_instance, sample_mesh_to_pointcloud
from .render import render_mesh

ROTATION_MODES = ("upper_hemisphere", "so3")

# nominal bounding-box diagonal in meters per category
NOMINAL_SCALE_M = {
    "box": 0.26, "cylinder": 0.24, "bowl": 0.24, "mug": 0.22, "bottle": 0.28, "laptop": 0.30,
}


@dataclass(frozen=True)
class GeneratorSpec:
    categories: tuple[str, ...] = ("box", "mug", "laptop")
    instances_per_category: int = 10
    test_instances: int = 2
    val_instances: int = 0
    views_per_instance: int = 40
    n_points: int = 2048
    image_size: int = 128
    focal_px: float = 120.0
    depth_min_m: float = 0.3
    depth_max_m: float = 1.5
    rotation: str = "upper_hemisphere"
    scale_jitter: float = 0.05
    min_visible_fraction: float = 0.8

    def __post_init__(self):
        if not self.categories:
            raise ConfigError("generator spec lists no categories")
        unknown = [c for c in self.categories if c not in CATEGORIES]
        if unknown:
            raise ConfigError(f"unknown categories {unknown}; choose from {CATEGORIES}")
        if len(set(self.categories)) != len(self.categories):
            raise ConfigError("categories are listed more than once")
        if self.instances_per_category < 1 or self.views_per_instance < 1 or self.n_points < 1:
            raise ConfigError("instance, view and point counts must be positive")
        if self.test_instances < 0 or self.val_instances < 0:
            raise ConfigError("held-out instance counts must be non-negative")
        if self.test_instances + self.val_instances > self.instances_per_category:
            raise ConfigError("more held-out instances than instances per category")
        if not 0 < self.depth_min_m <= self.depth_max_m:
            raise ConfigError("need 0 < depth_min_m <= depth_max_m")
        if self.rotation not in ROTATION_MODES:
            raise ConfigError(f"rotation must be one of {ROTATION_MODES}")
        if not 0 <= self.scale_jitter < 1:
            raise ConfigError("scale_jitter must lie in [0, 1)")

    @property
    def sample_count(self) -> int:
        return len(self.categories) * self.instances_per_category * self.views_per_instance

    def spec_hash(self) -> str:
        return hashlib.sha256(to_kv(self).encode()).hexdigest()[:16]

    def intrinsics(self) -> CameraIntrinsics:
        c = (self.image_size - 1) / 2
        return CameraIntrinsics(self.focal_px, self.focal_px, c, c, self.image_size, self.image_size)


def load_generator_spec(path) -> GeneratorSpec:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read generator spec {path}: {e}") from e
    return build_dataclass(GeneratorSpec, parse_kv(text))


def split_of(k: int, spec: GeneratorSpec) -> str:
    """Last instances are test, the ones before them val, the rest train."""
    n = spec.instances_per_category
    if k >= n - spec.test_instances:
        return "test"
    if k >= n - spec.test_instances - spec.val_instances:
        return "val"
    return "train"


def sample_rotation(rng: np.random.Generator, mode: str) -> np.ndarray:
    """Object-to-camera rotation (camera x right, y down, z forward).

    upper_hemisphere: the object stands upright (its +y towards image up),
    turned by a uniform azimuth and seen from an elevation whose sine is
    uniform in [0, 1], i.e. a viewpoint uniform on the upper half sphere.
    """
    if mode == "so3":
        return Pose(random_quaternion(rng)).rotation
    azimuth = rng.uniform(0, 2 * math.pi)
    elevation = math.asin(rng.uniform(0, 1))
    upright = np.diag([1.0, -1.0, -1.0])
    return (axis_angle_to_matrix([1, 0, 0], elevation) @ upright
            @ axis_angle_to_matrix([0, 1, 0], azimuth))


def sample_view(rng, spec: GeneratorSpec, scale_m: float, intr: CameraIntrinsics) -> Pose:
    """Random pose with the bounding-box center projected inside the central half of the crop."""
    z = rng.uniform(spec.depth_min_m, spec.depth_max_m)
    radius_px = intr.fx * scale_m / 2 / z
    max_off = max(0.0, min(0.25 * intr.width, intr.width / 2 - radius_px - 2))
    du, dv = rng.uniform(-max_off, max_off, size=2)
    t = np.array([du * z / intr.fx, dv * z / intr.fy, z])
    return Pose.from_matrix(sample_rotation(rng, spec.rotation), t)


def visible_fraction(points_m: np.ndarray, pose: Pose, intr: CameraIntrinsics) -> float:
    _, valid = project_points(points_m, pose, intr)
    return float(valid.double().mean())


def generate_instance(spec: GeneratorSpec, seed: int, category: str, k: int):
    """Mesh, canonical cloud, color, scale and views for one instance."""
    rng = np.random.default_rng([seed, CATEGORIES.index(category), k])
    mesh = make_instance(category, rng)
    scale = NOMINAL_SCALE_M[category] * (1 + rng.uniform(-spec.scale_jitter, spec.scale_jitter))
    color = rng.uniform(0.35, 1.0, size=3)
    cloud = sample_mesh_to_pointcloud(mesh, spec.n_points, int(rng.integers(2**31)), scale)
    intr = spec.intrinsics()
    views = []
    for _ in range(spec.views_per_instance):
        for _attempt in range(100):
            pose = sample_view(rng, spec, scale, intr)
            if visible_fraction(cloud.metric(), pose, intr) >= spec.min_visible_fraction:
                break
        else:
            raise RuntimeError(f"could not place {category} instance {k} inside the crop")
        rgb, _, _ = render_mesh(mesh.vertices * scale, mesh.faces, pose, intr, color)
        views.append((pose, rgb))
    return mesh, cloud, views


def generate_synthetic_dataset(spec: GeneratorSpec, seed: int, out_dir) -> DatasetManifest:
    """Render every (category, instance, view) and write the manifest."""
    if spec is None or not spec.categories:
        raise ConfigError("empty generator spec")
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    intr = spec.intrinsics()
    entries = []
    for category in spec.categories:
        for k in range(spec.instances_per_category):
            instance = f"{category}_{k:03d}"
            _, cloud, views = generate_instance(spec, seed, category, k)
            for j, (pose, rgb) in enumerate(views):
                rel = f"{category}/{instance}/{j:03d}"
                write_sample(root / rel, Sample(rgb, cloud, pose, intr, category, instance))
                entries.append(ManifestEntry(rel, split_of(k, spec), category, instance))
    (root / "generator_spec.txt").write_text(to_kv(spec) + "\n")
    write_manifest(root, entries, seed=seed, spec_hash=spec.spec_hash(),
                   extra={"categories": list(spec.categories)})
    return DatasetManifest(root, entries, seed, spec.spec_hash(),
                           {"categories": list(spec.categories)})
