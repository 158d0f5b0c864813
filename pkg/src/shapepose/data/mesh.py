"""Parametric triangle meshes for the synthetic categories, plus surface sampling.

All generators build objects standing on y = 0 with y up; `canonicalize`
then centers the bounding box and scales its diagonal to 1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import PointCloud

CATEGORIES = ("box", "cylinder", "bowl", "mug", "bottle", "laptop")


@dataclass
class Mesh:
    vertices: np.ndarray   # (V, 3) float64
    faces: np.ndarray      # (F, 3) int64

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face index out of range")

    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def transformed(self, scale=1.0, offset=(0.0, 0.0, 0.0)) -> "Mesh":
        return Mesh(self.vertices * scale + np.asarray(offset), self.faces.copy())


def merge(*meshes: Mesh) -> Mesh:
    verts, faces, base = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + base)
        base += len(m.vertices)
    return Mesh(np.concatenate(verts), np.concatenate(faces))


def canonicalize(mesh: Mesh) -> Mesh:
    """Center the bounding box at the origin and scale its diagonal to 1."""
    lo, hi = mesh.vertices.min(0), mesh.vertices.max(0)
    diag = np.linalg.norm(hi - lo)
    if diag == 0:
        raise ValueError("cannot canonicalize a mesh with zero extent")
    return Mesh((mesh.vertices - (lo + hi) / 2) / diag, mesh.faces.copy())


def sample_mesh_to_pointcloud(mesh: Mesh, n: int = 2048, seed=0, scale_m: float = 1.0) -> PointCloud:
    """Area-weighted triangle choice, then uniform barycentric sampling."""
    if n < 1:
        raise ValueError("n must be at least 1")
    areas = mesh.triangle_areas()
    total = areas.sum()
    if not total > 0:
        raise ValueError("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    tri = rng.choice(len(areas), size=n, p=areas / total)
    r1, r2 = rng.random(n), rng.random(n)
    s = np.sqrt(r1)
    u, v, w = 1 - s, s * (1 - r2), s * r2
    a, b, c = (mesh.vertices[mesh.faces[tri, i]] for i in range(3))
    pts = u[:, None] * a + v[:, None] * b + w[:, None] * c
    return PointCloud(pts, scale_m)


# -- primitives -------------------------------------------------------------

def box_mesh(width, height, depth) -> Mesh:
    """Axis-aligned box standing on y = 0, centered in x and z."""
    x, z = width / 2, depth / 2
    v = np.array([[sx * x, y, sz * z] for y in (0.0, height) for sz in (-1, 1) for sx in (-1, 1)])
    # vertex k: bit0 = +x, bit1 = +z, bit2 = top
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    faces = [f for a, b, c, d in quads for f in ((a, b, c), (a, c, d))]
    return Mesh(v, faces)


def revolve(profile, segments=32) -> Mesh:
    """Surface of revolution about y of a polyline of (radius, height) points.

    Profile points with radius 0 collapse to a pole, which closes the
    surface there.
    """
    prof = np.asarray(profile, dtype=np.float64)
    theta = np.linspace(0, 2 * np.pi, segments, endpoint=False)
    r, y = prof[:, 0:1], prof[:, 1:2]
    verts = np.stack([r * np.cos(theta), np.broadcast_to(y, r.shape[:1] + theta.shape),
                      r * np.sin(theta)], -1).reshape(-1, 3)
    faces = []
    for i in range(len(prof) - 1):
        for j in range(segments):
            a, b = i * segments + j, i * segments + (j + 1) % segments
            c, d = a + segments, b + segments
            if prof[i, 0] > 0:
                faces.append((a, b, d))
            if prof[i + 1, 0] > 0:
                faces.append((a, d, c))
    return Mesh(verts, faces)


def partial_torus(major, minor, center, angle_span, segments=16, tube_segments=8) -> Mesh:
    """Torus arc in the xy plane, angles measured from +x, open at both ends."""
    a0, a1 = angle_span
    theta = np.linspace(a0, a1, segments + 1)
    phi = np.linspace(0, 2 * np.pi, tube_segments, endpoint=False)
    ring = major + minor * np.cos(phi)
    verts = np.stack([np.cos(theta)[:, None] * ring, np.sin(theta)[:, None] * ring,
                      np.broadcast_to(minor * np.sin(phi), (segments + 1, tube_segments))], -1)
    verts = verts.reshape(-1, 3) + np.asarray(center)
    faces = []
    for i in range(segments):
        for j in range(tube_segments):
            a, b = i * tube_segments + j, i * tube_segments + (j + 1) % tube_segments
            c, d = a + tube_segments, b + tube_segments
            faces += [(a, b, d), (a, d, c)]
    return Mesh(verts, faces)


# -- categories ---------------------------------------------------------------

def make_box(rng):
    return box_mesh(rng.uniform(0.6, 1.0), rng.uniform(0.4, 0.9), rng.uniform(0.4, 0.8))


def make_cylinder(rng):
    r, h = rng.uniform(0.25, 0.45), rng.uniform(0.6, 1.0)
    return revolve([(0, 0), (r, 0), (r, h), (0, h)])


def make_bowl(rng):
    R, h = rng.uniform(0.45, 0.55), rng.uniform(0.25, 0.4)
    foot, wall = rng.uniform(0.3, 0.5) * R, 0.9
    t = np.linspace(0, 1, 8)
    outer = [(foot + (R - foot) * np.sin(ti * np.pi / 2), h * (1 - np.cos(ti * np.pi / 2))) for ti in t]
    inner = [(wall * rr, 0.08 * h + 0.92 * yy) for rr, yy in outer[::-1]]
    return revolve([(0, 0)] + outer + inner + [(0, inner[-1][1])])


def make_mug(rng):
    r, h = rng.uniform(0.28, 0.38), rng.uniform(0.65, 0.95)
    wall = 0.9
    body = revolve([(0, 0), (r, 0), (r, h), (wall * r, h), (wall * r, 0.08 * h), (0, 0.08 * h)])
    major = rng.uniform(0.22, 0.3) * h
    handle = partial_torus(major, 0.05 * h, (r - 0.02, h / 2, 0), (-np.pi / 2, np.pi / 2))
    return merge(body, handle)


def make_bottle(rng):
    r, h = rng.uniform(0.18, 0.26), rng.uniform(0.8, 1.1)
    neck, body_h = rng.uniform(0.3, 0.45) * r, rng.uniform(0.5, 0.65) * h
    t = np.linspace(0, 1, 6)[1:-1]
    shoulder = [(neck + (r - neck) * np.cos(ti * np.pi / 2), body_h + (0.8 * h - body_h) * ti) for ti in t]
    return revolve([(0, 0), (r, 0), (r, body_h)] + shoulder + [(neck, 0.8 * h), (neck, h), (0, h)])


def make_laptop(rng):
    """Base slab plus a screen slab hinged at the back edge."""
    w, d, t = rng.uniform(0.9, 1.1), rng.uniform(0.6, 0.75), rng.uniform(0.03, 0.05)
    opening = np.deg2rad(rng.uniform(95, 125))
    base = box_mesh(w, t, d)
    screen = box_mesh(w, 0.6 * t, d)
    # lay the screen flat along +y from the hinge, then tilt it back about x
    v = screen.vertices.copy()
    v = np.stack([v[:, 0], v[:, 2] + d / 2, -v[:, 1]], -1)   # slab now spans y in [0, d]
    tilt = opening - np.pi / 2
    c, s = np.cos(tilt), np.sin(tilt)
    y, z = v[:, 1], v[:, 2]
    v = np.stack([v[:, 0], c * y - s * z + t, -(s * y + c * z) - d / 2], -1)
    return merge(base, Mesh(v, screen.faces))


MAKERS = {
    "box": make_box,
    "cylinder": make_cylinder,
    "bowl": make_bowl,
    "mug": make_mug,
    "bottle": make_bottle,
    "laptop": make_laptop,
}


def make_instance(category: str, rng: np.random.Generator) -> Mesh:
    """Random canonical mesh for one instance of `category`."""
    if category not in MAKERS:
        raise ValueError(f"unknown category {category!r}; choose from {CATEGORIES}")
    return canonicalize(MAKERS[category](rng))
