"""On-disk sample format and the line-delimited manifest.

Each sample is a directory holding ``image.png`` (8-bit RGB, black
background), ``cloud.ply`` (ASCII, float x y z) and ``meta.json``. The
manifest ``manifest.jsonl`` starts with a header line (generator seed and
spec hash) followed by one record per sample.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..config import DataError
from ..geometry import CameraIntrinsics, PointCloud, Pose

SPLITS = ("train", "val", "test")
META_KEYS = ("quat_wxyz", "translation_m", "fx", "fy", "cx", "cy", "width", "height",
             "category", "instance", "scale_m")
MANIFEST_NAME = "manifest.jsonl"


class CorruptFileError(DataError):
    pass


class ValidationError(DataError):
    pass


@dataclass
class Sample:
    image: np.ndarray              # (H, W, 3) uint8
    pc_canonical: PointCloud
    pose: Pose
    intrinsics: CameraIntrinsics
    category: str
    instance: str


@dataclass
class ManifestEntry:
    path: str
    split: str
    category: str
    instance: str


@dataclass
class DatasetManifest:
    root: Path
    entries: list[ManifestEntry]
    seed: int | None = None
    spec_hash: str | None = None
    extra: dict = field(default_factory=dict)

    def split(self, name: str) -> list[int]:
        return [i for i, e in enumerate(self.entries) if e.split == name]

    def categories(self) -> list[str]:
        return list(dict.fromkeys(e.category for e in self.entries))

    def __len__(self):
        return len(self.entries)


# -- primitives -----------------------------------------------------------

def write_ply(path, points: np.ndarray) -> None:
    pts = np.asarray(points, dtype=np.float64)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(pts)}",
             "property float x", "property float y", "property float z", "end_header"]
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in pts.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path) -> np.ndarray:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except (OSError, UnicodeDecodeError) as e:
        raise CorruptFileError(f"{path}: cannot read point cloud ({e})") from e
    try:
        if lines[0].strip() != "ply" or lines[1].strip() != "format ascii 1.0":
            raise ValueError("not an ASCII PLY file")
        end = lines.index("end_header")
        count = next(int(l.split()[-1]) for l in lines[:end] if l.startswith("element vertex"))
        rows = [l.split() for l in lines[end + 1:end + 1 + count]]
        pts = np.array(rows, dtype=np.float64)
        if pts.shape != (count, 3):
            raise ValueError(f"expected {count} rows of x y z, got shape {pts.shape}")
    except (ValueError, IndexError, StopIteration) as e:
        raise CorruptFileError(f"{path}: malformed PLY ({e})") from e
    return pts


def write_png(path, image: np.ndarray) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="RGB").save(path, format="PNG")


def read_png(path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except (OSError, ValueError) as e:
        raise CorruptFileError(f"{path}: cannot decode image ({e})") from e


# -- samples --------------------------------------------------------------

def write_sample(directory, sample: Sample) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_png(d / "image.png", sample.image)
    write_ply(d / "cloud.ply", sample.pc_canonical.points)
    k = sample.intrinsics
    meta = {
        "quat_wxyz": [float(x) for x in sample.pose.quat],
        "translation_m": [float(x) for x in sample.pose.translation],
        "fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
        "width": k.width, "height": k.height,
        "category": sample.category, "instance": sample.instance,
        "scale_m": float(sample.pc_canonical.scale_m),
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=1) + "\n")


def read_sample(directory) -> Sample:
    """Decode and validate one sample directory."""
    d = Path(directory)
    meta_path = d / "meta.json"
    try:
        meta = json.loads(meta_path.read_text())
    except (OSError, ValueError) as e:
        raise CorruptFileError(f"{meta_path}: cannot read metadata ({e})") from e
    missing = [k for k in META_KEYS if k not in meta]
    if missing:
        raise ValidationError(f"{meta_path}: missing keys {missing}")
    try:
        pose = Pose(np.asarray(meta["quat_wxyz"], dtype=np.float64),
                    np.asarray(meta["translation_m"], dtype=np.float64))
        intr = CameraIntrinsics(float(meta["fx"]), float(meta["fy"]), float(meta["cx"]),
                                float(meta["cy"]), int(meta["width"]), int(meta["height"]))
        cloud = PointCloud(read_ply(d / "cloud.ply"), float(meta["scale_m"]))
        cloud.check_canonical()
    except (ValueError, TypeError) as e:
        raise ValidationError(f"{d}: {e}") from e
    image = read_png(d / "image.png")
    if image.shape[:2] != (intr.height, intr.width):
        raise ValidationError(f"{d / 'image.png'}: size {image.shape[1]}x{image.shape[0]} does not "
                              f"match intrinsics {intr.width}x{intr.height}")
    return Sample(image, cloud, pose, intr, str(meta["category"]), str(meta["instance"]))


# -- manifest -------------------------------------------------------------

def write_manifest(root, entries, seed=None, spec_hash=None, extra=None) -> Path:
    path = Path(root) / MANIFEST_NAME
    header = {"header": True, "seed": seed, "spec_hash": spec_hash, **(extra or {})}
    lines = [json.dumps(header, sort_keys=True)]
    lines += [json.dumps({"path": e.path, "split": e.split, "category": e.category,
                          "instance": e.instance}, sort_keys=True) for e in entries]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_manifest(path) -> DatasetManifest:
    """Load a manifest file (or the manifest inside a dataset directory)."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        lines = [l for l in path.read_text().splitlines() if l.strip()]
    except OSError as e:
        raise DataError(f"{path}: cannot read manifest ({e})") from e
    header, entries = {}, []
    try:
        for n, line in enumerate(lines, 1):
            rec = json.loads(line)
            if rec.get("header"):
                header = rec
                continue
            if rec["split"] not in SPLITS:
                raise ValueError(f"unknown split {rec['split']!r}")
            entries.append(ManifestEntry(rec["path"], rec["split"], rec["category"], rec["instance"]))
    except (ValueError, KeyError) as e:
        raise CorruptFileError(f"{path}: bad record on line {n} ({e})") from e
    root = path.parent
    for e in entries:
        if not (root / e.path).is_dir():
            raise DataError(f"{path}: sample directory {root / e.path} does not exist")
    extra = {k: v for k, v in header.items() if k not in ("header", "seed", "spec_hash")}
    return DatasetManifest(root, entries, header.get("seed"), header.get("spec_hash"), extra)


def load_sample(manifest: DatasetManifest, index: int) -> Sample:
    if not 0 <= index < len(manifest.entries):
        raise IndexError(f"sample index {index} outside 0..{len(manifest.entries) - 1}")
    entry = manifest.entries[index]
    sample = read_sample(manifest.root / entry.path)
    if (sample.category, sample.instance) != (entry.category, entry.instance):
        raise ValidationError(f"{manifest.root / entry.path}: metadata disagrees with the manifest")
    return sample


def check_split_discipline(manifest: DatasetManifest) -> None:
    """Category-level splits never share an instance between train and test."""
    train = {(e.category, e.instance) for e in manifest.entries if e.split == "train"}
    test = {(e.category, e.instance) for e in manifest.entries if e.split == "test"}
    shared = train & test
    if shared:
        raise ValidationError(f"instances in both train and test: {sorted(shared)[:5]}")
