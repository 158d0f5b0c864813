"""Evaluation measures: Chamfer in mm, APP, 10 degree / 10 cm, per-category reports."""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import torch

from .geometry import Pose, PointCloud, diameter, transform_points
from .losses import chamfer_distance

APP_ALPHAS = (0.2, 0.5)
REPORT_COLUMNS = ("category", "n", "chamfer_mm", "app_0.2", "app_0.5", "acc_10deg_10cm")


@dataclass(frozen=True)
class PoseErrors:
    rotation_deg: float
    translation_cm: float

    def __post_init__(self):
        if not 0.0 <= self.rotation_deg <= 180.0 + 1e-9:
            raise ValueError(f"rotation error {self.rotation_deg} outside [0, 180]")
        if not self.translation_cm >= 0.0:
            raise ValueError(f"translation error {self.translation_cm} is negative")


@dataclass(frozen=True)
class SampleResult:
    """Per-sample metrics; pose fields are None when the model predicts no pose."""

    category: str
    chamfer_mm: float
    app_02: int | None = None
    app_05: int | None = None
    acc_10deg10cm: int | None = None


@dataclass(frozen=True)
class CategoryReport:
    category: str
    sample_count: int
    mean_chamfer_mm: float
    app_02: float | None
    app_05: float | None
    acc_10deg10cm: float | None

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError("a report needs at least one sample")
        for v in (self.app_02, self.app_05, self.acc_10deg10cm):
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"fraction {v} outside [0, 1]")

    def row(self) -> dict:
        def fmt(v):
            return "" if v is None else repr(float(v))
        return {
            "category": self.category,
            "n": str(self.sample_count),
            "chamfer_mm": fmt(self.mean_chamfer_mm),
            "app_0.2": fmt(self.app_02),
            "app_0.5": fmt(self.app_05),
            "acc_10deg_10cm": fmt(self.acc_10deg10cm),
        }


def chamfer_mm(pc_pred: PointCloud, pc_gt: PointCloud) -> float:
    if pc_gt.scale_m is None:
        raise ValueError("ground-truth cloud has no metric scale")
    d = chamfer_distance(torch.as_tensor(pc_pred.points), torch.as_tensor(pc_gt.points))
    return float(d) * pc_gt.scale_m * 1000.0


def _mean_nn(src: np.ndarray, dst: np.ndarray) -> float:
    """Mean over src of the distance to the nearest dst point."""
    total = 0.0
    for s in range(0, len(src), 1024):
        block = src[s:s + 1024]
        d = np.sqrt(((block[:, None, :] - dst[None, :, :]) ** 2).sum(-1))
        total += d.min(1).sum()
    return total / len(src)


def app_indicator(pc: PointCloud, pose_gt: Pose, pose_hat: Pose, alpha: float):
    """Bidirectional ADI test on the ground-truth cloud.

    Poses act on the metric cloud (canonical points x scale_m).
    Return:
        (hit, m1, m2) with hit in {0, 1}
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    pts = pc.metric() if pc.scale_m is not None else pc.points
    posed_gt = transform_points(pts, pose_gt).numpy()
    posed_hat = transform_points(pts, pose_hat).numpy()
    m1 = _mean_nn(posed_gt, posed_hat)
    m2 = _mean_nn(posed_hat, posed_gt)
    # both posed clouds are rigid copies of one cloud, so their diameters agree
    d = diameter(posed_gt)
    hit = int(m1 <= alpha * d and m2 <= alpha * d)
    return hit, m1, m2


def rotation_angle_deg(R_a: np.ndarray, R_b: np.ndarray) -> float:
    """Geodesic angle between two rotations."""
    M = np.asarray(R_a).T @ np.asarray(R_b)
    cos = (np.trace(M) - 1.0) / 2.0
    sin = 0.5 * np.linalg.norm([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]])
    return math.degrees(math.atan2(sin, cos))


def pose_errors(pose_hat: Pose, pose_gt: Pose, symmetry_axis=None) -> PoseErrors:
    """Rotation (degrees) and translation (cm) error.

    With a symmetry_axis (object frame), rotations about that axis are
    quotiented out: the error is the angle between the axis images.
    """
    R_hat, R_gt = pose_hat.rotation, pose_gt.rotation
    if symmetry_axis is None:
        rot = rotation_angle_deg(R_gt, R_hat)
    else:
        a = np.asarray(symmetry_axis, dtype=np.float64)
        a = a / np.linalg.norm(a)
        u, v = R_gt @ a, R_hat @ a
        rot = math.degrees(math.atan2(np.linalg.norm(np.cross(u, v)), float(u @ v)))
    trans = float(np.linalg.norm(pose_hat.translation - pose_gt.translation)) * 100.0
    return PoseErrors(min(max(rot, 0.0), 180.0), trans)


def ten_deg_ten_cm(errors: PoseErrors) -> int:
    return int(errors.rotation_deg < 10.0 and errors.translation_cm < 10.0)


def evaluate_sample(category: str, pc_pred: PointCloud, pc_gt: PointCloud,
                    pose_hat: Pose | None, pose_gt: Pose, symmetry_axis=None) -> SampleResult:
    cd = chamfer_mm(pc_pred, pc_gt)
    if pose_hat is None:
        return SampleResult(category, cd)
    app = [app_indicator(pc_gt, pose_gt, pose_hat, a)[0] for a in APP_ALPHAS]
    acc = ten_deg_ten_cm(pose_errors(pose_hat, pose_gt, symmetry_axis))
    return SampleResult(category, cd, app[0], app[1], acc)


def _report(category: str, samples: Sequence[SampleResult]) -> CategoryReport:
    def frac(field):
        vals = [getattr(s, field) for s in samples if getattr(s, field) is not None]
        return float(np.mean(vals)) if vals else None
    return CategoryReport(
        category=category,
        sample_count=len(samples),
        mean_chamfer_mm=float(np.mean([s.chamfer_mm for s in samples])),
        app_02=frac("app_02"),
        app_05=frac("app_05"),
        acc_10deg10cm=frac("acc_10deg10cm"),
    )


def aggregate(samples: Iterable[SampleResult], category_order: Sequence[str] | None = None):
    """Per-category reports plus an overall report pooling every sample.

    Return:
        (list of CategoryReport in category order, overall CategoryReport)
    """
    samples = list(samples)
    if not samples:
        raise ValueError("cannot aggregate an empty result set")
    groups = defaultdict(list)
    for s in samples:
        groups[s.category].append(s)
    order = [c for c in (category_order or sorted(groups)) if c in groups]
    order += sorted(set(groups) - set(order))
    return [_report(c, groups[c]) for c in order], _report("overall", samples)


def write_report_csv(reports: Sequence[CategoryReport], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=REPORT_COLUMNS)
        w.writeheader()
        for r in reports:
            w.writerow(r.row())


def format_report_table(reports: Sequence[CategoryReport]) -> str:
    def pct(v):
        return "-" if v is None else f"{100 * v:.2f}%"
    rows = [("category", "n", "chamfer_mm", "APP(0.2)", "APP(0.5)", "10deg10cm")]
    for r in reports:
        rows.append((r.category, str(r.sample_count), f"{r.mean_chamfer_mm:.3f}",
                     pct(r.app_02), pct(r.app_05), pct(r.acc_10deg10cm)))
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in rows)
