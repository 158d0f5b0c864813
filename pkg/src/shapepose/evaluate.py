"""Evaluation harness, occlusion study and prediction overlays."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_model
from .config import DataError
from .data.io import read_manifest, read_png, write_png, write_ply
from .data.occlusion import DIRECTIONS, occlude
from .data.tensors import SplitData, load_split
from .geometry import CameraIntrinsics, PointCloud, Pose, project_points, transform_points
from .losses import chamfer_distance
from .metrics import CategoryReport, aggregate, evaluate_sample, format_report_table, write_report_csv


@dataclass
class EvalResult:
    reports: list            # per-category CategoryReport
    overall: CategoryReport
    samples: list            # SampleResult per sample
    chamfer_canonical: np.ndarray   # per-sample Chamfer in canonical units

    @property
    def table(self) -> list:
        return self.reports + [self.overall]

    def rows(self) -> list:
        return [r.row() for r in self.table]


@torch.no_grad()
def predict_split(model, data: SplitData, images=None, batch_size: int = 32):
    """forward_infer over a split -> (clouds (B, N, 3), quats (B, 4), translations (B, 3)) float64."""
    clouds, quats, trans = [], [], []
    for s in range(0, len(data), batch_size):
        idx = np.arange(s, min(s + batch_size, len(data)))
        pred = model.forward_infer(data.image_batch(idx, images))
        clouds.append(pred.pc_pred.double().numpy())
        quats.append(pred.quat.double().numpy())
        trans.append(pred.translation.double().numpy())
    return np.concatenate(clouds), np.concatenate(quats), np.concatenate(trans)


def evaluate_model(model, data: SplitData, images=None, oracle: bool = False,
                   category_order=None) -> EvalResult:
    """Metrics suite over a split.

    oracle=True scores the ground truth as its own prediction, the upper
    bound of every metric.
    """
    if oracle:
        clouds, quats, trans, has_pose = data.points, data.quat, data.trans, True
    else:
        clouds, quats, trans = predict_split(model, data, images)
        has_pose = model.cfg.has_pose
    samples, cd = [], []
    for i in range(len(data)):
        gt = data.cloud(i)
        pred = PointCloud(clouds[i], gt.scale_m)
        pose_hat = Pose.from_quat(quats[i], trans[i]) if has_pose else None
        samples.append(evaluate_sample(data.categories[i], pred, gt, pose_hat, data.pose(i)))
        cd.append(float(chamfer_distance(torch.from_numpy(clouds[i]), torch.from_numpy(gt.points))))
    reports, overall = aggregate(samples, category_order)
    return EvalResult(reports, overall, samples, np.array(cd))


def evaluate(checkpoint, manifest, split: str, out_csv=None, oracle: bool = False,
             echo=print) -> EvalResult:
    model, _ = load_model(checkpoint)
    m = read_manifest(manifest)
    data = load_split(m, split)
    result = evaluate_model(model, data, oracle=oracle, category_order=m.categories())
    if out_csv is not None:
        write_report_csv(result.table, out_csv)
    if echo is not None:
        echo(format_report_table(result.table))
    return result


# -- occlusion study --------------------------------------------------------

OCCLUSION_COLUMNS = ("metric",) + DIRECTIONS + ("overall",)


@dataclass
class OcclusionReport:
    clean: EvalResult
    occluded: dict          # direction -> EvalResult

    def _overall(self, field):
        vals = [getattr(s, field) for d in DIRECTIONS for s in self.occluded[d].samples]
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None

    def rows(self) -> list:
        """Rows chamfer_mm and acc_10deg_10cm, then clean values and deltas."""
        def row(name, per_dir, overall):
            return {"metric": name, **{d: per_dir[d] for d in DIRECTIONS}, "overall": overall}
        cd = {d: self.occluded[d].overall.mean_chamfer_mm for d in DIRECTIONS}
        acc = {d: self.occluded[d].overall.acc_10deg10cm for d in DIRECTIONS}
        clean_cd, clean_acc = self.clean.overall.mean_chamfer_mm, self.clean.overall.acc_10deg10cm
        out = [row("chamfer_mm", cd, self._overall("chamfer_mm")),
               row("acc_10deg_10cm", acc, self._overall("acc_10deg10cm")),
               row("clean_chamfer_mm", {d: clean_cd for d in DIRECTIONS}, clean_cd),
               row("clean_acc_10deg_10cm", {d: clean_acc for d in DIRECTIONS}, clean_acc)]
        delta = lambda a, b: None if a is None or b is None else a - b
        out.append(row("delta_chamfer_mm", {d: delta(cd[d], clean_cd) for d in DIRECTIONS},
                       delta(out[0]["overall"], clean_cd)))
        out.append(row("delta_acc_10deg_10cm", {d: delta(acc[d], clean_acc) for d in DIRECTIONS},
                       delta(out[1]["overall"], clean_acc)))
        return out

    def category_chamfer(self, category: str) -> dict:
        """Mean Chamfer (mm) of one category per direction, plus 'clean'."""
        def pick(res):
            return next((r.mean_chamfer_mm for r in res.reports if r.category == category), None)
        out = {d: pick(self.occluded[d]) for d in DIRECTIONS}
        out["clean"] = pick(self.clean)
        return out


def write_rows_csv(rows, columns, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=columns)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else v) for k, v in r.items()})


def occlusion_study_model(model, data: SplitData, category_order=None) -> OcclusionReport:
    clean = evaluate_model(model, data, category_order=category_order)
    occluded = {d: evaluate_model(model, data, np.stack([occlude(im, d) for im in data.images]),
                                  category_order=category_order)
                for d in DIRECTIONS}
    return OcclusionReport(clean, occluded)


def occlusion_study(checkpoint, manifest, out_csv=None, split: str = "test", echo=print) -> OcclusionReport:
    model, _ = load_model(checkpoint)
    m = read_manifest(manifest)
    report = occlusion_study_model(model, load_split(m, split), m.categories())
    rows = report.rows()
    if out_csv is not None:
        write_rows_csv(rows, OCCLUSION_COLUMNS, out_csv)
    if echo is not None:
        fmt = lambda v: "-" if v is None else (v if isinstance(v, str) else f"{v:.4g}")
        echo("\n".join("  ".join(fmt(r[c]).rjust(12) for c in OCCLUSION_COLUMNS)
                       for r in [dict(zip(OCCLUSION_COLUMNS, OCCLUSION_COLUMNS))] + rows))
    return report


# -- prediction overlay -------------------------------------------------------

SPLAT_RADIUS_PX = 2
SPLAT_COLOR = (0, 255, 0)


def splat_points(image: np.ndarray, uv: np.ndarray, valid: np.ndarray,
                 radius: int = SPLAT_RADIUS_PX, color=SPLAT_COLOR) -> np.ndarray:
    """Draw a filled disk at each valid pixel position; returns a copy."""
    out = np.array(image, copy=True)
    H, W = out.shape[:2]
    offs = [(dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)
            if dx * dx + dy * dy <= radius * radius]
    centers = np.rint(uv[valid]).astype(int)
    for dy, dx in offs:
        r, c = centers[:, 1] + dy, centers[:, 0] + dx
        keep = (r >= 0) & (r < H) & (c >= 0) & (c < W)
        out[r[keep], c[keep]] = color
    return out


def overlay_projection(image, cloud_m: np.ndarray, pose: Pose, intrinsics: CameraIntrinsics):
    """(overlay image, uv, valid) for a metric cloud posed into the camera."""
    uv, valid = project_points(cloud_m, pose, intrinsics)
    uv, valid = uv.numpy(), valid.numpy()
    return splat_points(image, uv, valid), uv, valid


def predict_and_overlay(checkpoint, image_path, intrinsics: CameraIntrinsics, out_dir) -> dict:
    """Zero-code prediction on one image, written as overlay.png, cloud.ply and pose.json.

    The predicted canonical cloud is brought to meters with the mean
    training scale stored in the checkpoint.
    """
    model, ck = load_model(checkpoint)
    image = read_png(image_path)
    cfg = model.cfg
    if image.shape[:2] != (cfg.image_height, cfg.image_width):
        raise DataError(f"{image_path}: image is {image.shape[1]}x{image.shape[0]}, model expects "
                        f"{cfg.image_width}x{cfg.image_height}")
    if (intrinsics.height, intrinsics.width) != image.shape[:2]:
        raise DataError("intrinsics image size does not match the image")
    x = torch.from_numpy(image.copy()).permute(2, 0, 1).unsqueeze(0).float() / 255.0
    pred = model.forward_infer(x)
    cloud = pred.pc_pred[0].double().numpy()
    pose = Pose.from_quat(pred.quat[0].double().numpy(), pred.translation[0].double().numpy())
    scale = float(ck.state.get("mean_scale_m", 1.0))
    overlay, uv, valid = overlay_projection(image, cloud * scale, pose, intrinsics)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_png(out / "overlay.png", overlay)
    write_ply(out / "cloud.ply", cloud)
    camera_pts = transform_points(cloud * scale, pose).numpy()
    write_ply(out / "cloud_camera.ply", camera_pts)
    info = {"quat_wxyz": pose.quat.tolist(), "translation_m": pose.translation.tolist(),
            "scale_m": scale, "has_pose": bool(cfg.has_pose), "points_in_image": int(valid.sum())}
    (out / "pose.json").write_text(json.dumps(info, indent=1) + "\n")
    return {"overlay": overlay, "uv": uv, "valid": valid, "cloud": cloud, "pose": pose, "scale_m": scale}
