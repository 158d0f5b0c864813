"""Ablation driver: one train + evaluate run per variant along one axis."""
from __future__ import annotations

import dataclasses
from pathlib import Path

from .config import ConfigError, TrainConfig
from .data.io import read_manifest
from .data.tensors import load_split
from .evaluate import evaluate_model, write_rows_csv
from .train import train

CODE_SIZES = (32, 64, 128, 256, 512, 1024)
ABLATION_AXES = ("code_size", "pose_head", "fusion", "pc_encoder")
ABLATION_COLUMNS = ("axis", "variant", "steps", "train_shape", "train_kld", "train_pose",
                    "chamfer_mm", "chamfer_canonical", "app_0.2", "app_0.5", "acc_10deg_10cm")


def variants(base: TrainConfig, axis: str) -> list:
    """[(label, TrainConfig)] for one axis; every variant shares seed and dataset."""
    m = base.model
    rep = dataclasses.replace
    if axis == "code_size":
        return [(str(c), rep(base, model=rep(m, code_size=c))) for c in CODE_SIZES]
    if axis == "pose_head":
        no_pose = rep(base, model=rep(m, pose_head_location="none"),
                      loss_weights=rep(base.loss_weights, w_pose=0.0))
        return [
            ("decoder", rep(base, model=rep(m, pose_head_location="decoder"))),
            ("image_encoder", rep(base, model=rep(m, pose_head_location="image_encoder"))),
            ("none", no_pose),
            ("single_network", rep(base, model=rep(m, pose_head_style="single_network"))),
        ]
    if axis == "fusion":
        return [
            ("full", rep(base, model=rep(m, enable_encoder_fusion=True, enable_decoder_fusion=True))),
            ("DisEn", rep(base, model=rep(m, enable_encoder_fusion=False, enable_decoder_fusion=True))),
            ("DisDe", rep(base, model=rep(m, enable_encoder_fusion=True, enable_decoder_fusion=False))),
        ]
    if axis == "pc_encoder":
        return [("on", rep(base, model=rep(m, use_pc_encoder=True))),
                ("off", rep(base, model=rep(m, use_pc_encoder=False)))]
    raise ConfigError(f"unknown ablation axis {axis!r}; choose from {ABLATION_AXES}")


def ablate(base: TrainConfig, axis: str, out_csv=None, eval_split: str | None = None,
           echo=print) -> list:
    """Train and evaluate every variant; returns one row dict per variant."""
    runs = variants(base, axis)
    manifest = read_manifest(base.dataset)
    data = load_split(manifest, "train")
    split = eval_split or base.val_split or ("test" if manifest.split("test") else "train")
    eval_data = data if split == "train" else load_split(manifest, split)
    rows = []
    for label, cfg in runs:
        cfg = dataclasses.replace(cfg, out_dir=str(Path(base.out_dir) / f"{axis}_{label}"))
        result = train(cfg, data=data)
        last = result.runlog.steps[-1]
        ev = evaluate_model(result.model, eval_data, category_order=manifest.categories())
        o = ev.overall
        rows.append({
            "axis": axis, "variant": label, "steps": last["step"],
            "train_shape": last["shape"], "train_kld": last["kld"], "train_pose": last["pose"],
            "chamfer_mm": o.mean_chamfer_mm, "chamfer_canonical": float(ev.chamfer_canonical.mean()),
            "app_0.2": o.app_02, "app_0.5": o.app_05, "acc_10deg_10cm": o.acc_10deg10cm,
        })
        if echo is not None:
            echo(f"{axis}={label}: steps {last['step']}  train shape {last['shape']:.4f}  "
                 f"eval chamfer {o.mean_chamfer_mm:.2f} mm")
    if out_csv is not None:
        write_rows_csv(rows, ABLATION_COLUMNS, out_csv)
    return rows
