"""Adam training loop with milestone decay, seeded shuffling and exact resume."""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_params, read_checkpoint, restore_adam_state, save_checkpoint
from .config import ConfigError, ModelConfig, TrainConfig, to_kv
from .data.io import read_manifest
from .data.tensors import SplitData, load_split
from .nets.model import ShapePoseNet

CHECKPOINT_NAME = "checkpoint.ckpt"
RUNLOG_NAME = "runlog.jsonl"


@dataclass
class RunLog:
    """Per-step loss records and per-epoch validation reports."""

    steps: list = field(default_factory=list)
    validation: list = field(default_factory=list)
    path: Path | None = None

    def _write(self, rec):
        if self.path is not None:
            with open(self.path, "a") as f:
                f.write(json.dumps(rec, sort_keys=True) + "\n")

    def log_step(self, epoch, step, lr, losses: dict, wall_s):
        if self.steps and step <= self.steps[-1]["step"]:
            raise RuntimeError(f"step counter went backwards ({step} after {self.steps[-1]['step']})")
        rec = {"kind": "step", "epoch": epoch, "step": step, "lr": lr, "wall_s": wall_s, **losses}
        if not all(math.isfinite(v) for v in losses.values()):
            raise FloatingPointError(f"non-finite loss at step {step}: {losses}")
        self.steps.append(rec)
        self._write(rec)

    def log_validation(self, epoch, rows):
        rec = {"kind": "val", "epoch": epoch, "reports": rows}
        self.validation.append(rec)
        self._write(rec)

    @classmethod
    def read(cls, path) -> "RunLog":
        log = cls()
        for line in Path(path).read_text().splitlines():
            rec = json.loads(line)
            (log.steps if rec["kind"] == "step" else log.validation).append(rec)
        return log


@dataclass
class TrainResult:
    model: ShapePoseNet
    runlog: RunLog
    checkpoint: Path
    state: dict


def check_compatible(model: ModelConfig, data: SplitData) -> None:
    """Raise ConfigError when the dataset cannot feed the model."""
    H, W = data.image_size
    if (H, W) != (model.image_height, model.image_width):
        raise ConfigError(f"dataset images are {H}x{W}, model expects "
                          f"{model.image_height}x{model.image_width}")
    if data.n_points != model.n_points_in:
        raise ConfigError(f"dataset clouds have {data.n_points} points, model.n_points_in is "
                          f"{model.n_points_in}")
    if model.shape_loss_kind == "emd" and data.n_points != model.n_points_out:
        raise ConfigError("EMD needs dataset clouds with n_points_out points")


def make_optimizer(model, lr):
    return torch.optim.Adam(model.parameters(), lr=lr, fused=True)


def train(cfg: TrainConfig, resume=None, data: SplitData | None = None, val_data: SplitData | None = None,
          log_path=None, evaluate_fn=None, progress=None) -> TrainResult:
    """Train from scratch or continue from a checkpoint.

    Every epoch draws its batch order from a generator seeded by
    (seed, epoch), so a resumed run replays exactly the same batches.
    `evaluate_fn(model, val_data)` returns report rows for the RunLog.
    """
    # late in training many activations and Adam moments underflow; denormal
    # arithmetic slows CPU steps by 30% or more
    torch.set_flush_denormal(True)
    try:
        return _train(cfg, resume, data, val_data, log_path, evaluate_fn, progress)
    finally:
        torch.set_flush_denormal(False)


def _train(cfg, resume, data, val_data, log_path, evaluate_fn, progress) -> TrainResult:
    if data is None:
        if not cfg.dataset:
            raise ConfigError("dataset is not set")
        manifest = read_manifest(cfg.dataset)
        data = load_split(manifest, "train")
        if cfg.val_split and val_data is None:
            val_data = load_split(manifest, cfg.val_split)
    check_compatible(cfg.model, data)

    torch.manual_seed(cfg.seed)
    model = ShapePoseNet(cfg.model)
    model.train()
    optimizer = make_optimizer(model, cfg.lr)
    gen = torch.Generator().manual_seed(cfg.seed)
    state = {"epoch": 0, "batch": 0, "step": 0, "mean_scale_m": float(np.mean(data.scale))}

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log = RunLog(path=Path(log_path) if log_path else out / RUNLOG_NAME)
    if resume is not None:
        ck = read_checkpoint(resume)
        if to_kv(ck.model_config) != to_kv(cfg.model):
            raise ConfigError(f"{resume}: model config differs from the training config")
        load_params(model, ck.params)
        restore_adam_state(model, optimizer, ck.optimizer)
        gen.set_state(torch.frombuffer(bytearray(ck.rng_state), dtype=torch.uint8))
        state.update(ck.state)
        if log.path.exists():
            previous = RunLog.read(log.path)
            log.steps = [r for r in previous.steps if r["step"] <= state["step"]]
            log.validation = [r for r in previous.validation if r["epoch"] < state["epoch"]]
            log.path.write_text("".join(json.dumps(r, sort_keys=True) + "\n"
                                        for r in log.steps + log.validation))
    elif log.path.exists():
        log.path.unlink()

    ckpt_path = out / CHECKPOINT_NAME

    def checkpoint():
        save_checkpoint(ckpt_path, model, optimizer, cfg, state, gen.get_state().numpy().tobytes())

    n = len(data)
    n_batches = math.ceil(n / cfg.batch_size)
    t0 = time.perf_counter()
    done = lambda: cfg.max_steps and state["step"] >= cfg.max_steps
    while state["epoch"] < cfg.epochs and not done():
        epoch = state["epoch"]
        lr = cfg.lr_at(epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        while state["batch"] < n_batches and not done():
            b = state["batch"]
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            image, points, scale, quat, trans, intr = data.train_batch(idx)
            optimizer.zero_grad(set_to_none=True)
            _, losses = model.forward_train(image, points, scale, quat, trans, intr, gen,
                                            cfg.loss_weights)
            losses.total.backward()
            optimizer.step()
            state["batch"] += 1
            state["step"] += 1
            log.log_step(epoch, state["step"], lr, losses.as_floats(), time.perf_counter() - t0)
            if progress is not None:
                progress(log.steps[-1])
        if state["batch"] >= n_batches:
            state["epoch"] += 1
            state["batch"] = 0
            if val_data is not None and evaluate_fn is not None:
                model.eval()
                log.log_validation(epoch, evaluate_fn(model, val_data))
                model.train()
            if cfg.ckpt_every and state["epoch"] % cfg.ckpt_every == 0:
                checkpoint()
    checkpoint()
    model.eval()
    return TrainResult(model, log, ckpt_path, dict(state))
