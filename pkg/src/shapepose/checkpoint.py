"""Single-file checkpoint archive.

An uncompressed zip holding:

  format_version      ASCII integer
  model_config.txt    ModelConfig as key = value text
  train_config.txt    TrainConfig as key = value text
  params.bin          named float32 arrays
  optimizer.bin       Adam moments and step counts, named "<param>/<slot>"
  rng.bin             torch generator state bytes
  state.json          epoch, batch index within the epoch, global step, mean scale_m

Array files are a sequence of records, all integers little-endian uint32:
[name length][UTF-8 name][ndim][dims ...][float32 little-endian data].
"""
from __future__ import annotations

import io
import json
import struct
import zipfile
from dataclasses import dataclass

import numpy as np
import torch

from .config import (ConfigError, DataError, ModelConfig, TrainConfig, model_config_from_kv,
                     parse_kv, to_kv, train_config_from_kv)
from .nets.model import ShapePoseNet

FORMAT_VERSION = 1
ADAM_SLOTS = ("step", "exp_avg", "exp_avg_sq")


def encode_arrays(arrays: dict) -> bytes:
    buf = io.BytesIO()
    for name, arr in arrays.items():
        a = np.asarray(arr, dtype="<f4")
        raw = name.encode()
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", a.ndim))
        buf.write(struct.pack(f"<{a.ndim}I", *a.shape))
        buf.write(np.ascontiguousarray(a).tobytes())
    return buf.getvalue()


def decode_arrays(data: bytes) -> dict:
    out, pos = {}, 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise ValueError("truncated array record")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    while pos < len(data):
        (n,) = struct.unpack("<I", take(4))
        name = take(n).decode()
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape).copy()
    return out


@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig | None
    params: dict
    optimizer: dict
    rng_state: bytes
    state: dict


def adam_state_arrays(model: torch.nn.Module, optimizer: torch.optim.Optimizer) -> dict:
    by_param = optimizer.state
    out = {}
    for name, p in model.named_parameters():
        st = by_param.get(p)
        if not st:
            continue
        for slot in ADAM_SLOTS:
            out[f"{name}/{slot}"] = st[slot].detach().cpu().numpy()
    return out


def restore_adam_state(model, optimizer, arrays: dict) -> None:
    sd = optimizer.state_dict()
    names = [n for n, _ in model.named_parameters()]
    state = {}
    for i, name in enumerate(names):
        if f"{name}/step" not in arrays:
            continue
        state[i] = {slot: torch.from_numpy(arrays[f"{name}/{slot}"]) for slot in ADAM_SLOTS}
    sd["state"] = state
    optimizer.load_state_dict(sd)


def save_checkpoint(path, model, optimizer=None, train_config: TrainConfig | None = None,
                    state: dict | None = None, rng_state: bytes = b"") -> None:
    params = {n: p.detach().cpu().numpy() for n, p in model.named_parameters()}
    opt = adam_state_arrays(model, optimizer) if optimizer is not None else {}
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as z:
        z.writestr("format_version", str(FORMAT_VERSION))
        z.writestr("model_config.txt", to_kv(model.cfg) + "\n")
        z.writestr("train_config.txt", (to_kv(train_config) + "\n") if train_config else "")
        z.writestr("params.bin", encode_arrays(params))
        z.writestr("optimizer.bin", encode_arrays(opt))
        z.writestr("rng.bin", bytes(rng_state))
        z.writestr("state.json", json.dumps(state or {}, sort_keys=True))


def read_checkpoint(path) -> Checkpoint:
    try:
        with zipfile.ZipFile(path) as z:
            version = int(z.read("format_version").decode())
            if version != FORMAT_VERSION:
                raise ConfigError(f"{path}: unsupported checkpoint format {version}")
            model_cfg = model_config_from_kv(parse_kv(z.read("model_config.txt").decode()))
            tc_text = z.read("train_config.txt").decode()
            train_cfg = train_config_from_kv(parse_kv(tc_text)) if tc_text.strip() else None
            return Checkpoint(model_cfg, train_cfg, decode_arrays(z.read("params.bin")),
                              decode_arrays(z.read("optimizer.bin")), z.read("rng.bin"),
                              json.loads(z.read("state.json")))
    except ConfigError:
        raise
    except (OSError, KeyError, ValueError, zipfile.BadZipFile) as e:
        raise DataError(f"{path}: unreadable checkpoint ({e})") from e


def load_params(model: torch.nn.Module, params: dict) -> None:
    own = dict(model.named_parameters())
    if set(own) != set(params):
        missing, extra = sorted(set(own) - set(params)), sorted(set(params) - set(own))
        raise ConfigError(f"checkpoint parameters do not match the model "
                          f"(missing {missing[:3]}, unexpected {extra[:3]})")
    with torch.no_grad():
        for name, p in own.items():
            arr = params[name]
            if tuple(arr.shape) != tuple(p.shape):
                raise ConfigError(f"parameter {name}: checkpoint shape {arr.shape} vs model {tuple(p.shape)}")
            p.copy_(torch.from_numpy(arr))


def load_model(path):
    """(model in eval mode, Checkpoint)."""
    ck = read_checkpoint(path)
    model = ShapePoseNet(ck.model_config)
    load_params(model, ck.params)
    model.eval()
    return model, ck
