"""Model / training configuration and the flat ``key = value`` file format.

Nested fields use dotted keys (``model.code_size = 64``). Setting the
``model`` key itself to a preset name (``nocs_full``, ``pix3d_full``,
``desk``) loads that preset before dotted overrides are applied.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field, fields

from .losses import LossWeights

POSE_HEAD_LOCATIONS = ("decoder", "image_encoder", "none")
POSE_HEAD_STYLES = ("two_networks", "single_network")
SHAPE_LOSSES = ("chamfer", "emd")
DECODER_WIDTHS = (256, 512, 1024, 2048, 4096)


class ConfigError(ValueError):
    pass


class DataError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    code_size: int = 256
    base_channels: int = 64
    n_points_out: int = 2048
    shape_loss_kind: str = "chamfer"
    pose_head_location: str = "decoder"
    pose_head_style: str = "two_networks"
    enable_encoder_fusion: bool = True
    enable_decoder_fusion: bool = True
    use_pc_encoder: bool = True
    image_height: int = 128
    image_width: int = 128
    n_points_in: int = 2048
    sa_npoints: tuple[int, ...] = (512, 256, 128, 64, 16)
    sa_radii: tuple[float, ...] = (0.1, 0.2, 0.3, 0.45, 0.7)
    sa_kmax: tuple[int, ...] = (32, 32, 32, 32, 16)
    sa_width: int = 64
    pooled_dim: int = 256
    gn_groups: int = 8
    roi_box_cells: float = 3.0
    pose_mlp_widths: tuple[int, ...] = (1024, 512, 256, 128)

    def __post_init__(self):
        if self.code_size < 1:
            raise ConfigError("code_size must be positive")
        if self.shape_loss_kind not in SHAPE_LOSSES:
            raise ConfigError(f"shape_loss_kind must be one of {SHAPE_LOSSES}")
        if self.pose_head_location not in POSE_HEAD_LOCATIONS:
            raise ConfigError(f"pose_head_location must be one of {POSE_HEAD_LOCATIONS}")
        if self.pose_head_style not in POSE_HEAD_STYLES:
            raise ConfigError(f"pose_head_style must be one of {POSE_HEAD_STYLES}")
        if self.image_height % 32 or self.image_width % 32:
            raise ConfigError("image dimensions must be divisible by 32")
        if self.base_channels < 2 or self.base_channels % 2:
            raise ConfigError("base_channels must be an even number >= 2")
        if not (len(self.sa_npoints) == len(self.sa_radii) == len(self.sa_kmax) == 5):
            raise ConfigError("the point encoder needs exactly five SA layers")
        if any(a <= b for a, b in zip(self.sa_npoints, self.sa_npoints[1:])):
            raise ConfigError("sa_npoints must be strictly decreasing")
        if self.sa_npoints[0] > self.n_points_in:
            raise ConfigError("first SA layer samples more points than the input cloud has")
        if len(self.pose_mlp_widths) != 4:
            raise ConfigError("pose MLPs have four hidden layers plus the output layer")
        if self.shape_loss_kind == "emd" and self.n_points_out != self.n_points_in:
            raise ConfigError("EMD needs n_points_out == n_points_in")

    @property
    def encoder_fusion_active(self) -> bool:
        return self.use_pc_encoder and self.enable_encoder_fusion

    @property
    def has_pose(self) -> bool:
        return self.pose_head_location != "none"


MODEL_PRESETS = {
    "nocs_full": ModelConfig(),
    "pix3d_full": ModelConfig(image_height=256, image_width=192, n_points_out=10240),
    "desk": ModelConfig(code_size=64, base_channels=16, n_points_out=512, n_points_in=512,
                        sa_npoints=(256, 128, 64, 32, 8), sa_kmax=(32, 32, 32, 16, 8),
                        sa_width=32),
}


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    lr_milestones: tuple[int, ...] = (100, 130, 160)
    lr_decay_factors: tuple[float, ...] = (0.1, 0.1, 0.1)
    epochs: int = 180
    batch_size: int = 128
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    model: ModelConfig = field(default_factory=ModelConfig)
    dataset: str = ""
    out_dir: str = "run"
    max_steps: int = 0
    ckpt_every: int = 1
    val_split: str = ""

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if len(self.lr_milestones) != len(self.lr_decay_factors):
            raise ConfigError("each lr milestone needs a decay factor")
        if any(a >= b for a, b in zip(self.lr_milestones, self.lr_milestones[1:])):
            raise ConfigError("lr_milestones must be strictly increasing")
        if self.lr_milestones and self.lr_milestones[-1] >= self.epochs:
            raise ConfigError("lr milestones must fall before the last epoch")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")

    def lr_at(self, epoch: int) -> float:
        lr = self.lr
        for m, f in zip(self.lr_milestones, self.lr_decay_factors):
            if m <= epoch:
                lr *= f
        return lr


NOCS_SCHEDULE = dict(lr=1e-4, lr_milestones=(100, 130, 160), lr_decay_factors=(0.1, 0.1, 0.1),
                     epochs=180)
PIX3D_SCHEDULE = dict(lr=1e-4, lr_milestones=(110, 150), lr_decay_factors=(0.5, 0.2), epochs=160)


# -- flat key = value text --------------------------------------------------

def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        out[key] = value
    return out


def _coerce(value: str, tp, key: str):
    origin = typing.get_origin(tp)
    try:
        if tp is bool:
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if tp in (int, float, str):
            return tp(value)
        if origin is tuple:
            item = typing.get_args(tp)[0]
            return tuple(item(v.strip()) for v in value.split(",") if v.strip())
        if typing.get_origin(tp) is typing.Union:  # Optional[...]
            inner = [a for a in typing.get_args(tp) if a is not type(None)][0]
            return None if value.lower() in ("", "none") else _coerce(value, inner, key)
    except ValueError as e:
        raise ConfigError(f"{key}: cannot parse {value!r} as {tp}") from e
    raise ConfigError(f"{key}: unsupported field type {tp}")


def build_dataclass(cls, values: dict[str, str], base=None, prefix: str = ""):
    """Instantiate `cls` from string values; unknown keys are an error."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(prefix + k for k in unknown)}")
    kwargs = {k: _coerce(v, hints[k], prefix + k) for k, v in values.items()}
    try:
        return dataclasses.replace(base, **kwargs) if base is not None else cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def model_config_from_kv(values: dict[str, str], preset: str | None = None) -> ModelConfig:
    if preset is not None and preset not in MODEL_PRESETS:
        raise ConfigError(f"unknown model preset {preset!r}; choose from {sorted(MODEL_PRESETS)}")
    base = MODEL_PRESETS[preset] if preset else None
    return build_dataclass(ModelConfig, values, base=base, prefix="model.")


def train_config_from_kv(values: dict[str, str]) -> TrainConfig:
    top, nested = {}, {"model": {}, "loss_weights": {}}
    for key, value in values.items():
        head, _, rest = key.partition(".")
        if rest:
            if head not in nested:
                raise ConfigError(f"unknown config key {key!r}")
            nested[head][rest] = value
        else:
            top[key] = value
    preset = top.pop("model", None)
    model = model_config_from_kv(nested["model"], preset)
    weights = build_dataclass(LossWeights, nested["loss_weights"], prefix="loss_weights.")
    if "loss_weights" in top:
        raise ConfigError("loss_weights is set through loss_weights.w_* keys")
    hints = typing.get_type_hints(TrainConfig)
    names = {f.name for f in fields(TrainConfig)} - {"model", "loss_weights"}
    unknown = set(top) - names
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {k: _coerce(v, hints[k], k) for k, v in top.items()}
    return TrainConfig(model=model, loss_weights=weights, **kwargs)


def load_train_config(path) -> TrainConfig:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return train_config_from_kv(parse_kv(text))


def to_kv(obj, prefix: str = "") -> str:
    """Serialize a (possibly nested) config dataclass back to flat text."""
    lines = []
    for f in fields(obj):
        v = getattr(obj, f.name)
        if dataclasses.is_dataclass(v):
            lines.append(to_kv(v, prefix + f.name + "."))
            continue
        if isinstance(v, tuple):
            v = ", ".join(repr(x) for x in v)
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{prefix}{f.name} = {v}")
    return "\n".join(lines)
