"""Run configuration: dataclasses plus TOML loading with field-level diagnostics."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .losses import MixParams


@dataclass
class LossWeights:
    w_q: float = 1.0
    w_d: float = 1.0
    w_z: float = 1.0
    w_s: float = 1.0
    w_t_max: float = 1.0
    # 0 means "half of total_steps"
    w_t_ramp_steps: int = 0
    # false forces lambda' = 1 in the source intra-domain term
    source_mixup: bool = True
    # "mixed" (source- vs target-dominant mixes) or "raw" (unmixed features)
    adv_features: str = "mixed"


@dataclass
class TrainSpec:
    batch_size: int = 64
    total_steps: int = 2000
    optimizer: str = "adam"
    lr: float = 3e-4
    mu: float = 1.0
    # "constant" or "ramp": mu * (2 / (1 + exp(-10 p)) - 1), p = step / total_steps
    mu_schedule: str = "constant"
    seed: int = 0
    eval_every: int = 0
    checkpoint_every: int = 0
    dtype: str = "float32"


@dataclass
class ModelSpec:
    hidden_dims: List[int] = field(default_factory=lambda: [64, 64])
    embed_dim: int = 32
    disc_hidden: int = 128


@dataclass
class AugmentSpec:
    jitter_sigma: float = 0.0
    scale_low: float = 1.0
    scale_high: float = 1.0
    shift_pixels: int = 0
    flip_p: float = 0.0


@dataclass
class DataSpec:
    generator: str = "two-moons"
    # two-moons
    n: int = 2000
    noise: float = 0.1
    source_rotation: float = 0.0
    target_rotation: float = 40.0
    # mini-digits
    n_per_class: int = 100
    resolution: int = 16
    target_angle: float = 40.0
    # shifted-blobs
    means: List[List[float]] = field(default_factory=lambda: [[-1.0, 0.0], [1.0, 0.0]])
    cov: List[List[float]] = field(default_factory=lambda: [[0.25, 0.0], [0.0, 0.25]])
    shift: List[float] = field(default_factory=lambda: [0.0, 1.5])
    # pre-generated datasets (gen-data output); override the generator when set
    source_dir: str = ""
    target_dir: str = ""
    # -1 ties the data seed to the training seed
    seed: int = -1


@dataclass
class IimtConfig:
    loss: LossWeights = field(default_factory=LossWeights)
    mix: MixParams = field(default_factory=MixParams)
    train: TrainSpec = field(default_factory=TrainSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    data: DataSpec = field(default_factory=DataSpec)
    augment: AugmentSpec = field(default_factory=AugmentSpec)

    @property
    def ramp_steps(self) -> int:
        return self.loss.w_t_ramp_steps or max(1, self.train.total_steps // 2)

    def validate(self) -> None:
        lw = self.loss
        for name in ("w_q", "w_d", "w_z", "w_s", "w_t_max"):
            if getattr(lw, name) < 0:
                raise ConfigError(f"loss.{name} must be non-negative")
        if lw.w_t_ramp_steps < 0:
            raise ConfigError("loss.w_t_ramp_steps must be non-negative")
        if self.train.total_steps > 0 and self.ramp_steps > self.train.total_steps:
            raise ConfigError("loss.w_t_ramp_steps must not exceed train.total_steps")
        if lw.adv_features not in ("mixed", "raw"):
            raise ConfigError("loss.adv_features must be 'mixed' or 'raw'")
        self.mix.validate()
        t = self.train
        if t.batch_size < 1:
            raise ConfigError("train.batch_size must be positive")
        if t.total_steps < 0:
            raise ConfigError("train.total_steps must be non-negative")
        if t.optimizer not in ("adam", "sgd"):
            raise ConfigError("train.optimizer must be 'adam' or 'sgd'")
        if t.lr <= 0:
            raise ConfigError("train.lr must be positive")
        if t.mu < 0:
            raise ConfigError("train.mu must be non-negative")
        if t.mu_schedule not in ("constant", "ramp"):
            raise ConfigError("train.mu_schedule must be 'constant' or 'ramp'")
        if t.dtype not in ("float32", "float64"):
            raise ConfigError("train.dtype must be 'float32' or 'float64'")
        if any(d <= 0 for d in [*self.model.hidden_dims, self.model.embed_dim, self.model.disc_hidden]):
            raise ConfigError("model layer widths must be positive")
        if self.augment.scale_low > self.augment.scale_high:
            raise ConfigError("augment.scale_low must not exceed augment.scale_high")

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def replace(self, **sections) -> "IimtConfig":
        """Copy with per-section field overrides, e.g. ``replace(loss={"w_q": 0})``."""
        out = config_from_dict(self.to_dict())
        for section, overrides in sections.items():
            setattr(out, section, dataclasses.replace(getattr(out, section), **overrides))
        return out


_SECTION_TYPES = {
    "loss": LossWeights,
    "mix": MixParams,
    "train": TrainSpec,
    "model": ModelSpec,
    "data": DataSpec,
    "augment": AugmentSpec,
}


def _coerce(section: str, name: str, default: Any, value: Any) -> Any:
    where = f"{section}.{name}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return value
    return value


def config_from_dict(raw: Dict[str, Any]) -> IimtConfig:
    cfg = IimtConfig()
    for section, values in raw.items():
        if section not in _SECTION_TYPES:
            raise ConfigError(f"unknown section [{section}] (expected one of {sorted(_SECTION_TYPES)})")
        if not isinstance(values, dict):
            raise ConfigError(f"[{section}] must be a table")
        target = getattr(cfg, section)
        known = {f.name for f in dataclasses.fields(target)}
        for name, value in values.items():
            if name not in known:
                raise ConfigError(f"{section}.{name}: unknown field (expected one of {sorted(known)})")
            setattr(target, name, _coerce(section, name, getattr(target, name), value))
    return cfg


def load_config(path) -> IimtConfig:
    """Read a TOML config; syntax errors report the line, bad values the field."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = config_from_dict(raw)
    cfg.validate()
    return cfg


def dump_config(cfg: IimtConfig) -> str:
    """Render as TOML (flat sections, scalar and list values only)."""
    lines = []
    for section, values in cfg.to_dict().items():
        lines.append(f"[{section}]")
        for key, value in values.items():
            lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")
    return "\n".join(lines)


def _toml_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot render {v!r} as TOML")
