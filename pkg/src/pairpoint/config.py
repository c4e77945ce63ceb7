"""Training configuration and its YAML file format.

The file is sectioned (``model``, ``data``, ``train``, ``ransac``, ``run``) but
every key is unique, so ``--set steps=10`` and ``--set train.steps=10`` are
equivalent. Unknown keys are rejected.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .errors import ConfigError


@dataclass
class TrainConfig:
    # model
    preset: str = "tiny"
    descriptor_dim: int = 128
    dtype: str = "float32"
    # data
    image_size: int = 128
    mix: dict = field(default_factory=lambda: {"synthetic": 1.0})
    synthetic_kind: str = "both"
    negative_fraction: float = 0.3
    warp: float = 0.15
    baseline: float = 0.6
    jitter: float = 0.1
    folders: dict = field(default_factory=dict)
    # train
    steps: int = 2000
    batch_size: int = 4
    accum: int = 1
    lr_start: float = 1e-3
    lr_end: float = 1e-6
    weight_decay: float = 1e-4
    psi: float = 5.0
    eps: float = -7e-8
    rho: float = 1.0
    mu: float = 1.0
    m: int = 8
    seed: int = 0
    warmup_fraction: float = 1.0 / 3.0
    # ransac (threshold in px at ransac_reference_size, rescaled to image_size)
    ransac_threshold: float = 2.0
    ransac_iters: int = 1000
    ransac_confidence: float = 0.99
    ransac_reference_size: float = 560.0
    # run control, excluded from the config hash
    checkpoint_every: int = 500
    log_every: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.steps <= 0:
            raise ConfigError("steps", "steps must be positive")
        if self.batch_size <= 0 or self.accum <= 0:
            raise ConfigError("batch_size", "batch_size and accum must be positive")
        if not (self.lr_start >= self.lr_end > 0):
            raise ConfigError("lr_start", "need lr_start >= lr_end > 0")
        if not (0 < self.warmup_fraction <= 1):
            raise ConfigError("warmup_fraction", "warmup_fraction must lie in (0, 1]")
        if self.m < 2 or self.image_size % self.m:
            raise ConfigError("m", "cell size must be >= 2 and divide image_size")
        if not (self.ransac_threshold > 0 and self.ransac_reference_size > 0):
            raise ConfigError("ransac_threshold", "ransac_threshold and ransac_reference_size must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype", "dtype must be float32 or float64")

    def digest(self):
        d = {k: v for k, v in asdict(self).items() if k not in RUN_CONTROL}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def to_dict(self):
        return asdict(self)


RUN_CONTROL = {"checkpoint_every", "log_every"}

SECTIONS = {
    "model": ["preset", "descriptor_dim", "dtype"],
    "data": ["image_size", "mix", "synthetic_kind", "negative_fraction", "warp", "baseline", "jitter", "folders"],
    "train": ["steps", "batch_size", "accum", "lr_start", "lr_end", "weight_decay", "psi", "eps", "rho", "mu",
              "m", "seed", "warmup_fraction"],
    "ransac": ["ransac_threshold", "ransac_iters", "ransac_confidence", "ransac_reference_size"],
    "run": ["checkpoint_every", "log_every"],
}
_FIELDS = {f.name: f for f in fields(TrainConfig)}


def _resolve_key(key):
    parts = key.split(".")
    if len(parts) == 2 and parts[0] in SECTIONS and parts[1] in SECTIONS[parts[0]]:
        return parts[1]
    if len(parts) == 1 and key in _FIELDS:
        return key
    raise ConfigError(key)


def _coerce(name, value):
    default = getattr(TrainConfig(), name)
    if isinstance(value, str) and not isinstance(default, str):
        value = yaml.safe_load(value)
    if isinstance(default, bool):
        return bool(value)
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int):
            raise ConfigError(name, f"{name} expects an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if not isinstance(value, (int, float)):
            raise ConfigError(name, f"{name} expects a number, got {value!r}")
        return float(value)
    if isinstance(default, dict) and not isinstance(value, dict):
        raise ConfigError(name, f"{name} expects a mapping, got {value!r}")
    return value


def flatten(doc):
    """Nested YAML document -> flat {field: value}; rejects unknown keys."""
    flat = {}
    for key, value in (doc or {}).items():
        if key in SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(key, f"section {key} must be a mapping")
            for sub, v in value.items():
                flat[_resolve_key(f"{key}.{sub}")] = v
        else:
            flat[_resolve_key(key)] = value
    return flat


def build_config(doc=None, overrides=()):
    """Config from a nested mapping plus ``key=value`` override strings."""
    values = {k: _coerce(k, v) for k, v in flatten(doc).items()}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        name = _resolve_key(key.strip())
        values[name] = _coerce(name, raw.strip())
    return TrainConfig(**values)


def load_config(path=None, overrides=()):
    doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) if path else {}
    return build_config(doc, overrides)


def dump_config(cfg):
    d = cfg.to_dict()
    nested = {sec: {k: d[k] for k in keys} for sec, keys in SECTIONS.items()}
    return yaml.safe_dump(nested, sort_keys=False)
