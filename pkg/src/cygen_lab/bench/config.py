"""Run configuration: a flat TOML table whose keys mirror :class:`RunConfig`."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .datasets import DATASETS

METHODS = ("cygen", "cygen_pt", "dae", "vae")
SAMPLERS = ("sgld_z", "sgld_x", "gibbs", "ancestral")
DTYPES = ("float32", "float64")


class ConfigError(ValueError):
    """Invalid configuration; the CLI maps it to a usage error."""


@dataclass(frozen=True)
class RunConfig:
    dataset: str = "pinwheel"
    method: str = "cygen_pt"
    n_train: int = 10000
    n_test: int = 2000
    # models
    d_z: int = 2
    dec_hidden: tuple[int, ...] = (16, 16)
    enc_hidden: tuple[int, ...] = (8, 8, 8)
    n_flows: int = 32
    n_householder: int = 2
    sigma2: float = 0.01
    # objective
    w_compat: float = 1e-5
    w_nll: float = 1.0
    beta: float = 1.0
    k_mc: int = 16
    n_compat: int = 250
    probe_kind: str = "rademacher"
    # optimizer; lr 0 means the method default
    lr: float = 0.0
    weight_decay: float = 1e-5
    batch_size: int = 1000
    epochs: int = 800
    pretrain_epochs: int = 200
    pretrain_lr: float = 1e-3
    decoder_lr_factor: float = 0.1
    dtype: str = "float32"
    log_every: int = 100
    n_monitor: int = 250
    # generation and evaluation
    sampler: str = ""
    sgld_eps: float = 3e-4
    sgld_steps: int = 100
    sgld_noise: float = 1.0
    n_samples: int = 10000
    k_mc_eval: int = 1024
    clamp_seed: bool = False
    # bookkeeping
    seed: int = 0
    out_dir: str = "runs/default"
    pretrained: str = ""

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ConfigError(f"unknown dataset {self.dataset!r}; expected one of {DATASETS}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.sampler and self.sampler not in SAMPLERS:
            raise ConfigError(f"unknown sampler {self.sampler!r}; expected one of {SAMPLERS}")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {DTYPES}")
        for name in ("pretrain_lr", "sgld_eps", "sigma2", "decoder_lr_factor"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("lr", "weight_decay", "w_compat", "w_nll", "beta", "sgld_noise"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be nonnegative")
        for name in ("n_train", "batch_size", "k_mc", "n_compat", "sgld_steps", "n_samples", "k_mc_eval", "log_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("epochs", "pretrain_epochs", "n_flows", "n_test", "n_monitor"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.batch_size > self.n_train:
            raise ConfigError("batch_size must not exceed n_train")

    # -- derived -------------------------------------------------------------
    @property
    def learning_rate(self) -> float:
        if self.lr > 0:
            return self.lr
        return 1e-4 if self.method == "dae" else 1e-3

    @property
    def uses_pretraining(self) -> bool:
        return self.method in ("cygen_pt", "dae") and self.pretrain_epochs > 0

    @property
    def sampler_name(self) -> str:
        if self.sampler:
            return self.sampler
        return "ancestral" if self.method == "vae" else "sgld_z"

    @property
    def steps_per_epoch(self) -> int:
        return self.n_train // self.batch_size

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, value):
    if name not in _FIELDS:
        raise ConfigError(f"unknown config key {name!r}")
    default = _FIELDS[name].default
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                if value.lower() not in ("true", "false", "1", "0"):
                    raise ValueError(value)
                return value.lower() in ("true", "1")
            return bool(value)
        if isinstance(default, tuple):
            if isinstance(value, str):
                value = [v for v in value.replace("[", "").replace("]", "").split(",") if v.strip()]
            return tuple(int(v) for v in value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(default, float):
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {name}: {value!r}") from None


def make_config(values: dict) -> RunConfig:
    return RunConfig(**{k: _coerce(k, v) for k, v in values.items()})


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a TOML file (optional) and apply ``overrides`` on top."""
    values = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                values.update(tomllib.load(fh))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    values.update(overrides or {})
    return make_config(values)


def write_config_toml(path, cfg: RunConfig) -> None:
    lines = []
    for k, v in cfg.to_dict().items():
        if isinstance(v, bool):
            lines.append(f"{k} = {'true' if v else 'false'}")
        elif isinstance(v, (int, float)):
            lines.append(f"{k} = {v!r}")
        elif isinstance(v, list):
            lines.append(f"{k} = [{', '.join(str(x) for x in v)}]")
        else:
            lines.append(f"{k} = {json.dumps(v)}")
    Path(path).write_text("\n".join(lines) + "\n")
