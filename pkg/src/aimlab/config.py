"""TOML run configuration with strict key checking."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from aimlab.env import Dataset, load_idx, synthetic_glyphs
from aimlab.errors import ConfigError
from aimlab.trainer import TrainConfig
from aimlab.vqvae import VQConfig

DEFAULT_CONFIG = """\
[vqvae]
K = 64
D = 8
L = 2
beta = 0.25
epochs = 30
lr = 0.002

[train]
episodes = 2000
batch = 16
lr = 0.01
lambda_entropy = 0.01
lambda_reflect = 0.1
strategy = "both"
context_source = "label_parity"
seed = 0
b_value_head = true
opponent_aim_loss = false

[dataset]
kind = "synthetic"
count = 1000
seed = 0

[output]
directory = "runs"
"""

_VQ_KEYS = {"K", "D", "L", "beta", "epochs", "lr", "hidden", "batch_size", "seed", "optimizer", "restart_dead_codes"}
_TRAIN_KEYS = {"episodes", "batch", "lr", "lambda_entropy", "lambda_reflect", "strategy", "context_source", "seed",
               "b_value_head", "opponent_aim_loss", "optimizer", "hidden", "label_dim"}
_DATASET_KEYS = {"kind", "count", "seed", "images", "labels", "limit", "noise"}
_OUTPUT_KEYS = {"directory"}


@dataclass
class DatasetConfig:
    kind: str = "synthetic"
    count: int = 1000
    seed: int = 0
    noise: float = 0.1
    images: str | None = None
    labels: str | None = None
    limit: int | None = None

    def load(self) -> Dataset:
        if self.kind == "synthetic":
            return synthetic_glyphs(self.count, self.seed, self.noise)
        return load_idx(self.images, self.labels, self.limit)


@dataclass
class RunConfig:
    vqvae: VQConfig = field(default_factory=VQConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    output_dir: str = "runs"
    source: str = ""

    def snapshot(self) -> dict:
        return {
            "vqvae": dataclasses.asdict(self.vqvae),
            "train": dataclasses.asdict(self.train),
            "dataset": dataclasses.asdict(self.dataset),
            "output": {"directory": self.output_dir},
        }


def _section(doc: dict, name: str, allowed: set[str]) -> dict:
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    unknown = sorted(set(sec) - allowed)
    if unknown:
        raise ConfigError(f"unknown key {name}.{unknown[0]}")
    return sec


def _typed(section: str, key: str, value, kind):
    if kind is bool:
        ok = isinstance(value, bool)
    elif kind is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, kind)
    if not ok:
        raise ConfigError(f"{section}.{key} must be {kind.__name__}, got {value!r}")
    return value


def _apply(obj, section: str, values: dict, rename: dict | None = None) -> None:
    hints = {f.name: f.type for f in dataclasses.fields(obj)}
    for key, value in values.items():
        attr = (rename or {}).get(key, key)
        kind = {"int": int, "float": float, "bool": bool, "str": str}.get(str(hints[attr]).split(" ")[0], None)
        if kind is not None:
            value = _typed(section, key, value, kind)
        setattr(obj, attr, value)


def parse_config(text: str, base_dir: Path | None = None) -> RunConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from exc
    unknown = sorted(set(doc) - {"vqvae", "train", "dataset", "output"})
    if unknown:
        raise ConfigError(f"unknown section [{unknown[0]}]")
    cfg = RunConfig()
    _apply(cfg.vqvae, "vqvae", _section(doc, "vqvae", _VQ_KEYS))
    _apply(cfg.train, "train", _section(doc, "train", _TRAIN_KEYS), {"batch": "batch_size"})
    ds = _section(doc, "dataset", _DATASET_KEYS)
    for key in ("images", "labels"):
        if key in ds and not isinstance(ds[key], str):
            raise ConfigError(f"dataset.{key} must be a path string")
    _apply(cfg.dataset, "dataset", {k: v for k, v in ds.items() if k not in ("images", "labels", "limit")})
    cfg.dataset.images, cfg.dataset.labels = ds.get("images"), ds.get("labels")
    cfg.dataset.limit = ds.get("limit")
    out = _section(doc, "output", _OUTPUT_KEYS)
    cfg.output_dir = str(out.get("directory", "runs"))

    # the agents and the VQ-VAE must agree on the symbol geometry
    cfg.train.K, cfg.train.D, cfg.train.L = cfg.vqvae.K, cfg.vqvae.D, cfg.vqvae.L
    cfg.vqvae.validate()
    cfg.train.validate()
    if cfg.dataset.kind not in ("synthetic", "idx"):
        raise ConfigError("dataset.kind must be 'synthetic' or 'idx'")
    if cfg.dataset.kind == "idx":
        base = base_dir or Path.cwd()
        for key in ("images", "labels"):
            value = getattr(cfg.dataset, key)
            if not value:
                raise ConfigError(f"dataset.{key} is required when dataset.kind = 'idx'")
            path = Path(value) if Path(value).is_absolute() else base / value
            if not path.exists():
                raise ConfigError(f"dataset.{key}: file not found: {path}")
            setattr(cfg.dataset, key, str(path))
    elif cfg.dataset.count < 1:
        raise ConfigError("dataset.count must be >= 1")
    cfg.source = text
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), path.parent)
