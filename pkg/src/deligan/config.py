"""Experiment configuration: YAML on disk, dataclasses in memory."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .nets import ConfigError

CONFIG_VERSION = 1

# fixed ids so each named stream is independent of the others and of call order
STREAMS = {"data": 0, "init": 1, "latent": 2, "pairing": 3, "batch": 4, "eval": 5}


def substream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), STREAMS[name]])


@dataclass
class DataConfig:
    kind: str = "toy"                  # toy | points | mnist
    preset: Optional[str] = "bimodal"  # toy presets; ignored if modes given
    modes: Optional[list] = None
    n: int = 10000
    points: Optional[list] = None
    images: Optional[str] = None
    labels: Optional[str] = None
    per_class: int = 50


@dataclass
class ArchConfig:
    g_hidden: list = field(default_factory=lambda: [32])
    g_activation: str = "relu"
    g_output: str = "none"
    d_hidden: list = field(default_factory=lambda: [32])
    d_activation: str = "leaky_relu"
    slope: float = 0.2
    init: str = "xavier_uniform"
    init_std: float = 0.02


@dataclass
class LatentConfig:
    N: int = 50
    K: int = 2
    sigma0: float = 0.2
    lam: float = 1.0
    prior: str = "uniform"
    per_component: int = 1


@dataclass
class OptimConfig:
    lr_g: float = 1e-3
    lr_d: float = 2e-4
    lr_latent: Optional[float] = None  # None: same as lr_g
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    nonsaturating: bool = False


@dataclass
class TrainConfig:
    iterations: int = 8000
    batch: int = 64
    snapshot_every: int = 100
    checkpoint_every: int = 0
    divergence_threshold: float = 1e6


@dataclass
class EvalConfig:
    splits: int = 10
    pairs: int = 32
    radius_sigmas: float = 3.0


@dataclass
class ExperimentConfig:
    variant: str = "deligan"
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    latent: LatentConfig = field(default_factory=LatentConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    out: Optional[str] = None
    version: int = CONFIG_VERSION

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["latent"]["lambda"] = d["latent"].pop("lam")
        return d


_SECTIONS = {"data": DataConfig, "arch": ArchConfig, "latent": LatentConfig,
             "optim": OptimConfig, "train": TrainConfig, "eval": EvalConfig}


def _line_of(node: Any, key: str) -> str:
    # yaml.compose gives us marks; used only to decorate error messages
    if isinstance(node, yaml.MappingNode):
        for k, _ in node.value:
            if k.value == key:
                return f"line {k.start_mark.line + 1}: "
    return ""


def _build_section(cls, raw: Any, where: str, node: Any):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{_line_of(node, where)}section '{where}' must be a mapping")
    raw = dict(raw)
    if cls is LatentConfig and "lambda" in raw:
        raw["lam"] = raw.pop("lambda")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        sub = _child(node, where)
        key = unknown[0] if unknown[0] != "lam" else "lambda"
        raise ConfigError(f"{_line_of(sub, key)}unknown field '{where}.{key}'")
    return cls(**raw)


def _child(node: Any, key: str) -> Any:
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            if k.value == key:
                return v
    return None


def parse_config(text: str, base_dir: Optional[Path] = None) -> ExperimentConfig:
    """Parse and validate a YAML experiment description.

    Raises ConfigError with a ``line N:`` prefix where the location is known.
    """
    try:
        node = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f"line {mark.line + 1}: " if mark is not None else ""
        raise ConfigError(f"{where}malformed YAML: {getattr(e, 'problem', e)}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    if raw.get("version") != CONFIG_VERSION:
        raise ConfigError(f"{_line_of(node, 'version')}field 'version' must be {CONFIG_VERSION}")
    if "seed" not in raw or not isinstance(raw["seed"], int) or isinstance(raw["seed"], bool):
        raise ConfigError(f"{_line_of(node, 'seed')}field 'seed' is required and must be an integer")
    top = {"variant", "seed", "out", "version"} | set(_SECTIONS)
    for key in raw:
        if key not in top:
            raise ConfigError(f"{_line_of(node, key)}unknown field '{key}'")
    kwargs = {k: raw[k] for k in ("variant", "seed", "out", "version") if k in raw}
    for name, cls in _SECTIONS.items():
        try:
            kwargs[name] = _build_section(cls, raw.get(name), name, node)
        except TypeError as e:
            raise ConfigError(f"{_line_of(node, name)}section '{name}': {e}") from None
    cfg = ExperimentConfig(**kwargs)
    if base_dir is not None:
        for attr in ("images", "labels"):
            p = getattr(cfg.data, attr)
            if p is not None and not Path(p).is_absolute():
                setattr(cfg.data, attr, str(base_dir / p))
    validate(cfg, node)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    try:
        return parse_config(text, base_dir=path.parent)
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}") from None


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def validate(cfg: ExperimentConfig, node: Any = None) -> None:
    from .gan import VARIANTS

    def fail(section: str, key: str, msg: str):
        where = _line_of(_child(node, section), key) if section else _line_of(node, key)
        raise ConfigError(f"{where}{msg}")

    if cfg.variant not in VARIANTS:
        fail("", "variant", f"unknown variant {cfg.variant!r}; expected one of {', '.join(VARIANTS)}")
    d = cfg.data
    if d.kind not in ("toy", "points", "mnist"):
        fail("data", "kind", f"unknown data kind {d.kind!r}")
    if d.kind == "toy" and d.modes is None and d.preset not in ("unimodal", "bimodal"):
        fail("data", "preset", f"unknown toy preset {d.preset!r}")
    if d.kind == "points" and not d.points:
        fail("data", "points", "data.points must list at least one point")
    if d.kind == "mnist":
        for attr in ("images", "labels"):
            p = getattr(d, attr)
            if p is None or not Path(p).exists():
                fail("data", attr, f"data.{attr}: file not found: {p}")
    lat = cfg.latent
    if lat.N < 1 or lat.K < 1:
        fail("latent", "N" if lat.N < 1 else "K", "latent.N and latent.K must be >= 1")
    if lat.sigma0 <= 0:
        fail("latent", "sigma0", "latent.sigma0 must be positive")
    if lat.lam < 0:
        fail("latent", "lambda", "latent.lambda must be >= 0")
    if cfg.train.iterations < 0:
        fail("train", "iterations", "train.iterations must be >= 0")
    if cfg.train.batch < 1:
        fail("train", "batch", "train.batch must be >= 1")
