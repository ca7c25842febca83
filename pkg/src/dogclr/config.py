"""Experiment configuration: typed sections, defaults, overrides and validation."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .dga import AugmentationConfig
from .dwkrm import ThetaSpec
from .encoder import EncoderConfig
from .errors import ConfigError
from .skeleton import STREAMS, TOY_TEMPLATES


@dataclass
class ToyConfig:
    classes: list = field(default_factory=lambda: ["wave", "kick", "jump", "still"])
    per_class: int = 100
    test_per_class: int | None = 50
    T: int = 32
    V: int = 9
    noise_sigma: float = 0.02


@dataclass
class DataConfig:
    dir: str = "data/toy"
    seed: int = 0  # toy generation seed, independent of the training seed
    toy: ToyConfig = field(default_factory=ToyConfig)
    normalize: str = "none"


@dataclass
class TrainConfig:
    stream: str = "joint"
    epochs: int = 300
    batch_size: int = 128
    lr: float | None = None  # None: 0.1 * batch_size / 128
    sgd_momentum: float = 0.9
    weight_decay: float = 1e-4
    schedule: str = "cosine"
    temperature: float = 0.2
    momentum: float = 0.99
    bank_capacity: int = 32768
    probe: str = "key"
    use_dwkrm: bool = True
    use_dga: bool = True
    use_edgrq: bool = True
    theta: dict = field(default_factory=lambda: {"mode": "quantile", "value": 0.7})
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    augment: AugmentationConfig = field(default_factory=AugmentationConfig)
    seed: int = 0
    max_steps: int | None = None
    checkpoint_every: int = 10

    @property
    def base_lr(self) -> float:
        return self.lr if self.lr is not None else 0.1 * self.batch_size / 128

    @property
    def toggles(self) -> dict:
        return {"dwkrm": self.use_dwkrm, "dga": self.use_dga, "edgrq": self.use_edgrq}

    @property
    def theta_spec(self) -> ThetaSpec:
        return ThetaSpec.coerce(self.theta)


@dataclass
class EvalConfig:
    protocols: list = field(default_factory=lambda: ["linear", "knn"])
    linear_epochs: int = 100
    linear_lr: float = 0.1
    linear_momentum: float = 0.9
    linear_batch_size: int = 256
    linear_milestones: list = field(default_factory=lambda: [0.6, 0.8])
    knn_k: int = 20
    knn_weighted: bool = False
    streams: list | None = None
    stream_weights: list | None = None
    checkpoint: str | None = None
    figures: bool = True
    scatter_method: str = "tsne"
    seed: int = 0


@dataclass
class AblateConfig:
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    epochs: int | None = None
    embedding_dims: list = field(default_factory=lambda: [128, 256, 512, 1024])
    run_embedding_sweep: bool = False


@dataclass
class VisualizeConfig:
    num_samples: int = 4
    frame: int | None = None
    checkpoint: str | None = None


@dataclass
class ExperimentConfig:
    name: str = "dogclr"
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)
    visualize: VisualizeConfig = field(default_factory=VisualizeConfig)


# ---------------------------------------------------------------- dict <-> dataclass


def to_dict(obj):
    if dataclasses.is_dataclass(obj):
        if hasattr(obj, "to_dict"):
            return obj.to_dict()
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_dict(v) for v in obj]
    if isinstance(obj, dict):
        return {k: to_dict(v) for k, v in obj.items()}
    return obj


def _is_dataclass_type(tp):
    return isinstance(tp, type) and dataclasses.is_dataclass(tp)


def _strip_optional(tp):
    if typing.get_origin(tp) in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return args[0] if len(args) == 1 else tp, True
    return tp, False


def from_dict(cls, data, path=""):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping", path or None)
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"unknown config key {path + key!r}", path + key)
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        tp, optional = _strip_optional(hints[f.name])
        fpath = path + f.name
        if value is None and optional:
            kwargs[f.name] = None
        elif _is_dataclass_type(tp):
            kwargs[f.name] = from_dict(tp, value, fpath + ".")
        else:
            kwargs[f.name] = _coerce(tp, value, fpath)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path.rstrip('.') or 'config'}: {e}", path.rstrip(".") or None) from None


def _coerce(tp, value, path):
    origin = typing.get_origin(tp) or tp
    try:
        if origin is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if origin is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            return int(value)
        if origin is float:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if origin is str:
            if not isinstance(value, str):
                raise TypeError
            return value
        if origin in (list, tuple):
            if not isinstance(value, (list, tuple)):
                raise TypeError
            return list(value) if origin is list else tuple(value)
        if origin is dict:
            if not isinstance(value, dict):
                raise TypeError
            return dict(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected {getattr(origin, '__name__', origin)}, got {value!r}", path) from None
    return value


# ---------------------------------------------------------------- loading and validation


def parse_override(item: str):
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value", item)
    key, raw = item.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def apply_overrides(data: dict, overrides) -> dict:
    data = json.loads(json.dumps(data))
    for key, value in overrides:
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot set {key}: {p} is not a section", key)
        node[parts[-1]] = value
    return data


def read_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}", "config") from None
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot parse config {path}: {e}", "config") from None
    return data or {}


def load_config(path=None, overrides=(), seed=None) -> ExperimentConfig:
    data = read_config_file(path) if path else {}
    data = apply_overrides(data, list(overrides))
    if seed is not None:
        data["seed"] = seed
    cfg = from_dict(ExperimentConfig, data)
    # the experiment seed drives training unless train.seed was set explicitly
    if "seed" not in (data.get("train") or {}):
        cfg.train.seed = cfg.seed
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    t = cfg.train
    checks = [
        (t.stream in STREAMS, "train.stream", f"must be one of {STREAMS}"),
        (t.epochs >= 0, "train.epochs", "must be >= 0"),
        (t.batch_size >= 2, "train.batch_size", "must be >= 2"),
        (t.temperature > 0, "train.temperature", "must be > 0"),
        (0.0 <= t.momentum <= 1.0, "train.momentum", "must lie in [0, 1]"),
        (t.bank_capacity >= 0, "train.bank_capacity", "must be >= 0"),
        (not (t.use_edgrq and t.bank_capacity < 1), "train.bank_capacity",
         "edgrq replacement needs a bank capacity of at least 1"),
        (t.probe in ("key", "batch_mean"), "train.probe", "must be key or batch_mean"),
        (t.schedule in ("cosine", "constant"), "train.schedule", "must be cosine or constant"),
        (t.max_steps is None or t.max_steps >= 0, "train.max_steps", "must be >= 0"),
        (t.checkpoint_every >= 1, "train.checkpoint_every", "must be >= 1"),
        (t.lr is None or t.lr > 0, "train.lr", "must be > 0"),
        (cfg.data.normalize in ("none", "center_root"), "data.normalize", "must be none or center_root"),
        (cfg.eval.knn_k >= 1, "eval.knn_k", "must be >= 1"),
        (set(cfg.eval.protocols) <= {"linear", "knn"}, "eval.protocols", "only linear and knn exist"),
        (cfg.eval.linear_epochs >= 1, "eval.linear_epochs", "must be >= 1"),
        (cfg.eval.scatter_method in ("tsne", "pca"), "eval.scatter_method", "must be tsne or pca"),
        (cfg.eval.streams is None or set(cfg.eval.streams) <= set(STREAMS), "eval.streams",
         f"entries must be in {STREAMS}"),
        (cfg.visualize.num_samples >= 1, "visualize.num_samples", "must be >= 1"),
        (len(cfg.ablate.seeds) >= 1, "ablate.seeds", "needs at least one seed"),
    ]
    for ok, fld, msg in checks:
        if not ok:
            raise ConfigError(f"{fld} {msg}", fld)
    toy = cfg.data.toy
    for i, name in enumerate(toy.classes):
        if name not in TOY_TEMPLATES:
            raise ConfigError(
                f"data.toy.classes[{i}]: unknown template {name!r}; known: {', '.join(TOY_TEMPLATES)}",
                f"data.toy.classes[{i}]",
            )
    if toy.per_class < 1:
        raise ConfigError("data.toy.per_class must be >= 1", "data.toy.per_class")
    if toy.V < 5:
        raise ConfigError("data.toy.V must be >= 5", "data.toy.V")
    try:
        t.theta_spec
    except ValueError as e:
        raise ConfigError(f"train.theta: {e}", "train.theta") from None
    if cfg.eval.stream_weights is not None:
        streams = cfg.eval.streams or [t.stream]
        if len(cfg.eval.stream_weights) != len(streams):
            raise ConfigError("eval.stream_weights needs one weight per stream", "eval.stream_weights")
    return cfg


def config_hash(obj) -> str:
    blob = json.dumps(to_dict(obj), sort_keys=True).encode()
    return hashlib.sha1(blob).hexdigest()[:10]


def pretrain_identity(cfg: ExperimentConfig) -> dict:
    """The parts of a config that determine a pretraining run."""
    train = to_dict(cfg.train)
    train.pop("max_steps")
    train.pop("checkpoint_every")
    return {"data": to_dict(cfg.data), "train": train}
