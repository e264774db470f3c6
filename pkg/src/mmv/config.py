"""Run configuration: one nested document covering every section.

Files may be TOML or JSON. Precedence is ``--set`` overrides, then the file,
then dataclass defaults. Unknown keys are rejected at every level.
"""
from __future__ import annotations

import dataclasses
import json
import sys
from dataclasses import dataclass, field

from .data import AugmentConfig, WorldSpec
from .deflation import DeflationJob
from .encoders import EncoderConfig
from .errors import ConfigError, MMVError
from .evaluation import EvalSettings, ProbeConfig
from .graphs import GraphConfig
from .losses import LOSS_PRESETS, LossConfig

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - depends on interpreter
    import tomli as tomllib


@dataclass
class TrainSettings:
    batch_size: int = 32
    data_seed: int = 0
    pool_size: int = 0  # 0: fresh samples every step; >0: draw from a fixed pool
    checkpoint_every: int = 500
    corpus: str | None = None  # optional corpus file used instead of the generator


SECTIONS = {
    "world": WorldSpec,
    "encoder": EncoderConfig,
    "graph": GraphConfig,
    "loss": LossConfig,
    "schedule": None,  # filled below to avoid an import cycle with train
    "train": TrainSettings,
    "augment": AugmentConfig,
    "probe": ProbeConfig,
    "eval": EvalSettings,
    "deflate": DeflationJob,
}


def _schedule_cls():
    from .train import Schedule

    return Schedule


@dataclass
class RunConfig:
    world: WorldSpec = field(default_factory=WorldSpec)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    schedule: object = field(default_factory=lambda: _schedule_cls()())
    train: TrainSettings = field(default_factory=TrainSettings)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    eval: EvalSettings = field(default_factory=EvalSettings)
    deflate: DeflationJob = field(default_factory=DeflationJob)
    seed: int = 0
    output_dir: str = "runs/default"
    loss_preset: str | None = None  # "ht-like" / "ht+as-like" override lambda_va, lambda_vt

    def __post_init__(self):
        if self.loss_preset is not None:
            if self.loss_preset not in LOSS_PRESETS:
                raise ConfigError(f"unknown loss_preset {self.loss_preset!r}")
            va, vt = LOSS_PRESETS[self.loss_preset]
            self.loss = dataclasses.replace(self.loss, lambda_va=va, lambda_vt=vt)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("configuration root must be a table/object")
        kw = {}
        for key, value in doc.items():
            sec = _section_cls(key)
            if sec is not None:
                kw[key] = _build(sec, value, key)
            elif key in ("seed", "output_dir", "loss_preset"):
                kw[key] = value
            else:
                raise ConfigError(f"unknown configuration key {key!r}")
        try:
            return cls(**kw)
        except MMVError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _section_cls(key):
    if key == "schedule":
        return _schedule_cls()
    return SECTIONS.get(key)


def _build(cls, value, where):
    if not isinstance(value, dict):
        raise ConfigError(f"section {where!r} must be a table/object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(value) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    try:
        return cls(**value)
    except MMVError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}]: {exc}") from exc


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def parse_value(text: str):
    """``--set`` values are JSON literals when they parse, plain strings otherwise."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict, overrides) -> dict:
    doc = json.loads(json.dumps(doc))
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = doc
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-table value")
        node[parts[-1]] = parse_value(raw)
    return doc


def read_document(path) -> dict:
    path = str(path)
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.endswith(".json"):
            return json.loads(raw)
        return tomllib.loads(raw.decode())
    except (json.JSONDecodeError, tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_config(path=None, overrides=()) -> RunConfig:
    doc = read_document(path) if path else {}
    return RunConfig.from_dict(apply_overrides(doc, overrides))
