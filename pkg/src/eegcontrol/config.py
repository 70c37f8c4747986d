"""Declarative run configuration: one YAML file plus ``section.key=value`` overrides."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional, Sequence

import yaml

from .data.records import DATASET_NAMES
from .diffusion.backbone import BACKBONE_KINDS
from .errors import ConfigurationError
from .projection import ProjectionConfig

OPTIMIZERS = ("adam",)


@dataclass
class DatasetSection:
    name: str = "synthetic"
    root: str = "data"
    split: str = "train"
    eval_split: str = "test"
    subjects: Optional[List[int]] = None
    image_size: Optional[int] = None


@dataclass
class BackboneSection:
    kind: str = "toy"
    path: str = "backbone.pt"
    vae_steps: int = 800
    unet_steps: int = 2000
    width: int = 32


@dataclass
class DecoderSection:
    path: str = "decoder.pt"
    epochs: int = 30
    hidden: int = 128


@dataclass
class ClassifierSection:
    path: str = "classifier.pt"
    steps: int = 300
    n_way: int = 50
    k: int = 1


@dataclass
class ProjectionSection:
    channel_widths: List[int] = field(default_factory=lambda: [320, 640, 1280, 2560])
    strides: List[int] = field(default_factory=lambda: [5, 2, 2, 2])
    kernel_size: int = 3
    target_latent_shape: List[int] = field(default_factory=lambda: [4, 64, 64])

    def build(self) -> ProjectionConfig:
        try:
            return ProjectionConfig(tuple(self.channel_widths), tuple(self.strides), self.kernel_size,
                                    tuple(self.target_latent_shape))
        except ValueError as exc:
            raise ConfigurationError(f"projection: {exc}") from exc


@dataclass
class TrainingSection:
    seed: Optional[int] = None
    epochs: int = 100
    learning_rate: float = 1e-5
    optimizer: str = "adam"
    batch_size: int = 16
    drop_enabled: bool = True
    checkpoint_every: int = 0
    max_steps: Optional[int] = None


@dataclass
class SamplingSection:
    steps: int = 50
    guess_mode: bool = True
    scales: Optional[List[float]] = None
    guidance: Optional[float] = None
    stochastic: bool = False


@dataclass
class PathsSection:
    checkpoint_dir: str = "checkpoints"
    output_dir: str = "outputs"


_SECTIONS = {
    "dataset": DatasetSection,
    "backbone": BackboneSection,
    "decoder": DecoderSection,
    "classifier": ClassifierSection,
    "projection": ProjectionSection,
    "training": TrainingSection,
    "sampling": SamplingSection,
    "paths": PathsSection,
}


@dataclass
class RunConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    backbone: BackboneSection = field(default_factory=BackboneSection)
    decoder: DecoderSection = field(default_factory=DecoderSection)
    classifier: ClassifierSection = field(default_factory=ClassifierSection)
    projection: ProjectionSection = field(default_factory=ProjectionSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    sampling: SamplingSection = field(default_factory=SamplingSection)
    paths: PathsSection = field(default_factory=PathsSection)
    base_dir: Path = field(default_factory=Path, compare=False)

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path = Path(".")) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigurationError("config must be a mapping")
        unknown = set(raw) - set(_SECTIONS)
        if unknown:
            raise ConfigurationError(f"unknown config section(s): {sorted(unknown)}")
        kwargs = {}
        for name, section_cls in _SECTIONS.items():
            body = raw.get(name) or {}
            if not isinstance(body, dict):
                raise ConfigurationError(f"section {name!r} must be a mapping")
            allowed = {f.name for f in fields(section_cls)}
            bad = set(body) - allowed
            if bad:
                raise ConfigurationError(f"unknown key(s) in {name}: {sorted(bad)}")
            kwargs[name] = section_cls(**body)
        return cls(**kwargs, base_dir=Path(base_dir))

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in _SECTIONS}

    def resolve(self, p: str) -> Path:
        path = Path(p).expanduser()
        return path if path.is_absolute() else self.base_dir / path

    @property
    def seed(self) -> int:
        return int(self.training.seed)

    def validate(self) -> "RunConfig":
        """Check every field that can be checked without touching weights."""
        ds, tr, sm = self.dataset, self.training, self.sampling
        if ds.name not in DATASET_NAMES:
            raise ConfigurationError(f"unknown dataset {ds.name!r}; expected one of {DATASET_NAMES}")
        if self.backbone.kind not in BACKBONE_KINDS:
            raise ConfigurationError(f"unknown backbone kind {self.backbone.kind!r}")
        if tr.seed is None:
            raise ConfigurationError("training.seed is mandatory")
        if not isinstance(tr.seed, int) or isinstance(tr.seed, bool):
            raise ConfigurationError("training.seed must be an integer")
        if tr.optimizer.lower() not in OPTIMIZERS:
            raise ConfigurationError(f"unsupported optimizer {tr.optimizer!r}")
        if tr.epochs < 1 or tr.batch_size < 1:
            raise ConfigurationError("training.epochs and training.batch_size must be >= 1")
        if not tr.learning_rate > 0:
            raise ConfigurationError("training.learning_rate must be positive")
        if tr.max_steps is not None and tr.max_steps < 1:
            raise ConfigurationError("training.max_steps must be >= 1")
        if sm.steps < 1:
            raise ConfigurationError("sampling.steps must be >= 1")
        if self.classifier.n_way < 2 or not 1 <= self.classifier.k < self.classifier.n_way:
            raise ConfigurationError("classifier needs n_way >= 2 and 1 <= k < n_way")
        self.projection.build()
        return self

    def require_paths(self, *names: str) -> None:
        """Fail fast if any named input (``dataset``, ``backbone``, ``decoder``, ``classifier``) is absent."""
        lookup = {
            "dataset": self.dataset.root,
            "backbone": self.backbone.path,
            "decoder": self.decoder.path,
            "classifier": self.classifier.path,
        }
        for name in names:
            p = self.resolve(lookup[name])
            if name == "backbone" and not p.exists():
                from .diffusion.backbone import weights_dir

                if (weights_dir() / self.backbone.path).exists():
                    continue
            if not p.exists():
                raise ConfigurationError(f"{name} path does not exist: {p}")


def parse_override(text: str):
    if "=" not in text:
        raise ConfigurationError(f"override {text!r} must look like section.key=value")
    key, value = text.split("=", 1)
    parts = key.strip().split(".")
    if len(parts) != 2:
        raise ConfigurationError(f"override key {key!r} must be section.key")
    return parts, yaml.safe_load(value)


def apply_overrides(raw: dict, overrides: Sequence[str]) -> dict:
    out = copy.deepcopy(raw)
    for text in overrides:
        (section, key), value = parse_override(text)
        body = out.setdefault(section, {})
        if body is None:
            body = out[section] = {}
        body[key] = value
    return out


def load_config(path, overrides: Sequence[str] = ()) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}") from exc
    cfg = RunConfig.from_dict(apply_overrides(raw, overrides), base_dir=path.parent)
    return cfg.validate()
