"""Container types for paired EEG/image samples and dataset manifests."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np

DATASET_NAMES = ("eegcvpr40", "thoughtviz", "synthetic")
MANIFEST_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class EEGRecording:
    """One multichannel EEG trial, shape ``(channels, time)``."""

    samples: np.ndarray
    subject_id: int
    class_label: int
    stimulus_ref: str
    sample_rate_hz: float = 128.0
    sample_id: str = ""

    def __post_init__(self):
        arr = np.asarray(self.samples)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"EEG samples must be 2-D (C, L) with C, L >= 1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"EEG recording {self.sample_id!r} contains non-finite values")
        if self.subject_id < 0:
            raise ValueError(f"subject_id must be non-negative, got {self.subject_id}")
        if self.class_label < 0:
            raise ValueError(f"class_label must be non-negative, got {self.class_label}")
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]

    def with_samples(self, samples: np.ndarray, **changes) -> "EEGRecording":
        return replace(self, samples=samples, **changes)


@dataclass(frozen=True)
class PairedSample:
    eeg: EEGRecording
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]

    def __post_init__(self):
        img = np.asarray(self.image)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError(f"image must be (H, W, 3), got {img.shape}")

    @property
    def sample_id(self) -> str:
        return self.eeg.sample_id


@dataclass
class DatasetManifest:
    dataset_name: str
    num_classes: int
    channels: int
    window_length: int
    splits: Dict[str, List[str]]
    subjects: List[int]
    class_names: List[str] = field(default_factory=list)
    sample_rate_hz: float = 128.0
    samples: Dict[str, dict] = field(default_factory=dict)
    schema_version: int = MANIFEST_SCHEMA_VERSION

    def __post_init__(self):
        if self.dataset_name not in DATASET_NAMES:
            raise ValueError(f"unknown dataset name {self.dataset_name!r}; expected one of {DATASET_NAMES}")
        if not self.class_names:
            self.class_names = [f"class_{i}" for i in range(self.num_classes)]
        if len(self.class_names) != self.num_classes:
            raise ValueError("class_names length must equal num_classes")
        self.check_disjoint_splits()

    def check_disjoint_splits(self) -> None:
        seen: Dict[str, str] = {}
        for name, ids in self.splits.items():
            for sid in ids:
                if sid in seen and seen[sid] != name:
                    raise ValueError(f"sample {sid!r} appears in splits {seen[sid]!r} and {name!r}")
                seen[sid] = name

    def split_of(self, sample_id: str) -> Optional[str]:
        for name, ids in self.splits.items():
            if sample_id in ids:
                return name
        return None

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "dataset_name": self.dataset_name,
            "num_classes": self.num_classes,
            "class_names": list(self.class_names),
            "channels": self.channels,
            "window_length": self.window_length,
            "sample_rate_hz": self.sample_rate_hz,
            "subjects": list(self.subjects),
            "splits": {k: list(v) for k, v in self.splits.items()},
            "samples": self.samples,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        version = d.get("schema_version")
        if version != MANIFEST_SCHEMA_VERSION:
            raise ValueError(f"unsupported manifest schema version {version!r}")
        return cls(
            dataset_name=d["dataset_name"],
            num_classes=int(d["num_classes"]),
            channels=int(d["channels"]),
            window_length=int(d["window_length"]),
            splits={k: list(v) for k, v in d["splits"].items()},
            subjects=[int(s) for s in d["subjects"]],
            class_names=list(d.get("class_names", [])),
            sample_rate_hz=float(d.get("sample_rate_hz", 128.0)),
            samples=dict(d.get("samples", {})),
        )
