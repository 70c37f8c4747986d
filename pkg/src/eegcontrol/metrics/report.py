"""Evaluation manifests and metric reports."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from ..data.layout import read_image
from ..errors import IngestionError
from .lpips import lpips_pairs
from .scores import fid, inception_score_from_probs, nway_topk_from_scores

EVAL_SCHEMA_VERSION = 1
REPORT_SCHEMA_VERSION = 1


@dataclass
class EvalEntry:
    ground_truth_path: str
    generated_path: str
    class_label: int


@dataclass
class EvalManifest:
    entries: List[EvalEntry]
    feature_extractor: str = "desk-cnn"
    classifier: str = "desk-cnn"
    n_way: int = 50
    k: int = 1
    checkpoint_id: str = ""
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        if self.n_way < 2:
            raise ValueError("n_way must be >= 2")
        if not 1 <= self.k < self.n_way:
            raise ValueError(f"k must satisfy 1 <= k < n_way, got k={self.k}, n_way={self.n_way}")

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p

    def missing(self) -> List[Path]:
        out = []
        for e in self.entries:
            for rel in (e.ground_truth_path, e.generated_path):
                if not self.resolve(rel).is_file():
                    out.append(self.resolve(rel))
        return out

    def load_images(self):
        if not self.entries:
            raise ValueError("evaluation manifest is empty")
        gaps = self.missing()
        if gaps:
            raise IngestionError(f"{len(gaps)} image(s) missing, first", gaps[0])
        gen = [read_image(self.resolve(e.generated_path)) for e in self.entries]
        size = gen[0].shape[0]
        gt = [read_image(self.resolve(e.ground_truth_path), size) for e in self.entries]
        return np.stack(gt), np.stack(gen)

    def to_dict(self) -> dict:
        return {
            "schema_version": EVAL_SCHEMA_VERSION,
            "feature_extractor": self.feature_extractor,
            "classifier": self.classifier,
            "n_way": self.n_way,
            "k": self.k,
            "checkpoint_id": self.checkpoint_id,
            "entries": [asdict(e) for e in self.entries],
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "EvalManifest":
        path = Path(path)
        if not path.is_file():
            raise IngestionError("evaluation manifest not found", path)
        d = json.loads(path.read_text())
        if d.get("schema_version") != EVAL_SCHEMA_VERSION:
            raise IngestionError(f"unsupported evaluation manifest version {d.get('schema_version')!r}", path)
        return cls(
            entries=[EvalEntry(**e) for e in d["entries"]],
            feature_extractor=d["feature_extractor"],
            classifier=d["classifier"],
            n_way=int(d["n_way"]),
            k=int(d["k"]),
            checkpoint_id=d.get("checkpoint_id", ""),
            root=path.parent,
        )


@dataclass
class MetricsReport:
    is_mean: float
    is_std: float
    fid: float
    acc: float
    lpips_mean: float
    sample_count: int
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.fid < 0:
            raise ValueError("FID must be non-negative")
        if not 0.0 <= self.acc <= 1.0:
            raise ValueError("accuracy must lie in [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = REPORT_SCHEMA_VERSION
        return d

    def row(self) -> str:
        return f"{self.is_mean:8.3f} {self.fid:10.3f} {self.acc:6.3f} {self.lpips_mean:7.3f}"


TABLE_HEADER = f"{'IS ^':>8} {'FID v':>10} {'ACC ^':>6} {'LPIPS v':>7}"


def evaluate_images(gt_images: np.ndarray, gen_images: np.ndarray, classifier, *, n_way: int = 50, k: int = 1,
                    is_splits: int = 10, seed: int = 0, extra_config: Optional[dict] = None) -> MetricsReport:
    """All four metrics for aligned arrays of ground-truth and generated images."""
    if len(gt_images) == 0:
        raise ValueError("nothing to evaluate")
    if len(gt_images) != len(gen_images):
        raise ValueError("ground-truth and generated image counts differ")
    splits = max(1, min(is_splits, len(gen_images)))
    gen_probs = classifier.predict_proba(gen_images)
    gt_probs = classifier.predict_proba(gt_images)
    is_mean, is_std = inception_score_from_probs(gen_probs, splits)
    fid_value = fid(classifier.embed(gt_images), classifier.embed(gen_images))
    acc = nway_topk_from_scores(gt_probs, gen_probs, n_way, k, seed)
    lp = lpips_pairs(gt_images, gen_images, classifier.feature_maps)
    config = {
        "n_way": n_way,
        "k": k,
        "is_splits": splits,
        "seed": seed,
        "feature_extractor": getattr(classifier, "identifier", type(classifier).__name__),
        "classifier": getattr(classifier, "identifier", type(classifier).__name__),
    }
    config.update(extra_config or {})
    return MetricsReport(is_mean, is_std, fid_value, acc, float(lp.mean()), len(gen_images), config)


def evaluate_run(manifest: EvalManifest, classifier, *, is_splits: int = 10, seed: int = 0) -> MetricsReport:
    gt, gen = manifest.load_images()
    return evaluate_images(gt, gen, classifier, n_way=manifest.n_way, k=manifest.k, is_splits=is_splits, seed=seed,
                           extra_config={"checkpoint_id": manifest.checkpoint_id,
                                         "feature_extractor": manifest.feature_extractor,
                                         "classifier": manifest.classifier})


def write_report(path, report: MetricsReport) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")
    return path
