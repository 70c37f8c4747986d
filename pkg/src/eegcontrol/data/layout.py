"""Canonical on-disk dataset layout.

::

    root/
      manifest.json          versioned manifest (splits, subjects, per-sample table)
      eeg/<sample_id>.npy    float32 array (C, L)
      images/<stimulus>.png  8-bit RGB stimulus image
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
from PIL import Image

from ..errors import IngestionError
from .records import DatasetManifest, EEGRecording, PairedSample

MANIFEST_NAME = "manifest.json"


def read_image(path: Path, size: Optional[int] = None) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if size is not None and im.size != (size, size):
                im = im.resize((size, size), Image.BICUBIC)
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise IngestionError(f"cannot read image ({exc})", path) from exc
    return arr


def write_image(path: Path, image: np.ndarray) -> None:
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def _safe_name(ref: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in ref)


def write_dataset(root, manifest: DatasetManifest, samples: Iterable[PairedSample]) -> Path:
    """Write samples in the canonical layout; rerunning on the same input is a no-op in effect."""
    root = Path(root)
    (root / "eeg").mkdir(parents=True, exist_ok=True)
    (root / "images").mkdir(parents=True, exist_ok=True)
    table: Dict[str, dict] = {}
    written_images = set()
    for s in samples:
        rec = s.eeg
        if not rec.sample_id:
            raise ValueError("every sample needs a sample_id to be written")
        eeg_rel = f"eeg/{_safe_name(rec.sample_id)}.npy"
        img_rel = f"images/{_safe_name(rec.stimulus_ref)}.png"
        np.save(root / eeg_rel, np.asarray(rec.samples, dtype=np.float32))
        if img_rel not in written_images:
            write_image(root / img_rel, s.image)
            written_images.add(img_rel)
        table[rec.sample_id] = {
            "subject": int(rec.subject_id),
            "label": int(rec.class_label),
            "stimulus": rec.stimulus_ref,
            "sample_rate_hz": float(rec.sample_rate_hz),
            "eeg": eeg_rel,
            "image": img_rel,
        }
    manifest.samples = table
    (root / MANIFEST_NAME).write_text(json.dumps(manifest.to_dict(), indent=1, sort_keys=True) + "\n")
    return root / MANIFEST_NAME


def read_manifest(root) -> DatasetManifest:
    path = Path(root) / MANIFEST_NAME
    if not path.is_file():
        raise IngestionError("dataset manifest not found", path)
    try:
        return DatasetManifest.from_dict(json.loads(path.read_text()))
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise IngestionError(f"malformed manifest ({exc})", path) from exc


def load_dataset(
    root,
    split: Optional[str] = None,
    *,
    subjects: Optional[Iterable[int]] = None,
    image_size: Optional[int] = None,
) -> Tuple[DatasetManifest, List[PairedSample]]:
    """Load a canonical dataset directory, optionally restricted to one split and a subject subset."""
    root = Path(root)
    manifest = read_manifest(root)
    if split is None:
        ids = [sid for ids in manifest.splits.values() for sid in ids]
    else:
        if split not in manifest.splits:
            raise ValueError(f"unknown split {split!r}; manifest has {sorted(manifest.splits)}")
        ids = list(manifest.splits[split])
    keep = None if subjects is None else {int(s) for s in subjects}

    images: Dict[str, np.ndarray] = {}
    out = []
    for sid in ids:
        entry = manifest.samples.get(sid)
        if entry is None:
            raise IngestionError(f"split references unknown sample {sid!r}", root / MANIFEST_NAME)
        if keep is not None and int(entry["subject"]) not in keep:
            continue
        eeg_path = root / entry["eeg"]
        if not eeg_path.is_file():
            raise IngestionError("EEG array missing", eeg_path)
        try:
            arr = np.load(eeg_path)
        except (OSError, ValueError) as exc:
            raise IngestionError(f"cannot read EEG array ({exc})", eeg_path) from exc
        if entry["image"] not in images:
            img_path = root / entry["image"]
            if not img_path.is_file():
                raise IngestionError("stimulus image missing", img_path)
            images[entry["image"]] = read_image(img_path, image_size)
        if int(entry["label"]) >= manifest.num_classes:
            raise IngestionError(f"label {entry['label']} out of range for {manifest.num_classes} classes", eeg_path)
        rec = EEGRecording(
            arr.astype(np.float32),
            int(entry["subject"]),
            int(entry["label"]),
            entry["stimulus"],
            float(entry.get("sample_rate_hz", manifest.sample_rate_hz)),
            sid,
        )
        out.append(PairedSample(rec, images[entry["image"]]))
    return manifest, out
