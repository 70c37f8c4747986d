"""Readers for the raw EEGCVPR40 and ThoughtViz archives."""

from __future__ import annotations

import logging
import pickle
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import IngestionError
from .layout import read_image
from .preprocess import chunk
from .records import DatasetManifest, EEGRecording, PairedSample

log = logging.getLogger(__name__)

EEGCVPR40_SPLITS = ("train", "val", "test")
EEGCVPR40_CHANNELS = 128
EEGCVPR40_RATE_HZ = 1000.0
EEGCVPR40_EEG_FILES = (
    "eeg_signals_raw_with_mean_std.pth",
    "eeg_5_95_std.pth",
    "eeg_55_95_std.pth",
    "eeg_14_70_std.pth",
)
EEGCVPR40_SPLIT_FILES = ("block_splits_by_image_all.pth", "block_splits_by_image_single.pth")

THOUGHTVIZ_CHANNELS = 14
THOUGHTVIZ_RATE_HZ = 128.0
THOUGHTVIZ_WINDOW = 32


def _torch_load(path: Path):
    import torch

    try:
        return torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:  # torch raises a zoo of types for corrupt files
        raise IngestionError(f"cannot read archive ({type(exc).__name__}: {exc})", path) from exc


def _first_existing(root: Path, names: Sequence[str], pattern: str) -> Optional[Path]:
    for name in names:
        if (root / name).is_file():
            return root / name
    found = sorted(root.glob(pattern))
    return found[0] if found else None


def read_eegcvpr40_split(split_path, split: str, split_index: int = 0) -> List[int]:
    data = _torch_load(Path(split_path))
    try:
        return [int(i) for i in data["splits"][split_index][split]]
    except (KeyError, IndexError, TypeError) as exc:
        raise IngestionError(f"split file lacks splits[{split_index}][{split!r}]", split_path) from exc


def load_eegcvpr40(
    root,
    split: str,
    *,
    eeg_file: Optional[str] = None,
    split_file: Optional[str] = None,
    split_index: int = 0,
    image_size: Optional[int] = 64,
    images_dir: str = "imageNet_images",
) -> List[PairedSample]:
    """Load one official split of EEGCVPR40.

    The EEG archive is the usual ``.pth`` dict with ``dataset`` (a list of
    ``{"eeg", "image", "label", "subject"}``), ``labels`` (WordNet ids) and
    ``images`` (image stems). Time length is kept exactly as stored.
    """
    if split not in EEGCVPR40_SPLITS:
        raise ValueError(f"unknown EEGCVPR40 split {split!r}; expected one of {EEGCVPR40_SPLITS}")
    root = Path(root)
    if not root.is_dir():
        raise IngestionError("dataset root does not exist", root)
    eeg_path = root / eeg_file if eeg_file else _first_existing(root, EEGCVPR40_EEG_FILES, "eeg*.pth")
    if eeg_path is None or not eeg_path.is_file():
        raise IngestionError("EEG archive not found", eeg_path or root)
    split_path = root / split_file if split_file else _first_existing(root, EEGCVPR40_SPLIT_FILES, "*split*.pth")
    if split_path is None or not split_path.is_file():
        raise IngestionError("split file not found", split_path or root)

    archive = _torch_load(eeg_path)
    try:
        records = archive["dataset"]
        wnids = list(archive["labels"])
        image_names = list(archive["images"])
    except (KeyError, TypeError) as exc:
        raise IngestionError("EEG archive lacks dataset/labels/images entries", eeg_path) from exc
    indices = read_eegcvpr40_split(split_path, split, split_index)

    cache: Dict[str, np.ndarray] = {}
    out = []
    lengths = set()
    for idx in indices:
        try:
            entry = records[idx]
            eeg = np.asarray(entry["eeg"], dtype=np.float32)
            image_name = image_names[int(entry["image"])]
            label = int(entry["label"])
            subject = int(entry["subject"])
        except (IndexError, KeyError, TypeError) as exc:
            raise IngestionError(f"record {idx} is malformed ({exc})", eeg_path) from exc
        if eeg.ndim != 2 or eeg.shape[0] != EEGCVPR40_CHANNELS:
            raise IngestionError(f"record {idx} has shape {eeg.shape}, expected ({EEGCVPR40_CHANNELS}, L)", eeg_path)
        lengths.add(eeg.shape[1])
        if image_name not in cache:
            wnid = image_name.split("_")[0]
            img_path = root / images_dir / wnid / f"{image_name}.JPEG"
            if not img_path.is_file():
                raise IngestionError("stimulus image missing", img_path)
            cache[image_name] = read_image(img_path, image_size)
        rec = EEGRecording(eeg, subject, label, image_name, EEGCVPR40_RATE_HZ, f"cvpr{idx:05d}")
        out.append(PairedSample(rec, cache[image_name]))
    if lengths:
        log.info("EEGCVPR40 %s: %d samples, stored lengths %s", split, len(out), sorted(lengths))
    # class names are the WordNet ids; callers may map them to words
    for s in out:
        if s.eeg.class_label >= len(wnids):
            raise IngestionError(f"label {s.eeg.class_label} outside {len(wnids)} classes", eeg_path)
    return out


def eegcvpr40_class_names(root, eeg_file: Optional[str] = None) -> List[str]:
    root = Path(root)
    eeg_path = root / eeg_file if eeg_file else _first_existing(root, EEGCVPR40_EEG_FILES, "eeg*.pth")
    if eeg_path is None or not eeg_path.is_file():
        raise IngestionError("EEG archive not found", eeg_path or root)
    try:
        return [str(x) for x in _torch_load(eeg_path)["labels"]]
    except (KeyError, TypeError) as exc:
        raise IngestionError("EEG archive lacks labels", eeg_path) from exc


def eegcvpr40_manifest(samples_by_split: Dict[str, List[PairedSample]], class_names: List[str]) -> DatasetManifest:
    all_samples = [s for v in samples_by_split.values() for s in v]
    return DatasetManifest(
        dataset_name="eegcvpr40",
        num_classes=len(class_names),
        channels=EEGCVPR40_CHANNELS,
        window_length=min(s.eeg.length for s in all_samples),
        splits={k: [s.sample_id for s in v] for k, v in samples_by_split.items()},
        subjects=sorted({s.eeg.subject_id for s in all_samples}),
        class_names=class_names,
        sample_rate_hz=EEGCVPR40_RATE_HZ,
    )


def _thoughtviz_classes(root: Path) -> Tuple[List[str], Dict[str, Path]]:
    img_root = root / "images"
    if not img_root.is_dir():
        raise IngestionError("class-exemplar image directory missing", img_root)
    names = sorted(p.name for p in img_root.iterdir() if p.is_dir())
    exemplars = {}
    for name in names:
        files = sorted(p for p in (img_root / name).iterdir() if p.is_file())
        if not files:
            raise IngestionError("class has no exemplar image", img_root / name)
        exemplars[name] = files[0]
    if not names:
        raise IngestionError("no class directories under images/", img_root)
    return names, exemplars


def thoughtviz_class_names(root) -> List[str]:
    return _thoughtviz_classes(Path(root))[0]


def load_thoughtviz(
    root,
    *,
    window_length: int = THOUGHTVIZ_WINDOW,
    overlap_fraction: float = 0.5,
    image_size: Optional[int] = 64,
) -> List[PairedSample]:
    """Load ThoughtViz as 14-channel windows paired with one exemplar image per class.

    Two archive forms are accepted:

    * ``eeg/*.npz`` continuous recordings (keys ``eeg`` (14, L), ``label``,
      ``subject``, optional ``sample_rate_hz``), windowed here with :func:`chunk`;
    * the distributed ``data.pkl`` (``x_train``/``y_train``/``x_test``/``y_test``,
      already cut into 32-step windows, one-hot labels).
    """
    root = Path(root)
    if not root.is_dir():
        raise IngestionError("dataset root does not exist", root)
    rec_dir = root / "eeg"
    pkl = root / "data.pkl"
    has_npz = rec_dir.is_dir() and any(rec_dir.glob("*.npz"))
    if not has_npz and not pkl.is_file():
        raise IngestionError("no ThoughtViz EEG archive (eeg/*.npz or data.pkl)", root)
    class_names, exemplars = _thoughtviz_classes(root)
    images = {name: read_image(path, image_size) for name, path in exemplars.items()}

    windows: List[EEGRecording] = []
    if has_npz:
        for path in sorted(rec_dir.glob("*.npz")):
            try:
                with np.load(path) as z:
                    eeg = np.asarray(z["eeg"], dtype=np.float32)
                    label = int(z["label"])
                    subject = int(z["subject"])
                    rate = float(z["sample_rate_hz"]) if "sample_rate_hz" in z.files else THOUGHTVIZ_RATE_HZ
            except (OSError, KeyError, ValueError) as exc:
                raise IngestionError(f"cannot read recording ({exc})", path) from exc
            if eeg.ndim != 2 or eeg.shape[0] != THOUGHTVIZ_CHANNELS:
                raise IngestionError(f"recording has shape {eeg.shape}, expected (14, L)", path)
            if eeg.shape[1] < window_length:
                raise IngestionError(f"recording shorter than one {window_length}-step window", path)
            rec = EEGRecording(eeg, subject, label, class_names[label], rate, f"tv_{path.stem}")
            windows.extend(chunk(rec, window_length, overlap_fraction))
    else:
        windows.extend(_thoughtviz_pickle(pkl, class_names, window_length))

    out = []
    for w in windows:
        if w.class_label >= len(class_names):
            raise IngestionError(f"label {w.class_label} has no exemplar among {len(class_names)} classes", root)
        out.append(PairedSample(w.with_samples(w.samples, stimulus_ref=class_names[w.class_label]),
                                images[class_names[w.class_label]]))
    return out


def _thoughtviz_pickle(path: Path, class_names: List[str], window_length: int) -> List[EEGRecording]:
    try:
        with open(path, "rb") as fh:
            data = pickle.load(fh, encoding="latin1")
    except (OSError, pickle.UnpicklingError, EOFError) as exc:
        raise IngestionError(f"cannot unpickle archive ({exc})", path) from exc
    out = []
    for part in ("train", "test"):
        try:
            x = np.asarray(data[f"x_{part}"], dtype=np.float32)
            y = np.asarray(data[f"y_{part}"])
        except KeyError as exc:
            raise IngestionError(f"archive lacks {exc}", path) from exc
        x = x.reshape(x.shape[0], x.shape[1], -1)
        if x.shape[1] != THOUGHTVIZ_CHANNELS or x.shape[2] != window_length:
            raise IngestionError(f"x_{part} has windows of shape {x.shape[1:]}, expected (14, {window_length})", path)
        labels = y.argmax(axis=1) if y.ndim == 2 else y.astype(int)
        for i in range(x.shape[0]):
            lab = int(labels[i])
            out.append(EEGRecording(x[i], 0, lab, class_names[min(lab, len(class_names) - 1)],
                                    THOUGHTVIZ_RATE_HZ, f"tv_{part}_{i:06d}"))
    return out


def thoughtviz_manifest(samples: List[PairedSample], class_names: List[str], test_every: int = 5) -> DatasetManifest:
    """Build a manifest; windows of one recording always share a split."""
    splits: Dict[str, List[str]] = {"train": [], "test": []}
    recordings = sorted({s.sample_id.rsplit("_w", 1)[0] for s in samples if "_w" in s.sample_id})
    test_recs = {r for i, r in enumerate(recordings) if i % test_every == test_every - 1}
    for s in samples:
        sid = s.sample_id
        if sid.startswith("tv_train_"):
            splits["train"].append(sid)
        elif sid.startswith("tv_test_"):
            splits["test"].append(sid)
        else:
            splits["test" if sid.rsplit("_w", 1)[0] in test_recs else "train"].append(sid)
    return DatasetManifest(
        dataset_name="thoughtviz",
        num_classes=len(class_names),
        channels=THOUGHTVIZ_CHANNELS,
        window_length=samples[0].eeg.length if samples else THOUGHTVIZ_WINDOW,
        splits={k: v for k, v in splits.items() if v},
        subjects=sorted({s.eeg.subject_id for s in samples}),
        class_names=class_names,
        sample_rate_hz=THOUGHTVIZ_RATE_HZ,
    )
