"""Deterministic toy corpus: class-dependent EEG sinusoids paired with glyph images.

Each class owns one fixed stimulus image (a coloured shape on a grey
background) and a set of per-channel oscillation frequencies and phases.
Trials are those oscillations plus white noise, so a small classifier
can beat chance while single trials stay noisy.
"""

from __future__ import annotations

import colorsys
from typing import List, Tuple

import numpy as np

from .records import DatasetManifest, EEGRecording, PairedSample

_SHAPES = ("disc", "square", "triangle", "diamond", "ring", "cross")


def glyph_image(class_index: int, num_classes: int, size: int) -> np.ndarray:
    """Render the stimulus image for one class as float32 (size, size, 3) in [0, 1]."""
    hue = (class_index / max(num_classes, 1)) % 1.0
    color = np.array(colorsys.hsv_to_rgb(hue, 0.85, 0.95), dtype=np.float32)
    shape = _SHAPES[class_index % len(_SHAPES)]
    # later cycles through the shape list shrink the glyph so classes stay distinct
    scale = 0.38 - 0.08 * ((class_index // len(_SHAPES)) % 3)

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    u = (xx + 0.5) / size - 0.5
    v = (yy + 0.5) / size - 0.5
    if shape == "disc":
        mask = u**2 + v**2 <= scale**2
    elif shape == "square":
        mask = (np.abs(u) <= scale * 0.85) & (np.abs(v) <= scale * 0.85)
    elif shape == "triangle":
        mask = (v <= scale * 0.8) & (v >= -scale) & (np.abs(u) <= (v + scale) * 0.6)
    elif shape == "diamond":
        mask = np.abs(u) + np.abs(v) <= scale * 1.1
    elif shape == "ring":
        r2 = u**2 + v**2
        mask = (r2 <= scale**2) & (r2 >= (scale * 0.55) ** 2)
    else:
        w = scale * 0.3
        mask = ((np.abs(u) <= w) & (np.abs(v) <= scale)) | ((np.abs(v) <= w) & (np.abs(u) <= scale))

    img = np.full((size, size, 3), 0.2, dtype=np.float32)
    img[mask] = color
    return img


def synth_dataset(
    num_classes: int,
    channels: int,
    length: int,
    samples_per_class: int,
    image_size: int,
    seed: int,
    *,
    num_subjects: int = 1,
    sample_rate_hz: float = 128.0,
    noise_std: float = 1.0,
    test_fraction: float = 0.25,
) -> Tuple[DatasetManifest, List[PairedSample]]:
    for name, value in (
        ("num_classes", num_classes),
        ("channels", channels),
        ("length", length),
        ("samples_per_class", samples_per_class),
        ("image_size", image_size),
        ("num_subjects", num_subjects),
    ):
        if int(value) != value or value < 1:
            raise ValueError(f"{name} must be a positive integer, got {value!r}")
    if not 0.0 <= test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in [0, 1), got {test_fraction}")

    rng = np.random.default_rng(seed)
    freqs = rng.uniform(3.0, 20.0, size=(num_classes, channels))
    phases = rng.uniform(0.0, 2 * np.pi, size=(num_classes, channels))
    amps = rng.uniform(0.8, 1.6, size=(num_classes, channels))
    t = np.arange(length) / sample_rate_hz

    images = [glyph_image(k, num_classes, image_size) for k in range(num_classes)]
    n_test = int(round(samples_per_class * test_fraction))

    samples: List[PairedSample] = []
    splits = {"train": [], "test": []}
    table = {}
    for k in range(num_classes):
        for j in range(samples_per_class):
            idx = k * samples_per_class + j
            jitter = rng.normal(0.0, 0.3, size=(channels, 1))
            signal = amps[k][:, None] * np.sin(2 * np.pi * freqs[k][:, None] * t[None, :] + phases[k][:, None] + jitter)
            eeg = (signal + rng.normal(0.0, noise_std, size=(channels, length))).astype(np.float32)
            sid = f"syn{idx:05d}"
            subject = 1 + idx % num_subjects
            ref = f"class{k:03d}"
            rec = EEGRecording(eeg, subject, k, ref, sample_rate_hz, sid)
            samples.append(PairedSample(rec, images[k]))
            split = "test" if j >= samples_per_class - n_test else "train"
            splits[split].append(sid)
            table[sid] = {"subject": subject, "label": k, "stimulus": ref}

    manifest = DatasetManifest(
        dataset_name="synthetic",
        num_classes=num_classes,
        channels=channels,
        window_length=length,
        splits={k: v for k, v in splits.items() if v},
        subjects=list(range(1, num_subjects + 1)),
        class_names=[f"class_{k}" for k in range(num_classes)],
        sample_rate_hz=sample_rate_hz,
        samples=table,
    )
    return manifest, samples
