"""Minimal EEG preprocessing: per-channel z-scoring and sliding windows."""

from __future__ import annotations

import math
import warnings
from typing import List

import numpy as np

from .records import EEGRecording


class ZeroVarianceWarning(UserWarning):
    """Raised (as a warning) when a channel is constant and can only be centred."""


def standardize_array(samples: np.ndarray, eps: float = 1e-12) -> tuple[np.ndarray, list[int]]:
    """Z-score each row of ``samples``; returns the result and the constant rows."""
    x = np.asarray(samples, dtype=np.float64)
    mean = x.mean(axis=1, keepdims=True)
    std = x.std(axis=1, keepdims=True)  # population std
    centred = x - mean
    dead = std[:, 0] <= eps
    safe = np.where(dead[:, None], 1.0, std)
    out = centred / safe
    out[dead] = centred[dead]
    return out.astype(np.float32), np.flatnonzero(dead).tolist()


def standardize(eeg: EEGRecording) -> EEGRecording:
    """Per-recording, per-channel standardization to mean 0 and std 1.

    Channels with zero variance are mean-subtracted only and a
    :class:`ZeroVarianceWarning` is emitted naming them.
    """
    out, dead = standardize_array(eeg.samples)
    if dead:
        warnings.warn(
            f"recording {eeg.sample_id!r}: zero-variance channel(s) {dead} were only mean-subtracted",
            ZeroVarianceWarning,
            stacklevel=2,
        )
    return eeg.with_samples(out)


def chunk_stride(window_length: int, overlap_fraction: float) -> int:
    if not 0.0 <= overlap_fraction < 1.0:
        raise ValueError(f"overlap_fraction must be in [0, 1), got {overlap_fraction}")
    # round half up, never below one sample
    return max(1, int(math.floor(window_length * (1.0 - overlap_fraction) + 0.5)))


def chunk_offsets(length: int, window_length: int, overlap_fraction: float) -> range:
    if window_length < 1:
        raise ValueError(f"window_length must be >= 1, got {window_length}")
    if window_length > length:
        raise ValueError(f"window_length {window_length} exceeds recording length {length}")
    stride = chunk_stride(window_length, overlap_fraction)
    return range(0, length - window_length + 1, stride)


def chunk(eeg: EEGRecording, window_length: int, overlap_fraction: float = 0.5) -> List[EEGRecording]:
    """Cut a recording into fixed-length windows; the trailing partial window is dropped."""
    out = []
    for i, start in enumerate(chunk_offsets(eeg.length, window_length, overlap_fraction)):
        sid = f"{eeg.sample_id}_w{i:04d}" if eeg.sample_id else f"w{i:04d}"
        out.append(eeg.with_samples(eeg.samples[:, start:start + window_length].copy(), sample_id=sid))
    return out
