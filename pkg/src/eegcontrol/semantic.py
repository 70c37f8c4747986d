"""Frozen EEG classifier that turns a trial into the coarse caption ``Image of <label>``."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .data.preprocess import standardize_array
from .data.records import PairedSample
from .errors import BackboneLoadError

EMPTY_CAPTION = ""
DECODER_FORMAT = "eegcontrol-eeg-decoder"


class EEGDecoder(nn.Module):
    """Single-layer LSTM over time steps with a linear head on the last hidden state."""

    def __init__(self, channels: int, num_classes: int, hidden: int = 128):
        super().__init__()
        self.channels = channels
        self.num_classes = num_classes
        self.hidden = hidden
        self.lstm = nn.LSTM(channels, hidden, batch_first=True)
        self.head = nn.Linear(hidden, num_classes)
        self.frozen = False

    def forward(self, eeg: torch.Tensor) -> torch.Tensor:
        if eeg.dim() == 2:
            eeg = eeg.unsqueeze(0)
        if eeg.shape[1] != self.channels:
            raise ValueError(f"decoder expects {self.channels} channels, got {eeg.shape[1]}")
        _, (h, _) = self.lstm(eeg.transpose(1, 2))
        return self.head(h[-1])

    def freeze(self) -> "EEGDecoder":
        self.eval()
        self.requires_grad_(False)
        self.frozen = True
        return self

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save({"format": DECODER_FORMAT, "version": 1, "channels": self.channels,
                    "num_classes": self.num_classes, "hidden": self.hidden, "state": self.state_dict()}, path)
        return path

    @classmethod
    def load(cls, path) -> "EEGDecoder":
        path = Path(path)
        if not path.is_file():
            raise BackboneLoadError(f"EEG decoder checkpoint not found: {path}")
        try:
            blob = torch.load(path, map_location="cpu", weights_only=True)
        except Exception as exc:
            raise BackboneLoadError(f"cannot read EEG decoder checkpoint {path}: {exc}") from exc
        if not isinstance(blob, dict) or blob.get("format") != DECODER_FORMAT:
            raise BackboneLoadError(f"{path} is not an EEG decoder checkpoint")
        dec = cls(blob["channels"], blob["num_classes"], blob["hidden"])
        dec.load_state_dict(blob["state"])
        return dec.freeze()


def stack_eeg(samples: Sequence[PairedSample], standardized: bool = False) -> np.ndarray:
    arrs = [s.eeg.samples if standardized else standardize_array(s.eeg.samples)[0] for s in samples]
    lengths = {a.shape for a in arrs}
    if len(lengths) != 1:
        raise ValueError(f"EEG trials have differing shapes {sorted(lengths)}; crop or window them first")
    return np.stack(arrs).astype(np.float32)


def train_decoder(
    dataset: Sequence[PairedSample],
    epochs: int = 30,
    seed: int = 0,
    *,
    num_classes: Optional[int] = None,
    hidden: int = 128,
    lr: float = 3e-3,
    batch_size: int = 32,
) -> EEGDecoder:
    """Fit the substitute decoder with cross-entropy; the returned weights are frozen."""
    labels = np.array([s.eeg.class_label for s in dataset], dtype=np.int64)
    if len(np.unique(labels)) < 2:
        raise ValueError("decoder training needs at least two distinct classes")
    x = torch.from_numpy(stack_eeg(dataset))
    y = torch.from_numpy(labels)
    k = num_classes or int(labels.max()) + 1
    torch.manual_seed(seed)
    model = EEGDecoder(x.shape[1], k, hidden)
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    for _ in range(epochs):
        perm = torch.randperm(len(y), generator=gen)
        for i in range(0, len(y), batch_size):
            idx = perm[i:i + batch_size]
            loss = F.cross_entropy(model(x[idx]), y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    return model.freeze()


@torch.no_grad()
def decode_labels(eeg: np.ndarray | torch.Tensor, weights: EEGDecoder) -> np.ndarray:
    """Argmax labels for a batch ``(B, C, L)`` of standardized trials."""
    x = torch.as_tensor(np.asarray(eeg, dtype=np.float32)) if not isinstance(eeg, torch.Tensor) else eeg.float()
    return weights(x).argmax(dim=1).cpu().numpy()


def decode_label(eeg, weights: EEGDecoder) -> int:
    arr = np.asarray(eeg, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"expected a single (C, L) trial, got shape {arr.shape}")
    return int(decode_labels(arr[None], weights)[0])


def make_caption(class_label: Optional[int], class_names: Sequence[str]) -> str:
    if class_label is None:
        return EMPTY_CAPTION
    if not 0 <= int(class_label) < len(class_names):
        raise ValueError(f"label {class_label} outside [0, {len(class_names)})")
    return f"Image of {class_names[int(class_label)]}"
