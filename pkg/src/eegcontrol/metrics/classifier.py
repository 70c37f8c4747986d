"""Small image classifier used as the desk-scale stand-in for pretrained feature extractors.

One network serves three metrics: class posteriors (IS, N-way ACC),
pooled embeddings (FID) and intermediate feature maps (LPIPS).
"""

from __future__ import annotations

from pathlib import Path
from typing import List, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..diffusion.backbone import images_to_tensor
from ..errors import BackboneLoadError

CLASSIFIER_FORMAT = "eegcontrol-image-classifier"


class ImageClassifier(nn.Module):
    def __init__(self, num_classes: int, width: int = 16):
        super().__init__()
        self.num_classes = num_classes
        self.width = width
        self.stages = nn.ModuleList([
            nn.Sequential(nn.Conv2d(3, width, 3, stride=2, padding=1), nn.ReLU()),
            nn.Sequential(nn.Conv2d(width, 2 * width, 3, stride=2, padding=1), nn.ReLU()),
            nn.Sequential(nn.Conv2d(2 * width, 4 * width, 3, stride=2, padding=1), nn.ReLU()),
        ])
        self.head = nn.Linear(4 * width, num_classes)
        self.identifier = "desk-cnn"

    def feature_maps(self, x: torch.Tensor) -> List[torch.Tensor]:
        h = x * 2.0 - 1.0
        maps = []
        for stage in self.stages:
            h = stage(h)
            maps.append(h)
        return maps

    def embed_tensor(self, x: torch.Tensor) -> torch.Tensor:
        return self.feature_maps(x)[-1].mean(dim=(2, 3))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.embed_tensor(x))

    @torch.no_grad()
    def predict_proba(self, images) -> np.ndarray:
        return F.softmax(self(images_to_tensor(images)), dim=1).numpy()

    @torch.no_grad()
    def embed(self, images) -> np.ndarray:
        return self.embed_tensor(images_to_tensor(images)).numpy()

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save({"format": CLASSIFIER_FORMAT, "version": 1, "num_classes": self.num_classes,
                    "width": self.width, "state": self.state_dict()}, path)
        return path

    @classmethod
    def load(cls, path) -> "ImageClassifier":
        path = Path(path)
        if not path.is_file():
            raise BackboneLoadError(f"image classifier not found: {path}")
        try:
            blob = torch.load(path, map_location="cpu", weights_only=True)
        except Exception as exc:
            raise BackboneLoadError(f"cannot read image classifier checkpoint {path}: {exc}") from exc
        if not isinstance(blob, dict) or blob.get("format") != CLASSIFIER_FORMAT:
            raise BackboneLoadError(f"{path} is not an image classifier checkpoint")
        clf = cls(blob["num_classes"], blob["width"])
        clf.load_state_dict(blob["state"])
        clf.eval().requires_grad_(False)
        return clf


def _augment(x: torch.Tensor, gen: torch.Generator) -> torch.Tensor:
    b = x.shape[0]
    shift = torch.randint(-6, 7, (2,), generator=gen).tolist()
    x = torch.roll(x, shifts=shift, dims=(2, 3))
    x = x * (1 + 0.2 * (torch.rand(b, 1, 1, 1, generator=gen) - 0.5))
    x = x + 0.1 * (torch.rand(b, 3, 1, 1, generator=gen) - 0.5)
    x = x + torch.rand(b, 1, 1, 1, generator=gen) * 0.15 * torch.randn(x.shape, generator=gen)
    if torch.rand(1, generator=gen).item() < 0.5:
        x = F.avg_pool2d(x, 3, stride=1, padding=1, count_include_pad=False)
    return x.clamp(0, 1)


def train_image_classifier(images, labels: Sequence[int], num_classes: int, *, steps: int = 300,
                           batch_size: int = 32, lr: float = 3e-3, seed: int = 0) -> ImageClassifier:
    """Fit the desk classifier with shift, colour and noise augmentation so it tolerates imperfect generations."""
    x_all = images_to_tensor(images)
    y_all = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    clf = ImageClassifier(num_classes)
    opt = torch.optim.Adam(clf.parameters(), lr=lr)
    for _ in range(steps):
        idx = torch.randint(0, len(y_all), (batch_size,), generator=gen)
        logits = clf(_augment(x_all[idx], gen))
        loss = F.cross_entropy(logits, y_all[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
    clf.eval().requires_grad_(False)
    return clf
