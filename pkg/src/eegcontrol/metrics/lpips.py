"""Learned perceptual image patch similarity over a pluggable feature network."""

from __future__ import annotations

from typing import Callable, List, Optional, Sequence

import numpy as np
import torch

from ..diffusion.backbone import images_to_tensor


def _unit_normalize(f: torch.Tensor, eps: float = 1e-10) -> torch.Tensor:
    return f / (f.pow(2).sum(dim=1, keepdim=True).sqrt() + eps)


@torch.no_grad()
def lpips_distance(a: torch.Tensor, b: torch.Tensor, feature_net: Callable,
                   weights: Optional[Sequence[torch.Tensor]] = None) -> torch.Tensor:
    """Per-pair distance for batches ``(B, 3, H, W)`` in [0, 1].

    Each layer's features are unit-normalized along channels; the squared
    difference is channel-weighted, averaged over space and summed over
    layers. Default weights are uniform, ``1 / (4 * n_layers)`` per
    channel, which keeps the distance in [0, 1].
    """
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    fa: List[torch.Tensor] = feature_net(a)
    fb: List[torch.Tensor] = feature_net(b)
    if weights is None:
        weights = getattr(feature_net, "lpips_weights", None)
    total = torch.zeros(a.shape[0], dtype=torch.float64)
    for i, (xa, xb) in enumerate(zip(fa, fb)):
        diff = (_unit_normalize(xa.double()) - _unit_normalize(xb.double())).pow(2)
        if weights is None:
            w = torch.full((diff.shape[1],), 1.0 / (4 * len(fa)), dtype=torch.float64)
        else:
            w = torch.as_tensor(weights[i], dtype=torch.float64).clamp_min(0)
        total += (diff * w[None, :, None, None]).sum(dim=1).mean(dim=(1, 2))
    return total


def lpips(image_a, image_b, feature_net: Callable) -> float:
    """LPIPS between two images (``(H, W, 3)`` arrays or tensors); equal resolutions required."""
    a, b = images_to_tensor(image_a), images_to_tensor(image_b)
    if a.shape != b.shape:
        raise ValueError(f"resolution mismatch: {tuple(a.shape[-2:])} vs {tuple(b.shape[-2:])}")
    return float(lpips_distance(a, b, feature_net)[0])


def lpips_pairs(images_a: np.ndarray, images_b: np.ndarray, feature_net: Callable, batch_size: int = 64) -> np.ndarray:
    a, b = images_to_tensor(images_a), images_to_tensor(images_b)
    if a.shape != b.shape:
        raise ValueError(f"image batches differ in shape: {tuple(a.shape)} vs {tuple(b.shape)}")
    out = [lpips_distance(a[i:i + batch_size], b[i:i + batch_size], feature_net) for i in range(0, len(a), batch_size)]
    return torch.cat(out).numpy()
