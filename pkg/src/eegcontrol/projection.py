"""Projection of raw EEG into the diffusion latent grid.

A strided 1-D convolution stack over time followed by a flatten,
zero-pad-or-truncate and reshape to ``(D, H_z, W_z)``. An optional
per-subject channel-mixing matrix is applied before the stack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, List, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError

DEFAULT_CHANNEL_WIDTHS = (320, 640, 1280, 2560)
DEFAULT_STRIDES = (5, 2, 2, 2)


@dataclass
class ProjectionConfig:
    channel_widths: Tuple[int, ...] = DEFAULT_CHANNEL_WIDTHS
    strides: Tuple[int, ...] = DEFAULT_STRIDES
    kernel_size: int = 3
    target_latent_shape: Tuple[int, int, int] = (4, 64, 64)

    def __post_init__(self):
        self.channel_widths = tuple(int(c) for c in self.channel_widths)
        self.strides = tuple(int(s) for s in self.strides)
        self.target_latent_shape = tuple(int(d) for d in self.target_latent_shape)
        if len(self.channel_widths) < 1 or len(self.channel_widths) != len(self.strides):
            raise ConfigurationError("channel_widths and strides must be non-empty and of equal length")
        if any(c < 1 for c in self.channel_widths) or any(s < 1 for s in self.strides):
            raise ConfigurationError("channel widths and strides must be positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigurationError("kernel_size must be a positive odd integer")
        if len(self.target_latent_shape) != 3 or any(d < 1 for d in self.target_latent_shape):
            raise ConfigurationError("target_latent_shape must be three positive integers")

    @property
    def padding(self) -> int:
        return self.kernel_size // 2

    def to_dict(self) -> dict:
        return {
            "channel_widths": list(self.channel_widths),
            "strides": list(self.strides),
            "kernel_size": self.kernel_size,
            "target_latent_shape": list(self.target_latent_shape),
        }


def conv_output_length(length: int, kernel: int, stride: int, padding: int) -> int:
    return (length + 2 * padding - kernel) // stride + 1


def layer_lengths(config: ProjectionConfig, length: int) -> List[int]:
    """Temporal length at the input and after each conv layer.

    Raises ``ValueError`` when a layer's stride exceeds its input length,
    i.e. when that layer would collapse the signal to its first window only.
    """
    out = [length]
    for i, stride in enumerate(config.strides):
        cur = out[-1]
        if cur // stride < 1:
            raise ValueError(
                f"layer {i}: input length {cur} is shorter than stride {stride} (temporal length would drop below 1)"
            )
        out.append(conv_output_length(cur, config.kernel_size, stride, config.padding))
    return out


def pad_reshape(features: torch.Tensor, target: Sequence[int]) -> torch.Tensor:
    """Flatten ``(..., K, L')`` row-major, zero-pad or truncate, reshape to ``(..., D, H, W)``."""
    lead = features.shape[:-2]
    flat = features.reshape(*lead, -1)
    n = math.prod(target)
    k = flat.shape[-1]
    if k < n:
        flat = F.pad(flat, (0, n - k))
    elif k > n:
        flat = flat[..., :n]
    return flat.reshape(*lead, *target)


class EEGProjection(nn.Module):
    """Conv1d + SiLU stack mapping ``(B, C, L)`` EEG to ``(B, D, H_z, W_z)`` latents."""

    def __init__(self, in_channels: int, config: ProjectionConfig):
        super().__init__()
        self.config = config
        self.in_channels = in_channels
        layers = []
        prev = in_channels
        for width, stride in zip(config.channel_widths, config.strides):
            layers.append(nn.Conv1d(prev, width, config.kernel_size, stride=stride, padding=config.padding))
            prev = width
        self.convs = nn.ModuleList(layers)

    def features(self, eeg: torch.Tensor) -> torch.Tensor:
        if eeg.dim() != 3 or eeg.shape[1] != self.in_channels:
            raise ValueError(f"expected EEG of shape (B, {self.in_channels}, L), got {tuple(eeg.shape)}")
        layer_lengths(self.config, eeg.shape[-1])
        h = eeg
        for conv in self.convs:
            h = F.silu(conv(h))
        return h

    def forward(self, eeg: torch.Tensor) -> torch.Tensor:
        return pad_reshape(self.features(eeg), self.config.target_latent_shape)


def init_projection(config: ProjectionConfig, in_channels: int, seed: int, min_length: int) -> EEGProjection:
    """Build a projection with fan-in scaled uniform weights; validates the stride stack against ``min_length``."""
    try:
        layer_lengths(config, min_length)
    except ValueError as exc:
        raise ConfigurationError(f"infeasible projection for minimum length {min_length}: {exc}") from exc
    gen = torch.Generator().manual_seed(int(seed))
    proj = EEGProjection(in_channels, config)
    with torch.no_grad():
        for conv in proj.convs:
            bound = 1.0 / math.sqrt(conv.in_channels * conv.kernel_size[0])
            conv.weight.uniform_(-bound, bound, generator=gen)
            conv.bias.uniform_(-bound, bound, generator=gen)
    return proj


class SubjectLayer(nn.Module):
    """Per-subject ``C x C`` channel mixing, identity at initialization."""

    def __init__(self, channels: int, subject_ids: Iterable[int]):
        super().__init__()
        self.channels = channels
        ids = sorted({int(s) for s in subject_ids})
        if not ids:
            raise ValueError("SubjectLayer needs at least one subject id")
        self.matrices = nn.ParameterDict({str(s): nn.Parameter(torch.eye(channels)) for s in ids})

    @property
    def subject_ids(self) -> List[int]:
        return sorted(int(k) for k in self.matrices.keys())

    def matrix(self, subject_id: int) -> torch.Tensor:
        key = str(int(subject_id))
        if key not in self.matrices:
            raise ValueError(f"unknown subject id {subject_id}; layer has {self.subject_ids}")
        return self.matrices[key]

    def forward(self, eeg: torch.Tensor, subject_ids: Sequence[int]) -> torch.Tensor:
        """Mix ``(B, C, L)`` EEG with each sample's subject matrix."""
        if eeg.dim() == 2:
            return self.matrix(int(subject_ids)) @ eeg
        mats = torch.stack([self.matrix(int(s)) for s in subject_ids])
        return torch.bmm(mats, eeg)


def subject_mix(eeg: torch.Tensor, subject_id: int, layer: SubjectLayer) -> torch.Tensor:
    return layer.matrix(subject_id) @ eeg
