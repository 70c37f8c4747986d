"""Carrier for adapter outputs and their injection into backbone activations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import torch

from ..errors import ArchitectureMismatchError


@dataclass
class EncoderOutput:
    """UNet encoder activations: skip tensors (shallow to deep), bottleneck, time embedding."""

    skips: List[torch.Tensor]
    mid: torch.Tensor
    emb: Optional[torch.Tensor] = None

    @property
    def blocks(self) -> List[torch.Tensor]:
        return [*self.skips, self.mid]


@dataclass
class ControlResiduals:
    """One residual per encoder block (skips then bottleneck) and a scale per block."""

    maps: List[torch.Tensor]
    scales: Sequence[float]

    def __post_init__(self):
        if len(self.maps) != len(self.scales):
            raise ValueError(f"{len(self.maps)} residual maps but {len(self.scales)} scales")

    def scaled(self) -> List[torch.Tensor]:
        return [s * m for s, m in zip(self.scales, self.maps)]

    def zero_like(self) -> "ControlResiduals":
        return ControlResiduals([torch.zeros_like(m) for m in self.maps], list(self.scales))


def inject_residuals(activations: EncoderOutput, residuals: ControlResiduals) -> EncoderOutput:
    """Add ``scale_i * residual_i`` to every skip connection and to the bottleneck."""
    blocks = activations.blocks
    if len(blocks) != len(residuals.maps):
        raise ArchitectureMismatchError(
            f"backbone exposes {len(blocks)} blocks but adapter produced {len(residuals.maps)} residuals"
        )
    out = []
    for i, (act, res, scale) in enumerate(zip(blocks, residuals.maps, residuals.scales)):
        if act.shape != res.shape:
            raise ArchitectureMismatchError(
                f"block {i}: activation {tuple(act.shape)} vs residual {tuple(res.shape)}"
            )
        out.append(act + scale * res)
    return EncoderOutput(out[:-1], out[-1], activations.emb)


def block_shapes_of(out: EncoderOutput) -> List[Tuple[int, ...]]:
    return [tuple(b.shape[1:]) for b in out.blocks]
