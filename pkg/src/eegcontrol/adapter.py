"""Trainable encoder copy joined to the frozen backbone through zero convolutions."""

from __future__ import annotations

import copy
from typing import List, Optional, Sequence

import torch
import torch.nn as nn

from .diffusion.residuals import ControlResiduals, EncoderOutput, inject_residuals
from .errors import ArchitectureMismatchError

__all__ = [
    "ControlAdapter",
    "ControlResiduals",
    "ZeroConv2d",
    "adapter_forward",
    "build_control",
    "clone_encoder",
    "guess_mode_scales",
    "inject_residuals",
]


class ZeroConv2d(nn.Conv2d):
    """1x1 convolution whose weight and bias start at exactly zero."""

    def __init__(self, in_channels: int, out_channels: Optional[int] = None):
        super().__init__(in_channels, out_channels or in_channels, kernel_size=1)
        nn.init.zeros_(self.weight)
        nn.init.zeros_(self.bias)


class ControlAdapter(nn.Module):
    def __init__(self, encoder: nn.Module, latent_channels: int, block_shapes: Sequence[tuple], num_steps: int):
        super().__init__()
        self.encoder_copy = copy.deepcopy(encoder)
        self.encoder_copy.requires_grad_(True)
        self.encoder_copy.train()
        self.input_zero_conv = ZeroConv2d(latent_channels)
        self.output_zero_convs = nn.ModuleList(ZeroConv2d(shape[0]) for shape in block_shapes)
        self.block_shapes = [tuple(s) for s in block_shapes]
        self.num_steps = num_steps

    @property
    def num_blocks(self) -> int:
        return len(self.output_zero_convs)

    def forward(self, c_eeg: torch.Tensor, ctx, t, scales: Optional[Sequence[float]] = None) -> ControlResiduals:
        return adapter_forward(self, c_eeg, ctx, t, scales)


def clone_encoder(backbone, block_shapes: Optional[Sequence[tuple]] = None) -> ControlAdapter:
    """Copy the backbone's UNet encoder and attach zero convolutions.

    ``block_shapes`` (per-block ``(C, H, W)``) defaults to the backbone's
    declaration; a dry run checks that the encoder really produces them.
    """
    declared = [tuple(s) for s in (block_shapes or backbone.block_shapes())]
    latent = tuple(backbone.latent_shape)
    dtype = next(backbone.encoder.parameters()).dtype
    probe_z = torch.zeros((1, *latent), dtype=dtype)
    probe_t = torch.zeros(1, dtype=torch.long)
    with torch.no_grad():
        out: EncoderOutput = backbone.encoder(probe_z, probe_t, backbone.encode_captions([""]))
    actual = [tuple(b.shape[1:]) for b in out.blocks]
    if actual != declared:
        raise ArchitectureMismatchError(f"declared block shapes {declared} but backbone encoder yields {actual}")
    return ControlAdapter(backbone.encoder, latent[0], declared, backbone.schedule.num_steps)


def build_control(z_img_t: torch.Tensor, z_eeg: torch.Tensor, input_zero_conv: nn.Module) -> torch.Tensor:
    """``z_img_t + Z(z_eeg)``: the adapter's input."""
    if z_img_t.shape != z_eeg.shape:
        raise ValueError(f"noisy latent {tuple(z_img_t.shape)} and EEG latent {tuple(z_eeg.shape)} differ in shape")
    return z_img_t + input_zero_conv(z_eeg)


def adapter_forward(adapter: ControlAdapter, c_eeg: torch.Tensor, ctx, t, scales: Optional[Sequence[float]] = None
                    ) -> ControlResiduals:
    """Run the encoder copy on the control input and pass each block through its output zero conv."""
    tt = torch.as_tensor(t)
    if tt.numel() and (int(tt.min()) < 0 or int(tt.max()) > adapter.num_steps):
        raise ValueError(f"timestep out of range [0, {adapter.num_steps}]")
    tt = tt.long()
    if tt.dim() == 0:
        tt = tt.expand(c_eeg.shape[0])
    enc: EncoderOutput = adapter.encoder_copy(c_eeg, tt, ctx)
    blocks = enc.blocks
    if len(blocks) != adapter.num_blocks:
        raise ArchitectureMismatchError(f"encoder copy yields {len(blocks)} blocks, adapter has {adapter.num_blocks}")
    maps = [zc(b) for zc, b in zip(adapter.output_zero_convs, blocks)]
    if scales is None:
        scales = [1.0] * adapter.num_blocks
    if len(scales) != adapter.num_blocks:
        raise ValueError(f"need {adapter.num_blocks} control scales, got {len(scales)}")
    return ControlResiduals(maps, list(scales))


def guess_mode_scales(num_blocks: int, shallowest: float = 0.1) -> List[float]:
    """Geometric ramp: 1.0 at the deepest block (the bottleneck) down to ``shallowest`` at the first."""
    if num_blocks == 1:
        return [1.0]
    return [shallowest ** ((num_blocks - 1 - i) / (num_blocks - 1)) for i in range(num_blocks)]
