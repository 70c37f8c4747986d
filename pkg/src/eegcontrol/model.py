"""The trainable half of the system: subject layer, EEG projection and control adapter."""

from __future__ import annotations

from typing import Iterable, Optional, Sequence

import torch
import torch.nn as nn

from .adapter import ControlAdapter, adapter_forward, build_control, clone_encoder
from .diffusion.residuals import ControlResiduals
from .errors import ConfigurationError
from .projection import EEGProjection, ProjectionConfig, SubjectLayer, init_projection


class EEGControlModel(nn.Module):
    def __init__(self, subject_layer: SubjectLayer, projection: EEGProjection, adapter: ControlAdapter):
        super().__init__()
        self.subject_layer = subject_layer
        self.projection = projection
        self.adapter = adapter

    @classmethod
    def create(
        cls,
        backbone,
        channels: int,
        subject_ids: Iterable[int],
        projection_config: ProjectionConfig,
        *,
        min_length: int,
        seed: int = 0,
    ) -> "EEGControlModel":
        if tuple(projection_config.target_latent_shape) != tuple(backbone.latent_shape):
            raise ConfigurationError(
                f"projection targets {projection_config.target_latent_shape} "
                f"but the backbone latent is {tuple(backbone.latent_shape)}"
            )
        projection = init_projection(projection_config, channels, seed, min_length)
        return cls(SubjectLayer(channels, subject_ids), projection, clone_encoder(backbone))

    def parameter_groups(self) -> dict:
        return {
            "subject_layer": list(self.subject_layer.parameters()),
            "projection": list(self.projection.parameters()),
            "encoder_copy": list(self.adapter.encoder_copy.parameters()),
            "input_zero_conv": list(self.adapter.input_zero_conv.parameters()),
            "output_zero_convs": list(self.adapter.output_zero_convs.parameters()),
        }

    def eeg_latents(self, eeg: torch.Tensor, subject_ids: Sequence[int]) -> torch.Tensor:
        return self.projection(self.subject_layer(eeg, subject_ids))

    def residuals(
        self,
        z_t: torch.Tensor,
        t,
        eeg: torch.Tensor,
        subject_ids: Sequence[int],
        ctx,
        scales: Optional[Sequence[float]] = None,
        zero_eeg: bool = False,
    ) -> ControlResiduals:
        z_eeg = self.eeg_latents(eeg, subject_ids)
        if zero_eeg:
            z_eeg = torch.zeros_like(z_eeg)
        c_eeg = build_control(z_t, z_eeg, self.adapter.input_zero_conv)
        return adapter_forward(self.adapter, c_eeg, ctx, t, scales)


def conditioned_noise(
    backbone,
    model: EEGControlModel,
    z_t: torch.Tensor,
    t,
    eeg: torch.Tensor,
    subject_ids: Sequence[int],
    backbone_ctx,
    adapter_ctx=None,
    scales: Optional[Sequence[float]] = None,
    zero_eeg: bool = False,
) -> torch.Tensor:
    """Noise prediction of the frozen backbone with the adapter's residuals injected."""
    res = model.residuals(z_t, t, eeg, subject_ids, backbone_ctx if adapter_ctx is None else adapter_ctx,
                          scales, zero_eeg)
    return backbone.predict_noise(z_t, t, backbone_ctx, res)
