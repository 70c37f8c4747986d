"""Pretrained latent diffusion backbone loaded from a diffusers-format directory.

Optional: needs ``diffusers`` and ``transformers``. The directory must hold
``unet/``, ``vae/``, ``text_encoder/`` and ``tokenizer/`` subfolders, as a
Stable Diffusion 2.1-base snapshot does. Sampling uses the ``epsilon``
objective only.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import List, Sequence

import torch
import torch.nn as nn

from ..errors import ArchitectureMismatchError, BackboneLoadError
from .backbone import BackboneHandle, images_to_tensor
from .residuals import EncoderOutput
from .schedule import NoiseSchedule
from .toy import TextContext


def _pretrained_index(t: torch.Tensor) -> torch.Tensor:
    # our step t in 1..T is index t-1 of the pretrained schedule; t=0 is clamped to its first index
    return (t - 1).clamp_min(0)


class LDMEncoder(nn.Module):
    """Encoder half of a ``UNet2DConditionModel``: time embedding, input conv, down blocks and mid block.

    Skips are listed in the order the UNet's up path consumes them, so they line
    up with ``down_block_additional_residuals``.
    """

    def __init__(self, unet):
        super().__init__()
        self.time_proj = unet.time_proj
        self.time_embedding = unet.time_embedding
        self.conv_in = unet.conv_in
        self.down_blocks = unet.down_blocks
        self.mid_block = unet.mid_block

    def forward(self, z: torch.Tensor, t: torch.Tensor, ctx: TextContext) -> EncoderOutput:
        t = torch.as_tensor(t).long().expand(z.shape[0]) if torch.as_tensor(t).dim() == 0 else t.long()
        emb = self.time_embedding(self.time_proj(_pretrained_index(t)).to(z.dtype))
        h = self.conv_in(z)
        skips: List[torch.Tensor] = [h]
        for block in self.down_blocks:
            if getattr(block, "has_cross_attention", False):
                h, res = block(hidden_states=h, temb=emb, encoder_hidden_states=ctx.tokens)
            else:
                h, res = block(hidden_states=h, temb=emb)
            skips.extend(res)
        mid = self.mid_block(h, emb, encoder_hidden_states=ctx.tokens)
        return EncoderOutput(skips, mid, emb)


class StableDiffusionBackbone(BackboneHandle):
    kind = "pretrained_ldm"

    def __init__(self, unet, vae, text_encoder, tokenizer, schedule: NoiseSchedule):
        self.unet = unet
        self.vae = vae
        self.text_encoder = text_encoder
        self.tokenizer = tokenizer
        self.schedule = schedule
        self._encoder = LDMEncoder(unet)
        self.frozen = False
        self._block_shapes = None

    @classmethod
    def load(cls, path) -> "StableDiffusionBackbone":
        path = Path(path)
        try:
            from diffusers import AutoencoderKL, UNet2DConditionModel
            from transformers import CLIPTextModel, CLIPTokenizer
        except ImportError as exc:
            raise BackboneLoadError("the pretrained backbone needs the 'diffusers' and 'transformers' packages") from exc
        missing = [d for d in ("unet", "vae", "text_encoder", "tokenizer") if not (path / d).is_dir()]
        if missing:
            raise BackboneLoadError(f"{path} lacks subfolder(s) {missing}")
        sched_file = path / "scheduler" / "scheduler_config.json"
        sched = json.loads(sched_file.read_text()) if sched_file.is_file() else {}
        if sched.get("prediction_type", "epsilon") != "epsilon":
            raise BackboneLoadError(f"{path}: only epsilon-prediction models are supported, "
                                    f"got {sched['prediction_type']!r}")
        try:
            unet = UNet2DConditionModel.from_pretrained(path, subfolder="unet")
            vae = AutoencoderKL.from_pretrained(path, subfolder="vae")
            text = CLIPTextModel.from_pretrained(path, subfolder="text_encoder")
            tok = CLIPTokenizer.from_pretrained(path, subfolder="tokenizer")
        except (OSError, ValueError) as exc:
            raise BackboneLoadError(f"cannot load pretrained backbone from {path}: {exc}") from exc
        return cls.from_modules(unet, vae, text, tok, sched).freeze()

    @classmethod
    def from_modules(cls, unet, vae, text_encoder, tokenizer, scheduler_config: dict = None):
        sc = scheduler_config or {}
        schedule = NoiseSchedule(
            sc.get("num_train_timesteps", 1000),
            sc.get("beta_start", 0.00085),
            sc.get("beta_end", 0.012),
            kind=sc.get("beta_schedule", "scaled_linear"),
        )
        return cls(unet, vae, text_encoder, tokenizer, schedule)

    def modules(self):
        return {"unet": self.unet, "vae": self.vae, "text_encoder": self.text_encoder}

    @property
    def encoder(self):
        return self._encoder

    @property
    def latent_shape(self):
        s = self.unet.config.sample_size
        return (self.unet.config.in_channels, s, s)

    @property
    def image_size(self):
        return self.unet.config.sample_size * 2 ** (len(self.vae.config.block_out_channels) - 1)

    @property
    def latent_scale(self):
        return float(self.vae.config.scaling_factor)

    def block_shapes(self):
        if self._block_shapes is None:
            z = torch.zeros((1, *self.latent_shape))
            with torch.no_grad():
                out = self._encoder(z, torch.ones(1, dtype=torch.long), self.encode_captions([""]))
            self._block_shapes = [tuple(b.shape[1:]) for b in out.blocks]
        return self._block_shapes

    def encode_captions(self, captions: Sequence[str]) -> TextContext:
        tok = self.tokenizer(list(captions), padding="max_length", max_length=self.tokenizer.model_max_length,
                             truncation=True, return_tensors="pt")
        with torch.no_grad():
            hidden = self.text_encoder(tok.input_ids)[0]
        return TextContext(hidden, torch.ones(hidden.shape[:2], dtype=torch.bool))

    def predict_noise(self, z_t, t, ctx, residuals=None):
        t = self.schedule.check_t(t)
        if t.dim() == 0:
            t = t.expand(z_t.shape[0])
        down = mid = None
        if residuals is not None:
            shapes = self.block_shapes()
            if len(residuals.maps) != len(shapes):
                raise ArchitectureMismatchError(
                    f"backbone exposes {len(shapes)} blocks but adapter produced {len(residuals.maps)} residuals")
            for i, (m, s) in enumerate(zip(residuals.maps, shapes)):
                if tuple(m.shape[1:]) != tuple(s):
                    raise ArchitectureMismatchError(f"block {i}: expected {s}, residual {tuple(m.shape[1:])}")
            scaled = residuals.scaled()
            down, mid = tuple(scaled[:-1]), scaled[-1]
        return self.unet(z_t, _pretrained_index(t), encoder_hidden_states=ctx.tokens,
                         down_block_additional_residuals=down, mid_block_additional_residual=mid).sample

    def vae_moments(self, images):
        x = images_to_tensor(images)
        if x.shape[1] != 3:
            raise ValueError(f"expected 3-channel RGB images, got {x.shape[1]} channel(s)")
        if tuple(x.shape[-2:]) != (self.image_size, self.image_size):
            raise ValueError(f"expected {self.image_size}x{self.image_size} images, got {tuple(x.shape[-2:])}")
        dist = self.vae.encode(2.0 * x - 1.0).latent_dist
        return dist.mean, dist.logvar

    def vae_decode(self, latents):
        return (self.vae.decode(latents / self.latent_scale).sample + 1.0) / 2.0
