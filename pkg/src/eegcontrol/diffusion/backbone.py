"""Frozen latent diffusion backbone: VAE, caption embedder, UNet and schedule."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import BackboneLoadError
from .residuals import ControlResiduals
from .schedule import NoiseSchedule
from .toy import CaptionEmbedder, TextContext, ToyUNet, ToyVAE

log = logging.getLogger(__name__)

BACKBONE_KINDS = ("toy", "pretrained_ldm")
TOY_FORMAT = "eegcontrol-toy-backbone"
TOY_FORMAT_VERSION = 1


def images_to_tensor(images) -> torch.Tensor:
    """Accept ``(H, W, 3)``, ``(B, H, W, 3)`` arrays or ``(B, 3, H, W)`` tensors; return ``(B, C, H, W)`` float."""
    if isinstance(images, torch.Tensor):
        x = images.float()
        if x.dim() == 3:
            x = x.unsqueeze(0)
        return x
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ValueError(f"expected image array (B, H, W, C), got shape {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))


def tensor_to_images(x: torch.Tensor) -> np.ndarray:
    return x.detach().clamp(0, 1).permute(0, 2, 3, 1).cpu().numpy().astype(np.float32)


class BackboneHandle:
    """Common surface of a frozen backbone; subclasses provide the networks."""

    kind: str = "abstract"
    schedule: NoiseSchedule
    frozen: bool = False

    def encode_captions(self, captions: Sequence[str]) -> TextContext:
        raise NotImplementedError

    @property
    def encoder(self) -> nn.Module:
        """The UNet encoder half (the module a control adapter clones)."""
        raise NotImplementedError

    def predict_noise(self, z_t, t, ctx, residuals: Optional[ControlResiduals] = None) -> torch.Tensor:
        raise NotImplementedError

    def block_shapes(self) -> List[tuple]:
        raise NotImplementedError

    @property
    def latent_shape(self) -> tuple:
        raise NotImplementedError

    @property
    def image_size(self) -> int:
        raise NotImplementedError

    def vae_moments(self, images):
        """Posterior mean and log-variance of the VAE encoder (unscaled)."""
        raise NotImplementedError

    def vae_encode(self, images, deterministic: bool = False, generator: Optional[torch.Generator] = None):
        mean, logvar = self.vae_moments(images)
        if deterministic:
            z = mean
        else:
            noise = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
            z = mean + torch.exp(0.5 * logvar) * noise
        return z * self.latent_scale

    def vae_decode(self, latents: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    @property
    def latent_scale(self) -> float:
        raise NotImplementedError

    def modules(self) -> Dict[str, nn.Module]:
        raise NotImplementedError

    def freeze(self) -> "BackboneHandle":
        for m in self.modules().values():
            m.eval()
            m.requires_grad_(False)
        self.frozen = True
        return self

    def state_snapshot(self) -> Dict[str, torch.Tensor]:
        return {f"{name}.{k}": v.detach().clone() for name, m in self.modules().items()
                for k, v in m.state_dict().items()}

    def fingerprint(self) -> str:
        """Hash of the architecture (block shapes, latent shape, schedule length)."""
        desc = {
            "kind": self.kind,
            "latent_shape": list(self.latent_shape),
            "block_shapes": [list(s) for s in self.block_shapes()],
            "num_steps": self.schedule.num_steps,
        }
        return hashlib.sha256(json.dumps(desc, sort_keys=True).encode()).hexdigest()[:16]


class ToyBackbone(BackboneHandle):
    kind = "toy"

    def __init__(self, vae: ToyVAE, unet: ToyUNet, text: CaptionEmbedder, schedule: NoiseSchedule,
                 class_names: Sequence[str] = ()):
        self.vae = vae
        self.unet = unet
        self.text = text
        self.schedule = schedule
        self.class_names = list(class_names)
        self.frozen = False

    @classmethod
    def build(cls, class_names: Sequence[str], *, image_size: int = 64, width: int = 32, ctx_dim: int = 64,
              latent_channels: int = 4, num_steps: int = 1000, seed: int = 0) -> "ToyBackbone":
        torch.manual_seed(seed)
        vae = ToyVAE(latent_channels, image_size)
        unet = ToyUNet(latent_channels, width, ctx_dim)
        text = CaptionEmbedder(CaptionEmbedder.vocab_for(class_names), ctx_dim)
        return cls(vae, unet, text, NoiseSchedule(num_steps), class_names)

    def modules(self):
        return {"vae": self.vae, "unet": self.unet, "text": self.text}

    @property
    def encoder(self):
        return self.unet.encoder

    @property
    def latent_shape(self):
        return self.vae.latent_shape

    @property
    def image_size(self):
        return self.vae.image_size

    @property
    def latent_scale(self):
        return self.vae.scaling_factor

    def block_shapes(self):
        return self.unet.encoder.block_shapes(self.latent_shape[1:])

    def encode_captions(self, captions):
        return self.text(list(captions))

    def predict_noise(self, z_t, t, ctx, residuals=None):
        t = self.schedule.check_t(t)
        if t.dim() == 0:
            t = t.expand(z_t.shape[0])
        return self.unet(z_t, t, ctx, residuals)

    def vae_moments(self, images):
        x = images_to_tensor(images)
        if x.shape[1] != 3:
            raise ValueError(f"expected 3-channel RGB images, got {x.shape[1]} channel(s)")
        if tuple(x.shape[-2:]) != (self.image_size, self.image_size):
            raise ValueError(f"expected {self.image_size}x{self.image_size} images, got {tuple(x.shape[-2:])}")
        return self.vae.moments(x)

    def vae_decode(self, latents):
        return self.vae.decode_raw(latents / self.vae.scaling_factor)

    def config(self) -> dict:
        return {
            "image_size": self.vae.image_size,
            "latent_channels": self.vae.latent_channels,
            "width": self.unet.encoder.width,
            "ctx_dim": self.text.dim,
            "schedule": self.schedule.to_dict(),
            "class_names": self.class_names,
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save({
            "format": TOY_FORMAT,
            "version": TOY_FORMAT_VERSION,
            "config": self.config(),
            "vocab": self.text.vocab,
            "fingerprint": self.fingerprint(),
            "vae": self.vae.state_dict(),
            "unet": self.unet.state_dict(),
            "text": self.text.state_dict(),
        }, path)
        return path

    @classmethod
    def load(cls, path) -> "ToyBackbone":
        path = Path(path)
        if not path.is_file():
            raise BackboneLoadError(f"toy backbone checkpoint not found: {path}")
        try:
            blob = torch.load(path, map_location="cpu", weights_only=True)
        except Exception as exc:
            raise BackboneLoadError(f"cannot read toy backbone checkpoint {path}: {exc}") from exc
        if not isinstance(blob, dict) or blob.get("format") != TOY_FORMAT:
            raise BackboneLoadError(f"{path} is not a toy backbone checkpoint")
        if blob.get("version") != TOY_FORMAT_VERSION:
            raise BackboneLoadError(f"unsupported toy backbone version {blob.get('version')!r}")
        cfg = blob["config"]
        vae = ToyVAE(cfg["latent_channels"], cfg["image_size"])
        unet = ToyUNet(cfg["latent_channels"], cfg["width"], cfg["ctx_dim"])
        text = CaptionEmbedder([w for w in blob["vocab"] if not w.startswith("<")], cfg["ctx_dim"])
        vae.load_state_dict(blob["vae"])
        unet.load_state_dict(blob["unet"])
        text.load_state_dict(blob["text"])
        bb = cls(vae, unet, text, NoiseSchedule(**cfg["schedule"]), cfg.get("class_names", []))
        if bb.fingerprint() != blob["fingerprint"]:
            raise BackboneLoadError(f"{path}: stored fingerprint does not match the rebuilt architecture")
        return bb.freeze()


def weights_dir() -> Path:
    """Directory for cached weights; override with ``EEGCONTROL_HOME``."""
    return Path(os.environ.get("EEGCONTROL_HOME", Path.home() / ".cache" / "eegcontrol"))


def load_backbone(kind: str, path: Union[str, Path, None]) -> BackboneHandle:
    if kind not in BACKBONE_KINDS:
        raise ValueError(f"unknown backbone kind {kind!r}; expected one of {BACKBONE_KINDS}")
    if path is None:
        raise BackboneLoadError(f"{kind} backbone needs a weights path")
    path = Path(path)
    if not path.is_absolute() and not path.exists():
        path = weights_dir() / path
    if not path.exists():
        raise BackboneLoadError(f"backbone weights not found: {path}")
    if kind == "toy":
        return ToyBackbone.load(path)
    from .sd import StableDiffusionBackbone

    return StableDiffusionBackbone.load(path)


def train_toy_backbone(
    images: np.ndarray,
    captions: Sequence[str],
    class_names: Sequence[str],
    *,
    vae_steps: int = 800,
    unet_steps: int = 2000,
    batch_size: int = 16,
    vae_lr: float = 2e-3,
    unet_lr: float = 1e-3,
    kl_weight: float = 1e-6,
    caption_dropout: float = 0.2,
    width: int = 32,
    num_steps: int = 1000,
    seed: int = 0,
) -> ToyBackbone:
    """Train the toy VAE, then the caption-conditioned UNet on its latents; return it frozen."""
    x_all = images_to_tensor(images)
    n = x_all.shape[0]
    if len(captions) != n:
        raise ValueError("need one caption per image")
    bb = ToyBackbone.build(class_names, image_size=x_all.shape[-1], width=width, num_steps=num_steps, seed=seed)
    gen = torch.Generator().manual_seed(seed)

    # distinct stimuli are few; train and cache on unique images only
    uniq, inverse = torch.unique(x_all.flatten(1), dim=0, return_inverse=True)
    x_uniq = uniq.view(-1, *x_all.shape[1:])
    m = x_uniq.shape[0]

    opt = torch.optim.Adam(bb.vae.parameters(), lr=vae_lr)
    for step in range(vae_steps):
        x = x_uniq[torch.randint(0, m, (min(batch_size, m),), generator=gen)]
        mean, logvar = bb.vae.moments(x)
        z = mean + torch.exp(0.5 * logvar) * torch.randn(mean.shape, generator=gen)
        recon = bb.vae.decode_raw(z)
        kl = 0.5 * (mean.pow(2) + logvar.exp() - 1.0 - logvar).mean()
        loss = F.mse_loss(recon, x) + F.l1_loss(recon, x) + kl_weight * kl
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % 200 == 0:
            log.info("vae step %d loss %.4f", step, loss.item())
    bb.vae.eval().requires_grad_(False)
    with torch.no_grad():
        mean_u, logvar_u = bb.vae.moments(x_uniq)
        bb.vae.scaling_factor.fill_(1.0 / float(mean_u.std().clamp_min(1e-4)))
        mean_all, std_all = mean_u[inverse], torch.exp(0.5 * logvar_u[inverse])

    params = list(bb.unet.parameters()) + list(bb.text.parameters())
    opt = torch.optim.Adam(params, lr=unet_lr)
    caps = list(captions)
    for step in range(unet_steps):
        idx = torch.randint(0, n, (min(batch_size, n),), generator=gen)
        z0 = (mean_all[idx] + std_all[idx] * torch.randn(mean_all[idx].shape, generator=gen)) * bb.latent_scale
        t = torch.randint(1, bb.schedule.T + 1, (len(idx),), generator=gen)
        eps = torch.randn(z0.shape, generator=gen)
        z_t = bb.schedule.add_noise(z0, t, eps)
        drop = torch.rand(len(idx), generator=gen) < caption_dropout
        batch_caps = ["" if d else caps[i] for i, d in zip(idx.tolist(), drop.tolist())]
        pred = bb.predict_noise(z_t, t, bb.encode_captions(batch_caps))
        loss = F.mse_loss(pred, eps)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % 200 == 0:
            log.info("unet step %d loss %.4f", step, loss.item())
    return bb.freeze()
