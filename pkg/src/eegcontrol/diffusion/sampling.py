"""Reverse-process sampling with EEG control."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import torch

from ..adapter import adapter_forward, guess_mode_scales
from ..data.preprocess import standardize_array
from ..data.records import EEGRecording
from ..model import EEGControlModel
from ..semantic import EMPTY_CAPTION, EEGDecoder, decode_labels, make_caption
from .backbone import BackboneHandle, tensor_to_images

DEFAULT_GUIDANCE = 1.0


@dataclass
class GenerationRequest:
    eeg: EEGRecording
    subject_id: Optional[int] = None
    caption_override: Optional[str] = None
    steps: int = 50
    guess_mode: bool = False
    control_scales: Optional[List[float]] = None
    guidance_scale: Optional[float] = None
    seed: int = 0
    stochastic: bool = False
    zero_eeg: bool = False  # coarse-only ablation: EEG latents replaced by zeros

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.subject_id is None:
            self.subject_id = self.eeg.subject_id

    def sampler_key(self) -> tuple:
        """Requests with equal keys can share one batched reverse process."""
        scales = None if self.control_scales is None else tuple(self.control_scales)
        return (self.steps, self.guess_mode, scales, self.effective_guidance, self.stochastic, self.zero_eeg)

    @property
    def effective_guidance(self) -> float:
        if self.guidance_scale is not None:
            return float(self.guidance_scale)
        return 1.0 if self.guess_mode else DEFAULT_GUIDANCE

    def record(self) -> dict:
        """JSON-friendly description (the EEG itself is referenced by id)."""
        d = {k: v for k, v in asdict(self).items() if k != "eeg"}
        d["eeg_id"] = self.eeg.sample_id
        d["guidance_scale"] = self.effective_guidance
        return d


@dataclass
class Generator:
    """Immutable bundle needed to answer generation requests."""

    backbone: BackboneHandle
    model: Optional[EEGControlModel]
    decoder: Optional[EEGDecoder]
    class_names: Sequence[str] = field(default_factory=list)

    def caption_for(self, req: GenerationRequest) -> str:
        if req.caption_override is not None:
            return req.caption_override
        if self.decoder is None:
            return make_caption(req.eeg.class_label, self.class_names)
        std = standardize_array(req.eeg.samples)[0]
        return make_caption(int(decode_labels(std[None], self.decoder)[0]), self.class_names)


def _initial_noise(seeds: Sequence[int], shape) -> torch.Tensor:
    return torch.stack([torch.randn(shape, generator=torch.Generator().manual_seed(int(s))) for s in seeds])


def _ddim_step(schedule, z, eps, t, t_prev, eta, noise):
    ab = schedule.alphas_cumprod[t].to(z.dtype)
    ab_prev = schedule.alphas_cumprod[t_prev].to(z.dtype)
    x0 = (z - (1 - ab).sqrt() * eps) / ab.sqrt()
    sigma = eta * ((1 - ab_prev) / (1 - ab) * (1 - ab / ab_prev)).sqrt()
    dir_coef = (1 - ab_prev - sigma**2).clamp_min(0).sqrt()
    z = ab_prev.sqrt() * x0 + dir_coef * eps
    if eta > 0 and t_prev > 0:
        z = z + sigma * noise
    return z


@torch.no_grad()
def sample_latents(gen: Generator, requests: Sequence[GenerationRequest], *, use_adapter: bool = True) -> torch.Tensor:
    """Run one batched reverse process; all requests must share :meth:`GenerationRequest.sampler_key`."""
    keys = {r.sampler_key() for r in requests}
    if len(keys) != 1:
        raise ValueError("requests in one batch must share sampler settings")
    first = requests[0]
    bb = gen.backbone
    schedule = bb.schedule
    n = len(requests)

    captions = [gen.caption_for(r) for r in requests]
    backbone_caps = [EMPTY_CAPTION] * n if first.guess_mode else captions
    backbone_ctx = bb.encode_captions(backbone_caps)
    adapter_ctx = bb.encode_captions(captions)
    guidance = first.effective_guidance
    if guidance != 1.0:
        uncond_ctx = bb.encode_captions([EMPTY_CAPTION] * n)

    model = gen.model if use_adapter else None
    if model is not None:
        model.eval()
        eeg = torch.from_numpy(np.stack([standardize_array(r.eeg.samples)[0] for r in requests]))
        subjects = [r.subject_id for r in requests]
        for s in set(subjects):
            model.subject_layer.matrix(s)  # unknown subject -> ValueError before any work
        scales = first.control_scales
        if scales is None:
            nb = model.adapter.num_blocks
            scales = guess_mode_scales(nb) if first.guess_mode else [1.0] * nb
        z_eeg = model.eeg_latents(eeg, subjects)
        if first.zero_eeg:
            z_eeg = torch.zeros_like(z_eeg)
        zconv = model.adapter.input_zero_conv(z_eeg)

    def eps_fn(z, t, bctx, actx):
        if model is None:
            return bb.predict_noise(z, t, bctx)
        res = adapter_forward(model.adapter, z + zconv, actx, t, scales)
        return bb.predict_noise(z, t, bctx, res)

    z = _initial_noise([r.seed for r in requests], bb.latent_shape)
    noise_gens = [torch.Generator().manual_seed(int(r.seed) + 1) for r in requests]
    timesteps = schedule.sampling_timesteps(first.steps)
    eta = 1.0 if first.stochastic else 0.0
    for i, t in enumerate(timesteps):
        t_prev = timesteps[i + 1] if i + 1 < len(timesteps) else 0
        tt = torch.full((n,), t, dtype=torch.long)
        eps = eps_fn(z, tt, backbone_ctx, adapter_ctx)
        if guidance != 1.0:
            eps_u = eps_fn(z, tt, uncond_ctx, uncond_ctx)
            eps = eps_u + guidance * (eps - eps_u)
        noise = torch.stack([torch.randn(bb.latent_shape, generator=g) for g in noise_gens]) if eta > 0 else None
        z = _ddim_step(schedule, z, eps, t, t_prev, eta, noise)
    return z


def sample_batch(gen: Generator, requests: Sequence[GenerationRequest], *, use_adapter: bool = True,
                 return_latents: bool = False):
    """Generate images for requests, batching those with identical sampler settings."""
    groups = {}
    for i, r in enumerate(requests):
        groups.setdefault(r.sampler_key(), []).append(i)
    latents: List[Optional[torch.Tensor]] = [None] * len(requests)
    for idxs in groups.values():
        z = sample_latents(gen, [requests[i] for i in idxs], use_adapter=use_adapter)
        for j, i in enumerate(idxs):
            latents[i] = z[j]
    z_all = torch.stack(latents)
    with torch.no_grad():
        images = tensor_to_images(gen.backbone.vae_decode(z_all))
    return (images, z_all) if return_latents else images


def sample(request: GenerationRequest, gen: Generator) -> np.ndarray:
    """Generate one image ``(H, W, 3)`` in [0, 1]; a pure function of request and state."""
    return sample_batch(gen, [request])[0]
