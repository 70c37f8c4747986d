"""Noise-prediction training of the control model against a frozen backbone."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from ..data.preprocess import standardize_array
from ..data.records import PairedSample
from ..errors import TrainingDivergedError
from ..model import EEGControlModel, conditioned_noise
from ..semantic import EMPTY_CAPTION, EEGDecoder, decode_labels, make_caption

log = logging.getLogger(__name__)


@dataclass
class PreparedData:
    """Everything a training step needs, computed once from the frozen parts."""

    sample_ids: List[str]
    eeg: torch.Tensor  # (N, C, L) standardized
    subjects: List[int]
    labels: np.ndarray
    captions: List[str]  # coarse captions from the frozen decoder
    latent_mean: torch.Tensor  # (N, D, H, W) unscaled VAE posterior mean
    latent_std: torch.Tensor
    images: np.ndarray  # (N, H, W, 3)

    def __len__(self):
        return len(self.sample_ids)


def prepare_data(
    samples: Sequence[PairedSample],
    backbone,
    decoder: Optional[EEGDecoder],
    class_names: Sequence[str],
) -> PreparedData:
    """Standardize EEG, caption it with the frozen decoder and cache VAE posteriors per stimulus."""
    if not samples:
        raise ValueError("no samples to prepare")
    eeg = np.stack([standardize_array(s.eeg.samples)[0] for s in samples])
    labels = np.array([s.eeg.class_label for s in samples])
    if decoder is not None:
        predicted = decode_labels(eeg, decoder)
    else:
        predicted = labels
    captions = [make_caption(int(k), class_names) for k in predicted]

    refs: Dict[str, int] = {}
    uniq = []
    order = []
    for s in samples:
        ref = s.eeg.stimulus_ref
        if ref not in refs:
            refs[ref] = len(uniq)
            uniq.append(s.image)
        order.append(refs[ref])
    with torch.no_grad():
        mean, logvar = backbone.vae_moments(np.stack(uniq))
    idx = torch.tensor(order)
    return PreparedData(
        sample_ids=[s.sample_id for s in samples],
        eeg=torch.from_numpy(eeg),
        subjects=[s.eeg.subject_id for s in samples],
        labels=labels,
        captions=captions,
        latent_mean=mean[idx],
        latent_std=torch.exp(0.5 * logvar[idx]),
        images=np.stack([s.image for s in samples]),
    )


@dataclass
class TrainState:
    model: EEGControlModel
    optimizer: torch.optim.Optimizer
    generator: torch.Generator
    seed: int
    step: int = 0
    samples_seen: int = 0
    empty_captions: int = 0

    @property
    def empty_fraction(self) -> float:
        return self.empty_captions / self.samples_seen if self.samples_seen else 0.0


def make_state(model: EEGControlModel, *, lr: float = 1e-5, seed: int = 0) -> TrainState:
    trainable = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(trainable, lr=lr)
    return TrainState(model, opt, torch.Generator().manual_seed(seed), seed)


def draw_captions(captions: Sequence[str], drop_enabled: bool, generator: torch.Generator,
                  drop_prob: float = 0.5) -> List[str]:
    """Replace each caption by the empty caption independently with probability ``drop_prob``."""
    if not drop_enabled:
        return list(captions)
    drop = torch.rand(len(captions), generator=generator) < drop_prob
    return [EMPTY_CAPTION if d else c for c, d in zip(captions, drop.tolist())]


@dataclass
class BatchDraw:
    """Random quantities of one step (kept so a loss can be re-evaluated exactly)."""

    idx: torch.Tensor
    z0: torch.Tensor
    t: torch.Tensor
    eps: torch.Tensor
    captions: List[str]


def draw_batch(data: PreparedData, idx, backbone, generator: torch.Generator, drop_enabled: bool) -> BatchDraw:
    idx = torch.as_tensor(idx, dtype=torch.long)
    mean, std = data.latent_mean[idx], data.latent_std[idx]
    z0 = (mean + std * torch.randn(mean.shape, generator=generator)) * backbone.latent_scale
    t = torch.randint(1, backbone.schedule.T + 1, (len(idx),), generator=generator)
    eps = torch.randn(z0.shape, generator=generator)
    caps = draw_captions([data.captions[i] for i in idx.tolist()], drop_enabled, generator)
    return BatchDraw(idx, z0, t, eps, caps)


def batch_loss(backbone, model: EEGControlModel, data: PreparedData, draw: BatchDraw,
               zero_eeg: bool = False, dtype=torch.float32) -> torch.Tensor:
    z0, eps = draw.z0.to(dtype), draw.eps.to(dtype)
    z_t = backbone.schedule.add_noise(z0, draw.t, eps)
    ctx = backbone.encode_captions(draw.captions)
    if dtype != torch.float32:
        ctx = type(ctx)(ctx.tokens.to(dtype), ctx.mask)
    eeg = data.eeg[draw.idx].to(dtype)
    subj = [data.subjects[i] for i in draw.idx.tolist()]
    pred = conditioned_noise(backbone, model, z_t, draw.t, eeg, subj, ctx, zero_eeg=zero_eeg)
    return F.mse_loss(pred, eps)


def backbone_loss(backbone, data: PreparedData, draw: BatchDraw) -> torch.Tensor:
    """The same objective evaluated on the backbone alone (no adapter)."""
    z_t = backbone.schedule.add_noise(draw.z0, draw.t, draw.eps)
    pred = backbone.predict_noise(z_t, draw.t, backbone.encode_captions(draw.captions))
    return F.mse_loss(pred, draw.eps)


def training_step(backbone, data: PreparedData, idx, state: TrainState, drop_enabled: bool) -> float:
    """One optimizer step on the mean squared noise-prediction error; only the control model moves."""
    state.model.train()
    draw = draw_batch(data, idx, backbone, state.generator, drop_enabled)
    loss = batch_loss(backbone, state.model, data, draw)
    if not torch.isfinite(loss):
        raise TrainingDivergedError("non-finite loss; step aborted", {
            "step": state.step,
            "timesteps": draw.t.tolist(),
            "max_abs_latent": float(draw.z0.abs().max()),
            "max_abs_eeg": float(data.eeg[draw.idx].abs().max()),
        })
    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    state.optimizer.step()
    state.step += 1
    state.samples_seen += len(draw.captions)
    state.empty_captions += sum(c == EMPTY_CAPTION for c in draw.captions)
    return float(loss.detach())


def epoch_batches(n: int, batch_size: int, seed: int, epoch: int) -> List[np.ndarray]:
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


@dataclass
class LossLog:
    path: Optional[Path] = None
    records: List[dict] = field(default_factory=list)

    def append(self, record: dict) -> None:
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def train(
    backbone,
    data: PreparedData,
    state: TrainState,
    *,
    total_steps: int,
    batch_size: int,
    drop_enabled: bool,
    loss_log: Optional[LossLog] = None,
    checkpoint_every: int = 0,
    on_checkpoint: Optional[Callable[[TrainState], None]] = None,
) -> LossLog:
    """Run until ``state.step == total_steps``; resumes from ``state.step`` if it is already > 0."""
    loss_log = loss_log or LossLog()
    per_epoch = math.ceil(len(data) / batch_size)
    while state.step < total_steps:
        epoch, pos = divmod(state.step, per_epoch)
        batches = epoch_batches(len(data), batch_size, state.seed, epoch)
        for idx in batches[pos:]:
            seen_before, empty_before = state.samples_seen, state.empty_captions
            loss = training_step(backbone, data, idx, state, drop_enabled)
            n = state.samples_seen - seen_before
            loss_log.append({
                "step": state.step,
                "epoch": epoch,
                "loss": loss,
                "empty_caption_fraction": (state.empty_captions - empty_before) / n,
                "cumulative_empty_fraction": state.empty_fraction,
                "samples_seen": state.samples_seen,
            })
            if checkpoint_every and on_checkpoint and state.step % checkpoint_every == 0:
                on_checkpoint(state)
            if state.step >= total_steps:
                break
    if on_checkpoint:
        on_checkpoint(state)
    return loss_log


@torch.no_grad()
def evaluation_loss(backbone, model: EEGControlModel, data: PreparedData, *, seed: int = 1234,
                    repeats: int = 4, drop_enabled: bool = False, zero_eeg: bool = False) -> float:
    """Loss averaged over a fixed set of (t, noise) draws; comparable across training."""
    gen = torch.Generator().manual_seed(seed)
    model.eval()
    total = 0.0
    for _ in range(repeats):
        draw = draw_batch(data, torch.arange(len(data)), backbone, gen, drop_enabled)
        total += float(batch_loss(backbone, model, data, draw, zero_eeg=zero_eeg))
    model.train()
    return total / repeats
