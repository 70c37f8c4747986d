"""Unified checkpoint: control model, optimizer, RNG, run config and backbone fingerprint."""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Optional

import torch

from .diffusion.training import TrainState, make_state
from .errors import BackboneLoadError
from .model import EEGControlModel
from .projection import ProjectionConfig

CHECKPOINT_FORMAT = "eegcontrol-checkpoint"
CHECKPOINT_VERSION = 1


class FingerprintMismatchError(BackboneLoadError):
    """The checkpoint was trained against a different backbone architecture."""


def model_digest(model: EEGControlModel) -> str:
    h = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()[:16]


def save_checkpoint(path, state: TrainState, backbone, *, config: Optional[dict] = None,
                    min_length: int = 1) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    model = state.model
    blob = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "fingerprint": backbone.fingerprint(),
        "architecture": {
            "block_shapes": [list(s) for s in model.adapter.block_shapes],
            "latent_shape": list(backbone.latent_shape),
            "channels": model.subject_layer.channels,
            "subjects": model.subject_layer.subject_ids,
            "projection": model.projection.config.to_dict(),
            "min_length": int(min_length),
        },
        "model": model.state_dict(),
        "optimizer": state.optimizer.state_dict(),
        "lr": state.optimizer.param_groups[0]["lr"],
        "rng": state.generator.get_state(),
        "seed": state.seed,
        "step": state.step,
        "samples_seen": state.samples_seen,
        "empty_captions": state.empty_captions,
        "config": config or {},
        "digest": model_digest(model),
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(blob, tmp)
    tmp.replace(path)
    return path


def read_checkpoint(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise BackboneLoadError(f"checkpoint not found: {path}")
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise BackboneLoadError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(blob, dict) or blob.get("format") != CHECKPOINT_FORMAT:
        raise BackboneLoadError(f"{path} is not a control-model checkpoint")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise BackboneLoadError(f"unsupported checkpoint version {blob.get('version')!r}")
    return blob


def load_checkpoint(path, backbone) -> TrainState:
    """Rebuild the training state; refuses a checkpoint made for another backbone architecture."""
    blob = read_checkpoint(path)
    if blob["fingerprint"] != backbone.fingerprint():
        raise FingerprintMismatchError(
            f"checkpoint {path} fingerprint {blob['fingerprint']} does not match backbone {backbone.fingerprint()}"
        )
    arch = blob["architecture"]
    pcfg = ProjectionConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in arch["projection"].items()})
    model = EEGControlModel.create(backbone, arch["channels"], arch["subjects"], pcfg,
                                   min_length=arch["min_length"], seed=blob["seed"])
    model.load_state_dict(blob["model"])
    state = make_state(model, lr=blob["lr"], seed=blob["seed"])
    state.optimizer.load_state_dict(blob["optimizer"])
    state.generator.set_state(blob["rng"])
    state.step = blob["step"]
    state.samples_seen = blob["samples_seen"]
    state.empty_captions = blob["empty_captions"]
    return state


def checkpoint_id(path) -> str:
    blob = read_checkpoint(path)
    return f"{blob['fingerprint']}-{blob['step']}-{blob['digest']}"
