"""End-to-end steps shared by the command line and the acceptance suite.

Every function takes a validated :class:`RunConfig`; all randomness is derived
from ``training.seed`` so equal configs give equal artifacts.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .checkpoint import checkpoint_id, load_checkpoint, read_checkpoint, save_checkpoint
from .config import RunConfig
from .data.layout import load_dataset, write_image
from .data.records import PairedSample
from .diffusion.backbone import load_backbone, train_toy_backbone
from .diffusion.sampling import GenerationRequest, Generator, sample_batch
from .diffusion.training import LossLog, TrainState, make_state, prepare_data, train
from .errors import ConfigurationError
from .metrics.classifier import ImageClassifier, train_image_classifier
from .metrics.report import TABLE_HEADER, EvalEntry, EvalManifest, MetricsReport, evaluate_images
from .model import EEGControlModel
from .semantic import EEGDecoder, make_caption, train_decoder

log = logging.getLogger(__name__)

LOSS_LOG_NAME = "loss.jsonl"
LAST_CHECKPOINT = "last.pt"
ABLATION_SCHEMA_VERSION = 1


def run_name(drop_enabled: bool) -> str:
    return "drop" if drop_enabled else "nodrop"


def load_split(cfg: RunConfig, split: str):
    ds = cfg.dataset
    manifest, samples = load_dataset(cfg.resolve(ds.root), split, subjects=ds.subjects, image_size=ds.image_size)
    if manifest.dataset_name != ds.name:
        raise ConfigurationError(f"dataset at {ds.root} is {manifest.dataset_name!r}, config says {ds.name!r}")
    if not samples:
        raise ConfigurationError(f"split {split!r} has no samples for subjects {ds.subjects}")
    return manifest, [_crop(s, manifest.window_length) for s in samples]


def _crop(sample: PairedSample, length: int) -> PairedSample:
    """Trim trailing samples so every trial shares the dataset's common length."""
    if sample.eeg.length <= length:
        return sample
    return replace(sample, eeg=replace(sample.eeg, samples=sample.eeg.samples[:, :length]))


def run_train_decoder(cfg: RunConfig) -> Path:
    manifest, samples = load_split(cfg, cfg.dataset.split)
    dec = train_decoder(samples, epochs=cfg.decoder.epochs, seed=cfg.seed,
                        num_classes=manifest.num_classes, hidden=cfg.decoder.hidden)
    return dec.save(cfg.resolve(cfg.decoder.path))


def run_train_backbone(cfg: RunConfig) -> Path:
    if cfg.backbone.kind != "toy":
        raise ConfigurationError("only the toy backbone can be trained here")
    manifest, samples = load_split(cfg, cfg.dataset.split)
    captions = [make_caption(s.eeg.class_label, manifest.class_names) for s in samples]
    bb = train_toy_backbone(np.stack([s.image for s in samples]), captions, manifest.class_names,
                            vae_steps=cfg.backbone.vae_steps, unet_steps=cfg.backbone.unet_steps,
                            width=cfg.backbone.width, seed=cfg.seed)
    return bb.save(cfg.resolve(cfg.backbone.path))


def run_train_classifier(cfg: RunConfig) -> Path:
    manifest, samples = load_split(cfg, cfg.dataset.split)
    clf = train_image_classifier(np.stack([s.image for s in samples]), [s.eeg.class_label for s in samples],
                                 manifest.num_classes, steps=cfg.classifier.steps, seed=cfg.seed)
    return clf.save(cfg.resolve(cfg.classifier.path))


def _backbone(cfg: RunConfig):
    return load_backbone(cfg.backbone.kind, cfg.resolve(cfg.backbone.path))


def _decoder(cfg: RunConfig) -> EEGDecoder:
    return EEGDecoder.load(cfg.resolve(cfg.decoder.path))


@dataclass
class TrainResult:
    checkpoint: Path
    log: LossLog
    state: TrainState


def _trim_log(path: Path, step: int) -> None:
    """Drop log lines written after the checkpoint we resume from."""
    if not path.is_file():
        return
    keep = [ln for ln in path.read_text().splitlines() if ln and json.loads(ln)["step"] <= step]
    path.write_text("".join(ln + "\n" for ln in keep))


def run_train(cfg: RunConfig, *, resume: bool = True, drop_enabled: Optional[bool] = None,
              max_steps: Optional[int] = None) -> TrainResult:
    """Train the control model; resumes from ``<checkpoint_dir>/<drop|nodrop>/last.pt`` when present."""
    drop = cfg.training.drop_enabled if drop_enabled is None else drop_enabled
    cfg.require_paths("dataset", "backbone", "decoder")
    manifest, samples = load_split(cfg, cfg.dataset.split)
    backbone = _backbone(cfg)
    decoder = _decoder(cfg)
    pcfg = cfg.projection.build()

    out_dir = cfg.resolve(cfg.paths.checkpoint_dir) / run_name(drop)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / LAST_CHECKPOINT
    log_path = out_dir / LOSS_LOG_NAME

    data = prepare_data(samples, backbone, decoder, manifest.class_names)
    tr = cfg.training
    total = max_steps or tr.max_steps or tr.epochs * math.ceil(len(data) / tr.batch_size)

    if resume and ckpt.is_file():
        state = load_checkpoint(ckpt, backbone)
        _trim_log(log_path, state.step)
        log.info("resuming %s from step %d", ckpt, state.step)
    else:
        model = EEGControlModel.create(backbone, manifest.channels, manifest.subjects, pcfg,
                                       min_length=manifest.window_length, seed=cfg.seed)
        state = make_state(model, lr=tr.learning_rate, seed=cfg.seed)
        if log_path.exists():
            log_path.unlink()

    run_cfg = cfg.to_dict()
    run_cfg["training"]["drop_enabled"] = drop

    def on_checkpoint(st: TrainState) -> None:
        save_checkpoint(ckpt, st, backbone, config=run_cfg, min_length=manifest.window_length)
        if tr.checkpoint_every and st.step % tr.checkpoint_every == 0:
            save_checkpoint(out_dir / f"step_{st.step:07d}.pt", st, backbone, config=run_cfg,
                            min_length=manifest.window_length)

    loss_log = train(backbone, data, state, total_steps=total, batch_size=tr.batch_size, drop_enabled=drop,
                     loss_log=LossLog(log_path), checkpoint_every=tr.checkpoint_every, on_checkpoint=on_checkpoint)
    return TrainResult(ckpt, loss_log, state)


def parse_selector(text: Optional[str]) -> Dict[str, str]:
    """``"subject=4,class=2,limit=8"`` -> dict; keys: subject, class, id, limit."""
    out: Dict[str, str] = {}
    if not text:
        return out
    for part in text.split(","):
        if "=" not in part:
            raise ConfigurationError(f"selector term {part!r} must be key=value")
        k, v = (x.strip() for x in part.split("=", 1))
        if k not in ("subject", "class", "id", "limit"):
            raise ConfigurationError(f"unknown selector key {k!r}")
        out[k] = v
    return out


def select_samples(samples: Sequence[PairedSample], selector: Dict[str, str]) -> List[PairedSample]:
    out = list(samples)
    if "subject" in selector:
        out = [s for s in out if s.eeg.subject_id == int(selector["subject"])]
    if "class" in selector:
        out = [s for s in out if s.eeg.class_label == int(selector["class"])]
    if "id" in selector:
        ids = set(selector["id"].split("+"))
        out = [s for s in out if s.sample_id in ids]
    if "limit" in selector:
        out = out[: int(selector["limit"])]
    return out


def build_requests(cfg: RunConfig, samples: Sequence[PairedSample], *, guess_mode: Optional[bool] = None,
                   zero_eeg: bool = False) -> List[GenerationRequest]:
    sm = cfg.sampling
    guess = sm.guess_mode if guess_mode is None else guess_mode
    return [
        GenerationRequest(s.eeg, steps=sm.steps, guess_mode=guess, control_scales=sm.scales,
                          guidance_scale=sm.guidance, seed=cfg.seed * 1_000_003 + i, stochastic=sm.stochastic,
                          zero_eeg=zero_eeg)
        for i, s in enumerate(samples)
    ]


def _load_generator(cfg: RunConfig, checkpoint: Path, class_names):
    backbone = _backbone(cfg)
    state = load_checkpoint(checkpoint, backbone)
    return Generator(backbone, state.model, _decoder(cfg), class_names)


def run_generate(cfg: RunConfig, checkpoint, *, selector: Optional[str] = None, guess_mode: Optional[bool] = None,
                 zero_eeg: bool = False, out_dir=None) -> Path:
    """Write images, per-image sidecar records and ``generations.json`` for the evaluation split."""
    sel = parse_selector(selector)
    cfg.require_paths("dataset", "backbone", "decoder")
    checkpoint = Path(checkpoint)
    read_checkpoint(checkpoint)
    manifest, samples = load_split(cfg, cfg.dataset.eval_split)
    chosen = select_samples(samples, sel)
    if not chosen:
        raise ConfigurationError(f"selector {selector!r} matches no samples")
    gen = _load_generator(cfg, checkpoint, manifest.class_names)
    ckpt_id = checkpoint_id(checkpoint)

    out = Path(out_dir) if out_dir is not None else cfg.resolve(cfg.paths.output_dir) / "generations"
    for sub in ("images", "ground_truth", "records"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    requests = build_requests(cfg, chosen, guess_mode=guess_mode, zero_eeg=zero_eeg)
    images = sample_batch(gen, requests)

    entries = []
    for s, req, img in zip(chosen, requests, images):
        gen_rel = f"images/{s.sample_id}.png"
        gt_rel = f"ground_truth/{s.sample_id}.png"
        write_image(out / gen_rel, img)
        write_image(out / gt_rel, s.image)
        record = req.record()
        record.update({
            "caption": gen.caption_for(req),
            "class_label": s.eeg.class_label,
            "checkpoint_id": ckpt_id,
            "backbone_fingerprint": gen.backbone.fingerprint(),
            "image": gen_rel,
            "ground_truth": gt_rel,
        })
        (out / "records" / f"{s.sample_id}.json").write_text(json.dumps(record, indent=1, sort_keys=True) + "\n")
        entries.append(EvalEntry(gt_rel, gen_rel, s.eeg.class_label))
    em = EvalManifest(entries, n_way=min(cfg.classifier.n_way, manifest.num_classes), k=cfg.classifier.k,
                      checkpoint_id=ckpt_id, root=out)
    return em.save(out / "generations.json")


def run_evaluate(manifest_path, classifier_path, *, seed: int = 0, out=None) -> MetricsReport:
    from .metrics.report import evaluate_run, write_report

    em = EvalManifest.load(manifest_path)
    clf = ImageClassifier.load(classifier_path)
    report = evaluate_run(em, clf, seed=seed)
    if out is not None:
        write_report(out, report)
    return report


def _row(label: str, report: MetricsReport, **flags) -> dict:
    return {"label": label, **flags, "metrics": report.to_dict()}


def run_ablate(cfg: RunConfig, *, train_missing: bool = False, out_dir=None) -> Path:
    """Coarse-only comparison plus the drop x guess grid, written as one report."""
    cfg.require_paths("dataset", "backbone", "decoder", "classifier")
    ckpts = {}
    for drop in (True, False):
        p = cfg.resolve(cfg.paths.checkpoint_dir) / run_name(drop) / LAST_CHECKPOINT
        if not p.is_file():
            if not train_missing:
                raise ConfigurationError(f"missing checkpoint {p}; train it or pass --train-missing")
            run_train(cfg, drop_enabled=drop)
        ckpts[drop] = p

    manifest, samples = load_split(cfg, cfg.dataset.eval_split)
    clf = ImageClassifier.load(cfg.resolve(cfg.classifier.path))
    n_way = min(cfg.classifier.n_way, manifest.num_classes)
    gt = np.stack([s.image for s in samples])

    def score(gen, guess, zero):
        images = sample_batch(gen, build_requests(cfg, samples, guess_mode=guess, zero_eeg=zero))
        return evaluate_images(gt, images, clf, n_way=n_way, k=cfg.classifier.k, seed=cfg.seed)

    gens = {d: _load_generator(cfg, ckpts[d], manifest.class_names) for d in ckpts}
    guess = cfg.sampling.guess_mode
    conditioning = [
        _row("EEG control", score(gens[True], guess, False), drop=True, guess=guess, zero_eeg=False),
        _row("coarse only", score(gens[True], guess, True), drop=True, guess=guess, zero_eeg=True),
    ]
    grid = [
        _row(f"drop={'on' if d else 'off'} guess={'on' if g else 'off'}", score(gens[d], g, False),
             drop=d, guess=g, zero_eeg=False)
        for d in (False, True) for g in (False, True)
    ]
    cumulative = {}
    for d, p in ckpts.items():
        st = read_checkpoint(p)
        cumulative[run_name(d)] = st["empty_captions"] / max(st["samples_seen"], 1)

    report = {
        "schema_version": ABLATION_SCHEMA_VERSION,
        "checkpoints": {run_name(d): checkpoint_id(p) for d, p in ckpts.items()},
        "empty_caption_fraction": cumulative,
        "sample_count": len(samples),
        "n_way": n_way,
        "k": cfg.classifier.k,
        "conditioning": conditioning,
        "drop_guess_grid": grid,
    }
    out = Path(out_dir) if out_dir is not None else cfg.resolve(cfg.paths.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "ablation.json"
    path.write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    (out / "ablation.txt").write_text(format_ablation(report))
    return path


def format_ablation(report: dict) -> str:
    def block(title, rows):
        lines = [title, f"{'':<22} {TABLE_HEADER}"]
        for r in rows:
            m = r["metrics"]
            mr = MetricsReport(m["is_mean"], m["is_std"], m["fid"], m["acc"], m["lpips_mean"], m["sample_count"])
            lines.append(f"{r['label']:<22} {mr.row()}")
        return "\n".join(lines)

    return (block("EEG conditioning", report["conditioning"]) + "\n\n"
            + block("drop x guess", report["drop_guess_grid"]) + "\n")
