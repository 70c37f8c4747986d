"""``eegcontrol`` command line.

Exit codes: 0 success, 1 invalid configuration or arguments, 2 runtime failure.
"""

from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path

import click

from .config import RunConfig, load_config
from .errors import ConfigurationError, EEGControlError, IngestionError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _guarded(fn):
    """Map exceptions onto exit codes and print a one-line message."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            fn(*args, **kwargs)
        except (ConfigurationError, ValueError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except (EEGControlError, OSError, RuntimeError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_RUNTIME)
        sys.exit(EXIT_OK)

    return wrapper


def _config(path: str, overrides) -> RunConfig:
    return load_config(path, overrides)


config_option = click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False),
                             help="YAML run configuration.")
set_option = click.option("--set", "overrides", multiple=True, metavar="SECTION.KEY=VALUE",
                          help="Override one config value; repeatable.")


@click.group()
@click.option("-v", "--verbose", is_flag=True)
def main(verbose: bool) -> None:
    """EEG-conditioned image generation with a control adapter on a frozen latent diffusion backbone."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


@main.command()
@click.option("--format", "fmt", required=True, type=click.Choice(["eegcvpr40", "thoughtviz", "synthetic"]))
@click.option("--src", type=click.Path(), help="Raw archive directory (not needed for synthetic).")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--image-size", default=64, show_default=True)
@click.option("--eeg-file", default=None, help="EEGCVPR40 EEG .pth file name inside --src.")
@click.option("--split-file", default=None, help="EEGCVPR40 split .pth file name inside --src.")
@click.option("--split-index", default=0, show_default=True)
@click.option("--window", default=32, show_default=True, help="ThoughtViz window length.")
@click.option("--classes", default=4, show_default=True, help="Synthetic: class count.")
@click.option("--channels", default=8, show_default=True, help="Synthetic: EEG channels.")
@click.option("--length", default=128, show_default=True, help="Synthetic: samples per trial.")
@click.option("--per-class", default=24, show_default=True, help="Synthetic: trials per class.")
@click.option("--subjects", default=1, show_default=True, help="Synthetic: subject count.")
@click.option("--noise", default=1.0, show_default=True, help="Synthetic: EEG noise std.")
@click.option("--seed", default=0, show_default=True)
@_guarded
def ingest(fmt, src, out, image_size, eeg_file, split_file, split_index, window, classes, channels, length,
           per_class, subjects, noise, seed):
    """Convert a raw dataset into the canonical layout (idempotent)."""
    from . import data as D

    if fmt == "synthetic":
        manifest, samples = D.synth_dataset(classes, channels, length, per_class, image_size, seed,
                                            num_subjects=subjects, noise_std=noise)
    else:
        if src is None or not Path(src).is_dir():
            raise IngestionError("raw archive directory not found", Path(src or "."))
        if fmt == "eegcvpr40":
            by_split = {
                sp: D.load_eegcvpr40(src, sp, eeg_file=eeg_file, split_file=split_file, split_index=split_index,
                                     image_size=image_size)
                for sp in ("train", "val", "test")
            }
            manifest = D.eegcvpr40_manifest(by_split, D.eegcvpr40_class_names(src, eeg_file))
            samples = [s for v in by_split.values() for s in v]
        else:
            samples = D.load_thoughtviz(src, window_length=window, image_size=image_size)
            manifest = D.thoughtviz_manifest(samples, D.thoughtviz_class_names(src))
    D.write_dataset(out, manifest, samples)
    click.echo(f"{manifest.dataset_name}: {len(samples)} samples, {manifest.num_classes} classes -> {out}")


@main.command("train-decoder")
@config_option
@set_option
@_guarded
def train_decoder_cmd(config_path, overrides):
    """Fit the frozen EEG classifier that supplies coarse captions."""
    from .pipeline import run_train_decoder

    cfg = _config(config_path, overrides)
    cfg.require_paths("dataset")
    click.echo(str(run_train_decoder(cfg)))


@main.command("train-backbone")
@config_option
@set_option
@_guarded
def train_backbone_cmd(config_path, overrides):
    """Train the small stand-in VAE and UNet on the dataset's stimuli."""
    from .pipeline import run_train_backbone

    cfg = _config(config_path, overrides)
    cfg.require_paths("dataset")
    click.echo(str(run_train_backbone(cfg)))


@main.command("train-classifier")
@config_option
@set_option
@_guarded
def train_classifier_cmd(config_path, overrides):
    """Train the image classifier used for IS, FID, ACC and LPIPS features."""
    from .pipeline import run_train_classifier

    cfg = _config(config_path, overrides)
    cfg.require_paths("dataset")
    click.echo(str(run_train_classifier(cfg)))


@main.command()
@config_option
@set_option
@click.option("--fresh", is_flag=True, help="Ignore an existing checkpoint instead of resuming.")
@_guarded
def train(config_path, overrides, fresh):
    """Train the control model (subject layer, projection, adapter)."""
    from .pipeline import run_train

    cfg = _config(config_path, overrides)
    result = run_train(cfg, resume=not fresh)
    last = result.log.records[-1] if result.log.records else {}
    click.echo(json.dumps({"checkpoint": str(result.checkpoint), "step": result.state.step,
                           "loss": last.get("loss"), "empty_caption_fraction": result.state.empty_fraction}))


@main.command()
@config_option
@set_option
@click.option("--checkpoint", required=True, type=click.Path(dir_okay=False))
@click.option("--select", "selector", default=None, help="e.g. subject=4,limit=32 (keys: subject, class, id, limit).")
@click.option("--guess-mode/--no-guess-mode", default=None, help="Defaults to sampling.guess_mode.")
@click.option("--zero-eeg", is_flag=True, help="Coarse-only ablation: zero the EEG latents.")
@click.option("--out", default=None, type=click.Path(file_okay=False))
@_guarded
def generate(config_path, overrides, checkpoint, selector, guess_mode, zero_eeg, out):
    """Generate images for evaluation-split EEG trials."""
    from .pipeline import run_generate

    cfg = _config(config_path, overrides)
    click.echo(str(run_generate(cfg, checkpoint, selector=selector, guess_mode=guess_mode, zero_eeg=zero_eeg,
                                out_dir=out)))


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(dir_okay=False))
@click.option("--classifier", "classifier_path", required=True, type=click.Path(dir_okay=False))
@click.option("--out", default=None, type=click.Path(dir_okay=False))
@click.option("--seed", default=0, show_default=True)
@_guarded
def evaluate(manifest_path, classifier_path, out, seed):
    """Score a generations manifest: IS, FID, N-way top-k ACC, LPIPS."""
    from .metrics.report import TABLE_HEADER
    from .pipeline import run_evaluate

    report = run_evaluate(manifest_path, classifier_path, seed=seed, out=out)
    click.echo(TABLE_HEADER)
    click.echo(report.row())


@main.command()
@config_option
@set_option
@click.option("--train-missing", is_flag=True, help="Train the drop/no-drop checkpoints if absent.")
@click.option("--out", default=None, type=click.Path(file_okay=False))
@_guarded
def ablate(config_path, overrides, train_missing, out):
    """EEG-vs-coarse comparison and the drop x guess grid in one report."""
    from .pipeline import run_ablate

    cfg = _config(config_path, overrides)
    path = run_ablate(cfg, train_missing=train_missing, out_dir=out)
    click.echo(path.with_suffix(".txt").read_text())


if __name__ == "__main__":
    main()
