import os

import numpy as np
from PIL import Image
import pytest
import torch

from eegcontrol.data import synth_dataset
from eegcontrol.diffusion.backbone import ToyBackbone, train_toy_backbone
from eegcontrol.diffusion import training as T
from eegcontrol.metrics import train_image_classifier
from eegcontrol.model import EEGControlModel
from eegcontrol.projection import ProjectionConfig
from eegcontrol.semantic import make_caption, train_decoder

torch.set_num_threads(max(1, min(4, os.cpu_count() or 1)))

# desk-scale geometry: 64 px stimuli, (4, 8, 8) latents, 8-channel EEG of 128 samples
DESK_PROJECTION = ProjectionConfig((32, 64, 128, 256), (5, 2, 2, 2), 3, (4, 8, 8))
DESK_CHANNELS = 8
DESK_LENGTH = 128

_ACCEPTANCE = []


class AcceptanceRecorder:
    def record(self, number: int, name: str, ok: bool, detail: str = "") -> bool:
        _ACCEPTANCE.append((number, name, bool(ok), detail))
        return bool(ok)


@pytest.fixture
def acceptance():
    return AcceptanceRecorder()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, ok, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} [{number}] {name}: {detail}")


def split(manifest, samples, name):
    ids = set(manifest.splits[name])
    return [s for s in samples if s.sample_id in ids]


@pytest.fixture(scope="session")
def desk_corpus():
    manifest, samples = synth_dataset(4, DESK_CHANNELS, DESK_LENGTH, 32, 64, 7, noise_std=1.0)
    return manifest, split(manifest, samples, "train"), split(manifest, samples, "test")


@pytest.fixture(scope="session")
def desk_backbone(desk_corpus):
    manifest, train, _ = desk_corpus
    captions = [make_caption(s.eeg.class_label, manifest.class_names) for s in train]
    return train_toy_backbone(np.stack([s.image for s in train]), captions, manifest.class_names,
                              vae_steps=300, unet_steps=800, seed=0)


@pytest.fixture(scope="session")
def desk_decoder(desk_corpus):
    manifest, train, _ = desk_corpus
    return train_decoder(train, epochs=30, seed=0, num_classes=manifest.num_classes)


@pytest.fixture(scope="session")
def desk_classifier(desk_corpus):
    manifest, train, _ = desk_corpus
    return train_image_classifier(np.stack([s.image for s in train]), [s.eeg.class_label for s in train],
                                  manifest.num_classes, steps=300, seed=0)


@pytest.fixture(scope="session")
def desk_model(desk_corpus, desk_backbone, desk_decoder):
    """Control model overfitted on the desk corpus with drop enabled."""
    manifest, train, _ = desk_corpus
    data = T.prepare_data(train, desk_backbone, desk_decoder, manifest.class_names)
    model = EEGControlModel.create(desk_backbone, DESK_CHANNELS, manifest.subjects, DESK_PROJECTION,
                                   min_length=DESK_LENGTH, seed=0)
    state = T.make_state(model, lr=3e-3, seed=0)
    T.train(desk_backbone, data, state, total_steps=400, batch_size=16, drop_enabled=True)
    return state.model


@pytest.fixture(scope="session")
def fresh_backbone(desk_corpus):
    """Randomly initialized, frozen toy backbone (64 px)."""
    return ToyBackbone.build(desk_corpus[0].class_names, seed=0).freeze()


@pytest.fixture
def fresh_model(fresh_backbone, desk_corpus):
    return EEGControlModel.create(fresh_backbone, DESK_CHANNELS, desk_corpus[0].subjects, DESK_PROJECTION,
                                  min_length=DESK_LENGTH, seed=0)


TINY_CONFIG = """\
dataset: {name: synthetic, root: data}
backbone: {kind: toy, path: backbone.pt, vae_steps: 40, unet_steps: 40, width: 8}
decoder: {path: decoder.pt, epochs: 5}
classifier: {path: classifier.pt, steps: 20, n_way: 4}
projection: {channel_widths: [16, 32, 64, 64], strides: [5, 2, 2, 2], target_latent_shape: [4, 4, 4]}
training: {seed: 11, learning_rate: 1.0e-3, batch_size: 16, max_steps: 8, checkpoint_every: 4}
sampling: {steps: 4}
"""


def write_tiny_run(root, per_class: int = 4, config: str = TINY_CONFIG):
    """Synthetic 32 px corpus plus a tiny config; returns the config path."""
    from eegcontrol.data import write_dataset

    manifest, samples = synth_dataset(4, DESK_CHANNELS, DESK_LENGTH, per_class, 32, 5)
    write_dataset(root / "data", manifest, samples)
    path = root / "cfg.yaml"
    path.write_text(config)
    return path


@pytest.fixture
def tiny_run(tmp_path):
    return write_tiny_run(tmp_path)


# ---- raw-archive fakes -------------------------------------------------------------------------

def _jpeg(path, color):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.full((20, 24, 3), color, dtype=np.uint8)).save(path)


@pytest.fixture
def fake_cvpr40(tmp_path):
    """Small archive in the distributed layout: 3 classes, 6 images, 2 subjects, 36 trials."""
    rng = np.random.default_rng(0)
    wnids = ["n0001", "n0002", "n0003"]
    images = [f"{w}_{i}" for w in wnids for i in range(2)]
    for j, name in enumerate(images):
        _jpeg(tmp_path / "imageNet_images" / name.split("_")[0] / f"{name}.JPEG", 40 * j)
    dataset = []
    for i in range(36):
        img = i % len(images)
        dataset.append({
            "eeg": torch.from_numpy(rng.normal(size=(128, 440 + (i % 3))).astype(np.float32)),
            "image": img,
            "label": img // 2,
            "subject": 1 + i % 2,
        })
    torch.save({"dataset": dataset, "labels": wnids, "images": images}, tmp_path / "eeg_5_95_std.pth")
    perm = rng.permutation(36).tolist()
    torch.save({"splits": [{"train": perm[:24], "val": perm[24:30], "test": perm[30:]}]},
               tmp_path / "block_splits_by_image_all.pth")
    return tmp_path
