import json
import pickle
import warnings

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from conftest import _jpeg

from eegcontrol.data import (
    DatasetManifest,
    EEGRecording,
    ZeroVarianceWarning,
    chunk,
    eegcvpr40_manifest,
    load_dataset,
    load_eegcvpr40,
    load_thoughtviz,
    read_manifest,
    standardize,
    synth_dataset,
    thoughtviz_class_names,
    thoughtviz_manifest,
    write_dataset,
)
from eegcontrol.errors import IngestionError

# frozen oracle values, computed by hand before the implementation was exercised
ZSCORE_123 = [-1.224744871391589, 0.0, 1.224744871391589]  # (x - 2) / sqrt(2/3)
CHUNKS_1280_W32_O05 = 79  # floor((1280 - 32) / 16) + 1


def rec(samples, **kw):
    kw.setdefault("subject_id", 1)
    kw.setdefault("class_label", 0)
    kw.setdefault("stimulus_ref", "s")
    return EEGRecording(np.asarray(samples, dtype=np.float32), **kw)


def brute_windows(length, window, stride):
    starts = []
    pos = 0
    while pos + window <= length:
        starts.append(pos)
        pos += stride
    return starts


class TestRecords:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            rec([[0.0, np.nan]])

    def test_rejects_wrong_rank(self):
        with pytest.raises(ValueError):
            rec([1.0, 2.0])

    def test_manifest_rejects_overlapping_splits(self):
        with pytest.raises(ValueError, match="appears in splits"):
            DatasetManifest("synthetic", 2, 1, 4, {"train": ["a"], "test": ["a"]}, [1])

    def test_manifest_rejects_unknown_name(self):
        with pytest.raises(ValueError):
            DatasetManifest("mnist", 2, 1, 4, {}, [1])

    def test_manifest_round_trip(self):
        m = DatasetManifest("synthetic", 2, 3, 4, {"train": ["a"], "test": ["b"]}, [1, 2])
        assert DatasetManifest.from_dict(json.loads(json.dumps(m.to_dict()))) == m


class TestStandardize:
    def test_hand_computed_channel(self):
        out = standardize(rec([[1.0, 2.0, 3.0]]))
        np.testing.assert_allclose(out.samples[0], ZSCORE_123, atol=1e-6)

    def test_constant_channel_warns_and_centres(self):
        with pytest.warns(ZeroVarianceWarning):
            out = standardize(rec([[5.0] * 6, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]]))
        assert np.array_equal(out.samples[0], np.zeros(6, dtype=np.float32))

    def test_no_warning_for_healthy_input(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            standardize(rec(np.random.default_rng(0).normal(size=(3, 50))))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 6), st.integers(2, 200), st.floats(-1e3, 1e3), st.floats(0.01, 1e3), st.integers(0, 2**31))
    def test_zero_mean_unit_std(self, channels, length, offset, scale, seed):
        x = offset + scale * np.random.default_rng(seed).normal(size=(channels, length))
        out = standardize(rec(x)).samples.astype(np.float64)
        assert np.all(np.abs(out.mean(axis=1)) < 1e-6 * max(1.0, abs(offset) / scale))
        assert np.all(np.abs(out.std(axis=1) - 1) < 1e-4)

    def test_metadata_preserved(self):
        r = rec(np.random.default_rng(0).normal(size=(2, 10)), subject_id=4, class_label=3, sample_id="x")
        out = standardize(r)
        assert (out.subject_id, out.class_label, out.sample_id) == (4, 3, "x")


class TestChunk:
    def test_non_overlapping(self):
        out = chunk(rec(np.arange(64.0)[None]), 32, 0.0)
        assert [c.samples[0, 0] for c in out] == [0.0, 32.0]

    def test_ten_seconds_at_128hz(self):
        x = np.arange(1280.0)[None]
        out = chunk(rec(x), 32, 0.5)
        assert len(out) == CHUNKS_1280_W32_O05 == len(brute_windows(1280, 32, 16))
        assert [int(c.samples[0, 0]) for c in out[:3]] == [0, 16, 32]

    def test_window_longer_than_recording(self):
        with pytest.raises(ValueError):
            chunk(rec(np.zeros((1, 16))), 32, 0.0)

    def test_bad_overlap(self):
        with pytest.raises(ValueError):
            chunk(rec(np.zeros((1, 64))), 32, 1.0)

    def test_window_ids_are_unique(self):
        out = chunk(rec(np.zeros((2, 100)), sample_id="r"), 10, 0.5)
        assert len({c.sample_id for c in out}) == len(out)

    @settings(max_examples=80, deadline=None)
    @given(st.integers(1, 400), st.integers(1, 64), st.sampled_from([0.0, 0.25, 0.5, 0.75]))
    def test_matches_brute_force_enumeration(self, length, window, overlap):
        if window > length:
            return
        x = np.arange(float(length))[None]
        stride = max(1, int(np.floor(window * (1 - overlap) + 0.5)))
        expected = brute_windows(length, window, stride)
        out = chunk(rec(x), window, overlap)
        assert [int(c.samples[0, 0]) for c in out] == expected
        assert all(c.length == window for c in out)


class TestSynthetic:
    def test_counts(self):
        manifest, samples = synth_dataset(4, 8, 128, 16, 64, seed=7)
        assert len(samples) == 64
        assert len({s.eeg.stimulus_ref for s in samples}) == 4
        assert len({s.image.tobytes() for s in samples}) == 4
        assert samples[0].image.shape == (64, 64, 3)
        assert samples[0].eeg.samples.shape == (8, 128)

    def test_deterministic(self):
        a = synth_dataset(4, 8, 128, 16, 64, seed=7)
        b = synth_dataset(4, 8, 128, 16, 64, seed=7)
        assert a[0].to_dict() == b[0].to_dict()
        assert all(x.eeg.samples.tobytes() == y.eeg.samples.tobytes() and x.image.tobytes() == y.image.tobytes()
                   for x, y in zip(a[1], b[1]))

    def test_seed_changes_eeg(self):
        a = synth_dataset(2, 2, 32, 2, 16, seed=1)[1]
        b = synth_dataset(2, 2, 32, 2, 16, seed=2)[1]
        assert a[0].eeg.samples.tobytes() != b[0].eeg.samples.tobytes()

    def test_splits_disjoint_and_cover(self):
        manifest, samples = synth_dataset(3, 2, 32, 8, 16, seed=0)
        train, test = set(manifest.splits["train"]), set(manifest.splits["test"])
        assert not train & test
        assert train | test == {s.sample_id for s in samples}

    def test_labels_below_class_count(self):
        manifest, samples = synth_dataset(5, 2, 32, 3, 16, seed=0)
        assert {s.eeg.class_label for s in samples} == set(range(manifest.num_classes))


class TestLayout:
    def test_write_then_load(self, tmp_path):
        manifest, samples = synth_dataset(2, 3, 32, 4, 16, seed=0)
        write_dataset(tmp_path, manifest, samples)
        m2, loaded = load_dataset(tmp_path, "train")
        assert m2.num_classes == 2
        assert {s.sample_id for s in loaded} == set(manifest.splits["train"])
        by_id = {s.sample_id: s for s in samples}
        for s in loaded:
            np.testing.assert_array_equal(s.eeg.samples, by_id[s.sample_id].eeg.samples)
            np.testing.assert_allclose(s.image, by_id[s.sample_id].image, atol=1 / 255)

    def test_rewrite_is_idempotent(self, tmp_path):
        manifest, samples = synth_dataset(2, 3, 32, 4, 16, seed=0)
        write_dataset(tmp_path, manifest, samples)
        first = (tmp_path / "manifest.json").read_bytes()
        write_dataset(tmp_path, manifest, samples)
        assert (tmp_path / "manifest.json").read_bytes() == first

    def test_subject_filter(self, tmp_path):
        manifest, samples = synth_dataset(2, 3, 32, 6, 16, seed=0, num_subjects=3)
        write_dataset(tmp_path, manifest, samples)
        _, loaded = load_dataset(tmp_path, subjects=[2])
        assert loaded and {s.eeg.subject_id for s in loaded} == {2}

    def test_missing_eeg_file(self, tmp_path):
        manifest, samples = synth_dataset(2, 3, 32, 2, 16, seed=0)
        write_dataset(tmp_path, manifest, samples)
        next((tmp_path / "eeg").iterdir()).unlink()
        with pytest.raises(IngestionError):
            load_dataset(tmp_path)

    def test_unknown_split(self, tmp_path):
        manifest, samples = synth_dataset(2, 3, 32, 2, 16, seed=0)
        write_dataset(tmp_path, manifest, samples)
        with pytest.raises(ValueError):
            load_dataset(tmp_path, "validation")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(IngestionError):
            read_manifest(tmp_path)


# ---- EEGCVPR40 ---------------------------------------------------------------------------------

class TestEEGCVPR40:
    def test_channels_and_classes(self, fake_cvpr40):
        samples = load_eegcvpr40(fake_cvpr40, "train")
        assert all(s.eeg.channels == 128 for s in samples)
        assert {s.eeg.class_label for s in samples} <= {0, 1, 2}

    def test_count_matches_split_file(self, fake_cvpr40):
        # independent parse of the split file
        raw = torch.load(fake_cvpr40 / "block_splits_by_image_all.pth", weights_only=True)
        expected = len(raw["splits"][0]["test"])
        assert len(load_eegcvpr40(fake_cvpr40, "test")) == expected == 6

    def test_unknown_split(self, fake_cvpr40):
        with pytest.raises(ValueError):
            load_eegcvpr40(fake_cvpr40, "nonexistent_split")

    def test_image_resized(self, fake_cvpr40):
        s = load_eegcvpr40(fake_cvpr40, "val", image_size=32)[0]
        assert s.image.shape == (32, 32, 3)

    def test_missing_image(self, fake_cvpr40):
        for p in (fake_cvpr40 / "imageNet_images").rglob("*.JPEG"):
            p.unlink()
        with pytest.raises(IngestionError):
            load_eegcvpr40(fake_cvpr40, "train")

    def test_wrong_channel_count(self, tmp_path):
        _jpeg(tmp_path / "imageNet_images" / "n1" / "n1_0.JPEG", 0)
        torch.save({"dataset": [{"eeg": torch.zeros(64, 100), "image": 0, "label": 0, "subject": 1}],
                    "labels": ["n1"], "images": ["n1_0"]}, tmp_path / "eeg_5_95_std.pth")
        torch.save({"splits": [{"train": [0], "val": [], "test": []}]}, tmp_path / "block_splits_by_image_all.pth")
        with pytest.raises(IngestionError):
            load_eegcvpr40(tmp_path, "train")

    def test_manifest_and_subject_selection(self, fake_cvpr40, tmp_path):
        by_split = {sp: load_eegcvpr40(fake_cvpr40, sp) for sp in ("train", "val", "test")}
        manifest = eegcvpr40_manifest(by_split, ["n0001", "n0002", "n0003"])
        out = tmp_path / "canon"
        write_dataset(out, manifest, [s for v in by_split.values() for s in v])
        _, subj = load_dataset(out, "train", subjects=[2])
        assert subj and all(s.eeg.subject_id == 2 for s in subj)


# ---- ThoughtViz --------------------------------------------------------------------------------

def _tv_images(root, n_classes=10):
    for k in range(n_classes):
        _jpeg(root / "images" / f"cls{k:02d}" / "a.jpg", 20 * k)


class TestThoughtViz:
    def test_npz_recording_chunks(self, tmp_path):
        _tv_images(tmp_path)
        (tmp_path / "eeg").mkdir()
        np.savez(tmp_path / "eeg" / "rec0.npz", eeg=np.random.default_rng(0).normal(size=(14, 1280)),
                 label=3, subject=2)
        samples = load_thoughtviz(tmp_path)
        assert len(samples) == len(brute_windows(1280, 32, 16)) == CHUNKS_1280_W32_O05
        assert all(s.eeg.samples.shape == (14, 32) for s in samples)
        assert all(s.eeg.stimulus_ref == "cls03" for s in samples)

    def test_pickle_archive(self, tmp_path):
        _tv_images(tmp_path)
        rng = np.random.default_rng(0)
        y = np.eye(10)[rng.integers(0, 10, 12)]
        data = {"x_train": rng.normal(size=(12, 14, 32, 1)), "y_train": y,
                "x_test": rng.normal(size=(4, 14, 32, 1)), "y_test": y[:4]}
        with open(tmp_path / "data.pkl", "wb") as fh:
            pickle.dump(data, fh)
        samples = load_thoughtviz(tmp_path)
        assert len(samples) == 16 and all(s.eeg.samples.shape == (14, 32) for s in samples)
        manifest = thoughtviz_manifest(samples, thoughtviz_class_names(tmp_path))
        assert manifest.num_classes == 10
        assert len(manifest.splits["train"]) == 12 and len(manifest.splits["test"]) == 4

    def test_empty_root(self, tmp_path):
        with pytest.raises(IngestionError):
            load_thoughtviz(tmp_path)

    def test_recording_windows_stay_in_one_split(self, tmp_path):
        _tv_images(tmp_path, 2)
        (tmp_path / "eeg").mkdir()
        for i in range(10):
            np.savez(tmp_path / "eeg" / f"r{i}.npz", eeg=np.zeros((14, 96)) + i, label=i % 2, subject=1)
        samples = load_thoughtviz(tmp_path)
        manifest = thoughtviz_manifest(samples, thoughtviz_class_names(tmp_path))
        for split, ids in manifest.splits.items():
            for other, other_ids in manifest.splits.items():
                if other != split:
                    assert not {i.rsplit("_w", 1)[0] for i in ids} & {i.rsplit("_w", 1)[0] for i in other_ids}
