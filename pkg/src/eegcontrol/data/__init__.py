from .layout import load_dataset, read_manifest, write_dataset
from .loaders import (
    eegcvpr40_class_names,
    eegcvpr40_manifest,
    load_eegcvpr40,
    load_thoughtviz,
    thoughtviz_class_names,
    thoughtviz_manifest,
)
from .preprocess import ZeroVarianceWarning, chunk, standardize
from .records import DatasetManifest, EEGRecording, PairedSample
from .synthetic import synth_dataset

__all__ = [
    "DatasetManifest",
    "EEGRecording",
    "PairedSample",
    "ZeroVarianceWarning",
    "chunk",
    "eegcvpr40_class_names",
    "eegcvpr40_manifest",
    "load_dataset",
    "load_eegcvpr40",
    "load_thoughtviz",
    "read_manifest",
    "standardize",
    "synth_dataset",
    "thoughtviz_class_names",
    "thoughtviz_manifest",
    "write_dataset",
]
