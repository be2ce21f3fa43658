"""ECG beat classification with wavelet denoising, a 1D residual network and
confidence-filtered two-stage training on noisily labelled data."""

from .confident import ConfidenceConfig, confident_pipeline, threshold_sweep
from .evaluation import confusion, evaluate, metrics
from .nn import BackboneConfig, Network, PlainCNNConfig, build_backbone, gradient_check
from .optim import TrainConfig, train
from .preprocess import WindowConfig, preprocess_records, slide_windows, standardize
from .signals import Dataset, EcgRecord, LabeledSegment, RhythmCategory, load_record, save_record
from .synth import SynthConfig, synth_dataset
from .wavelet import WaveletSpec, denoise, dwt_decompose, dwt_reconstruct

__version__ = "0.1.0"

__all__ = [
    "BackboneConfig",
    "ConfidenceConfig",
    "Dataset",
    "EcgRecord",
    "LabeledSegment",
    "Network",
    "PlainCNNConfig",
    "RhythmCategory",
    "SynthConfig",
    "TrainConfig",
    "WaveletSpec",
    "WindowConfig",
    "build_backbone",
    "confident_pipeline",
    "confusion",
    "denoise",
    "dwt_decompose",
    "dwt_reconstruct",
    "evaluate",
    "gradient_check",
    "load_record",
    "metrics",
    "preprocess_records",
    "save_record",
    "slide_windows",
    "standardize",
    "synth_dataset",
    "threshold_sweep",
    "train",
]
