"""Spectral-temporal activity recognition engine."""

from .bench import BenchReport, bench_inference, emit_report
from .data import Recording, WindowBatch, make_windows, normalize, resample_50hz, synth_dataset
from .estimator import SpectraClassifier, SpectrogramTransformer
from .model import CostReport, ModelParams, SpectraConfig, build_model, count_costs, forward
from .quant import QuantizedModel, QuantParams, calibrate, quantized_forward
from .serialize import load_model, save_model
from .stft import StftPlan, hann_window, stft_direct, stft_filterbank
from .tensor import Rng, matmul, rng_normal, softmax_rows
from .train import Metrics, TrainConfig, cross_entropy, evaluate, train_epochs

__version__ = "0.1.0"

__all__ = [
    "BenchReport", "bench_inference", "emit_report",
    "Recording", "WindowBatch", "make_windows", "normalize",
    "resample_50hz", "synth_dataset",
    "SpectraClassifier", "SpectrogramTransformer",
    "CostReport", "ModelParams", "SpectraConfig", "build_model",
    "count_costs", "forward",
    "QuantizedModel", "QuantParams", "calibrate", "quantized_forward",
    "load_model", "save_model",
    "StftPlan", "hann_window", "stft_direct", "stft_filterbank",
    "Rng", "matmul", "rng_normal", "softmax_rows",
    "Metrics", "TrainConfig", "cross_entropy", "evaluate", "train_epochs",
]
