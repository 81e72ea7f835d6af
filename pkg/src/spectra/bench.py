"""Latency/throughput benchmark harness for FP and INT8 inference.

Single-threaded, batch size 1, monotonic-clock timing.  The front-end
(STFT) and neural backbone are timed separately around the pipeline
boundary; raw per-iteration timings are kept in the report so derived
figures can be recomputed.  Peak transient allocation is tracemalloc's
peak over one inference and is approximate.  Energy is not reported:
that needs external power instrumentation.
"""

from __future__ import annotations

import csv
import json
import time
import tracemalloc
from dataclasses import dataclass, field

import numpy as np

from . import layers
from .errors import ConfigError, DataError, UsageError
from .model import CostReport, ModelParams, count_costs
from .quant import QuantizedModel, quantized_forward_from_mags
from .stft import stft_filterbank_batch
from .tensor import Tensor

REPORT_FIELDS = [
    "precision_tag", "stft_ms_mean", "stft_ms_median", "stft_ms_p95",
    "nn_ms_mean", "nn_ms_median", "nn_ms_p95",
    "total_ms_mean", "total_ms_median", "total_ms_p95",
    "samples_per_s", "params", "macs", "stft_macs",
    "peak_alloc_bytes", "warmup_iters", "measure_iters",
]


def _stats(values: np.ndarray) -> tuple[float, float, float]:
    return (float(np.mean(values)), float(np.median(values)),
            float(np.percentile(values, 95)))


@dataclass
class BenchReport:
    precision_tag: str
    stft_ms: tuple[float, float, float]   # mean, median, p95
    nn_ms: tuple[float, float, float]
    total_ms: tuple[float, float, float]
    samples_per_s: float
    params: int
    macs: int
    stft_macs: int
    peak_alloc_bytes: int
    warmup_iters: int
    measure_iters: int
    raw_stft_ms: list[float] = field(default_factory=list)
    raw_nn_ms: list[float] = field(default_factory=list)
    raw_total_ms: list[float] = field(default_factory=list)

    def as_dict(self) -> dict:
        d = {
            "precision_tag": self.precision_tag,
            "samples_per_s": self.samples_per_s,
            "params": self.params, "macs": self.macs, "stft_macs": self.stft_macs,
            "peak_alloc_bytes": self.peak_alloc_bytes,
            "warmup_iters": self.warmup_iters, "measure_iters": self.measure_iters,
        }
        for prefix, stats in (("stft_ms", self.stft_ms), ("nn_ms", self.nn_ms),
                              ("total_ms", self.total_ms)):
            d[f"{prefix}_mean"], d[f"{prefix}_median"], d[f"{prefix}_p95"] = stats
        d["raw_stft_ms"] = self.raw_stft_ms
        d["raw_nn_ms"] = self.raw_nn_ms
        d["raw_total_ms"] = self.raw_total_ms
        return d


def _nn_from_spectrogram(model: ModelParams, mags: Tensor) -> Tensor:
    """Backbone-only forward used to time the post-STFT segment."""
    from .model import _gru_params, _sepconv_params
    from .tensor import softmax_rows

    cfg = model.config
    out, _ = layers.sepconv_forward(mags, _sepconv_params(model), training=False)
    if cfg.use_channel_attention:
        t = model.tensors
        out, _ = layers.channel_attention_forward(
            out, {"wq": t["attn.wq"], "wk": t["attn.wk"],
                  "wv": t["attn.wv"], "gamma": t["attn.gamma"]})
    if cfg.use_gru:
        h, _ = layers.bigru_forward(out, _gru_params(model))
        s, _, _ = layers.attn_pool_forward(h, model.tensors["pool.w"])
    else:
        s, _ = layers.mean_pool_forward(out)
    logits = s @ model.tensors["clf.w"].T + model.tensors["clf.b"]
    return softmax_rows(logits)


def bench_inference(model_or_qmodel, window: Tensor, warmup: int = 50,
                    iters: int = 500) -> BenchReport:
    """Measure single-window (B=1) latency for an FP or INT8 model."""
    if iters < 10:
        raise ConfigError(f"iters must be >= 10, got {iters}")
    quantized = isinstance(model_or_qmodel, QuantizedModel)
    model = model_or_qmodel.base if quantized else model_or_qmodel
    cfg = model.config
    window = np.asarray(window, dtype=np.float64)
    if window.shape != (cfg.T, cfg.C):
        raise DataError(f"window must be ({cfg.T}, {cfg.C}), got {window.shape}")
    batch = window[None]
    plan = cfg.stft_plan()

    def run_once():
        t0 = time.perf_counter()
        mags = stft_filterbank_batch(batch, plan)
        t1 = time.perf_counter()
        if quantized:
            quantized_forward_from_mags(model_or_qmodel, mags)
        else:
            _nn_from_spectrogram(model, mags)
        t2 = time.perf_counter()
        return (t1 - t0) * 1e3, (t2 - t1) * 1e3, (t2 - t0) * 1e3

    for _ in range(warmup):
        run_once()
    tracemalloc.start()
    run_once()
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()

    samples = np.array([run_once() for _ in range(iters)])
    stft_t, nn_t, total_t = samples[:, 0], samples[:, 1], samples[:, 2]
    costs = count_costs(cfg)
    return BenchReport(
        precision_tag="INT8" if quantized else "FP",
        stft_ms=_stats(stft_t), nn_ms=_stats(nn_t), total_ms=_stats(total_t),
        samples_per_s=1000.0 / float(np.median(total_t)),
        params=costs.total_params, macs=costs.nn_macs, stft_macs=costs.stft_macs,
        peak_alloc_bytes=int(peak), warmup_iters=warmup, measure_iters=iters,
        raw_stft_ms=stft_t.tolist(), raw_nn_ms=nn_t.tolist(),
        raw_total_ms=total_t.tolist(),
    )


def emit_report(report: BenchReport, fmt: str, path: str) -> None:
    """Write the report as JSON (full, incl. raw timings) or CSV (one row)."""
    d = report.as_dict()
    if fmt == "json":
        with open(path, "w") as fh:
            json.dump(d, fh, indent=2)
    elif fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=REPORT_FIELDS)
            writer.writeheader()
            writer.writerow({k: d[k] for k in REPORT_FIELDS})
    else:
        raise UsageError(f"unknown report format {fmt!r}, expected json or csv")


def load_report(path: str) -> dict:
    if path.endswith(".csv"):
        with open(path, newline="") as fh:
            return next(iter(csv.DictReader(fh)))
    with open(path) as fh:
        return json.load(fh)
