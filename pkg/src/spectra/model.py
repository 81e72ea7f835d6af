"""End-to-end model assembly: config, parameter store, forward/backward,
and the params/MACs cost counter.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import layers
from .errors import ConfigError, ShapeError
from .stft import StftPlan, stft_filterbank_batch
from .tensor import Rng, Tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

# Buffers ride along in the tensor table but receive no gradients.
_BUFFER_NAMES = ("sepconv.bn_running_mean", "sepconv.bn_running_var")


@dataclass
class SpectraConfig:
    """All architecture hyperparameters for one model instance."""

    T: int = 100          # samples per window (2 s at 50 Hz)
    C: int = 6            # sensor channels
    K: int = 6            # activity classes
    n_fft: int = 16
    hop: int = 8
    k: int = 3            # depthwise kernel size (odd)
    D: int = 16           # conv feature dim
    H: int = 32           # GRU hidden size
    dropout_p: float = 0.2
    use_channel_attention: bool = True
    use_gru: bool = True
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        checks = [
            (self.T >= self.n_fft, f"T={self.T} must be >= n_fft={self.n_fft}"),
            (self.n_fft >= 2 and (self.n_fft & (self.n_fft - 1)) == 0,
             f"n_fft={self.n_fft} must be a power of two"),
            (self.hop >= 1, f"hop={self.hop} must be >= 1"),
            (self.k >= 1 and self.k % 2 == 1, f"k={self.k} must be odd"),
            (self.C >= 1, f"C={self.C} must be >= 1"),
            (self.K >= 1, f"K={self.K} must be >= 1"),
            (self.D >= 1, f"D={self.D} must be >= 1"),
            (self.H >= 1, f"H={self.H} must be >= 1"),
            (0.0 <= self.dropout_p < 1.0,
             f"dropout_p={self.dropout_p} must be in [0, 1)"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    @property
    def n_frames(self) -> int:
        return (self.T - self.n_fft) // self.hop + 1

    @property
    def pooled_dim(self) -> int:
        """Width of the pooled feature vector feeding the classifier."""
        return 2 * self.H if self.use_gru else self.C * self.D

    def stft_plan(self) -> StftPlan:
        return StftPlan(n_fft=self.n_fft, hop=self.hop, n_samples=self.T)


_GATE_NAMES = ("wz", "wr", "wn", "uz", "ur", "un", "bz", "br", "bn")


@dataclass
class ModelParams:
    """Named tensors plus the config that determined their shapes."""

    config: SpectraConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def learnable_names(self) -> list[str]:
        return [n for n in self.tensors if n not in _BUFFER_NAMES]

    def copy(self) -> "ModelParams":
        return ModelParams(replace(self.config),
                           {n: t.copy() for n, t in self.tensors.items()})


def build_model(config: SpectraConfig) -> ModelParams:
    """Initialize every parameter deterministically from config.seed.

    Glorot-uniform for weight matrices and kernels, zeros for biases and
    BN beta, ones for BN gamma; the attention gate starts at 0 so the
    attention path begins as the identity.
    """
    config.validate()
    rng = Rng(config.seed)
    C, K, k, D, H = config.C, config.K, config.k, config.D, config.H
    F = config.n_bins
    t: dict[str, Tensor] = {}

    t["sepconv.depthwise"] = rng.glorot_uniform((C, k, k), k * k, k * k)
    t["sepconv.pointwise"] = rng.glorot_uniform((F, D), F, D)
    t["sepconv.bn_gamma"] = np.ones(D)
    t["sepconv.bn_beta"] = np.zeros(D)
    t["sepconv.bn_running_mean"] = np.zeros(D)
    t["sepconv.bn_running_var"] = np.ones(D)

    if config.use_channel_attention:
        for name in ("wq", "wk", "wv"):
            t[f"attn.{name}"] = rng.glorot_uniform((D, D), D, D)
        t["attn.gamma"] = np.zeros(1)

    if config.use_gru:
        t["gru.p"] = rng.glorot_uniform((C * D, H), C * D, H)
        for direction in ("fwd", "bwd"):
            for gate in ("wz", "wr", "wn", "uz", "ur", "un"):
                t[f"gru.{direction}.{gate}"] = rng.glorot_uniform((H, H), H, H)
            for gate in ("bz", "br", "bn"):
                t[f"gru.{direction}.{gate}"] = np.zeros(H)
        t["pool.w"] = rng.glorot_uniform((2 * H,), 2 * H, 1)

    din = config.pooled_dim
    t["clf.w"] = rng.glorot_uniform((K, din), din, K)
    t["clf.b"] = np.zeros(K)
    return ModelParams(config, t)


def _sepconv_params(model: ModelParams) -> dict:
    t = model.tensors
    return {
        "depthwise": t["sepconv.depthwise"], "pointwise": t["sepconv.pointwise"],
        "bn_gamma": t["sepconv.bn_gamma"], "bn_beta": t["sepconv.bn_beta"],
        "bn_running_mean": t["sepconv.bn_running_mean"],
        "bn_running_var": t["sepconv.bn_running_var"],
        "bn_eps": BN_EPS, "bn_momentum": BN_MOMENTUM,
    }


def _gru_params(model: ModelParams) -> dict:
    t = model.tensors
    return {
        "p": t["gru.p"],
        "fwd": {g: t[f"gru.fwd.{g}"] for g in _GATE_NAMES},
        "bwd": {g: t[f"gru.bwd.{g}"] for g in _GATE_NAMES},
    }


def forward(model: ModelParams, x: Tensor, training: bool = False,
            rng: Rng | None = None, with_cache: bool = False):
    """Full pipeline on a (B, T, C) batch -> class probabilities (B, K).

    In training mode BatchNorm running statistics are updated in place and
    dropout draws from rng.  With with_cache=True returns (probs, caches)
    for use with backward().
    """
    cfg = model.config
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] != cfg.T or x.shape[2] != cfg.C:
        raise ShapeError(
            f"expected input (B, {cfg.T}, {cfg.C}), got {x.shape}")
    caches: dict = {}

    mags = stft_filterbank_batch(x, cfg.stft_plan())
    out, caches["sepconv"] = layers.sepconv_forward(
        mags, _sepconv_params(model), training)
    if training:
        model.tensors["sepconv.bn_running_mean"] = caches["sepconv"]["new_running_mean"]
        model.tensors["sepconv.bn_running_var"] = caches["sepconv"]["new_running_var"]

    if cfg.use_channel_attention:
        attn_params = {"wq": model.tensors["attn.wq"], "wk": model.tensors["attn.wk"],
                       "wv": model.tensors["attn.wv"], "gamma": model.tensors["attn.gamma"]}
        out, caches["attn"] = layers.channel_attention_forward(out, attn_params)

    if cfg.use_gru:
        h, caches["gru"] = layers.bigru_forward(out, _gru_params(model))
        s, _, caches["pool"] = layers.attn_pool_forward(h, model.tensors["pool.w"])
    else:
        s, caches["pool"] = layers.mean_pool_forward(out)

    clf_params = {"w": model.tensors["clf.w"], "b": model.tensors["clf.b"]}
    probs, caches["clf"] = layers.classifier_forward(
        s, clf_params, rng, training, cfg.dropout_p)
    return (probs, caches) if with_cache else probs


def backward(model: ModelParams, caches: dict, dlogits: Tensor) -> dict[str, Tensor]:
    """Propagate a logits gradient back through the cached forward pass.

    Returns gradients keyed by learnable tensor names.  Propagation stops
    at the STFT output, which has no learnable parameters.
    """
    cfg = model.config
    grads: dict[str, Tensor] = {}

    g_clf, ds = layers.classifier_backward_logits(dlogits, caches["clf"])
    grads["clf.w"], grads["clf.b"] = g_clf["w"], g_clf["b"]

    if cfg.use_gru:
        dw_pool, dh = layers.attn_pool_backward(ds, caches["pool"])
        grads["pool.w"] = dw_pool
        g_gru, dx = layers.bigru_backward(dh, caches["gru"])
        grads["gru.p"] = g_gru["p"]
        for direction in ("fwd", "bwd"):
            for gate, g in g_gru[direction].items():
                grads[f"gru.{direction}.{gate}"] = g
    else:
        dx = layers.mean_pool_backward(ds, caches["pool"])

    if cfg.use_channel_attention:
        g_attn, dx = layers.channel_attention_backward(dx, caches["attn"])
        for name in ("wq", "wk", "wv", "gamma"):
            grads[f"attn.{name}"] = g_attn[name]

    g_conv, _ = layers.sepconv_backward(dx, caches["sepconv"])
    grads["sepconv.depthwise"] = g_conv["depthwise"]
    grads["sepconv.pointwise"] = g_conv["pointwise"]
    grads["sepconv.bn_gamma"] = g_conv["bn_gamma"]
    grads["sepconv.bn_beta"] = g_conv["bn_beta"]
    return grads


# ---------------------------------------------------------------------------
# Cost accounting
# ---------------------------------------------------------------------------

@dataclass
class CostReport:
    """Per-layer and total parameter/MAC counts for a single window.

    STFT MACs are counted under the filter-bank realization and reported
    separately from the neural backbone, mirroring the front-end/backbone
    latency split in the benchmark harness.
    """

    layers: list[tuple[str, int, int]]  # (name, params, macs)
    stft_macs: int
    total_params: int
    nn_macs: int

    def as_dict(self) -> dict:
        return {
            "layers": [
                {"name": n, "params": p, "macs": m} for n, p, m in self.layers
            ],
            "stft_macs": self.stft_macs,
            "total_params": self.total_params,
            "nn_macs": self.nn_macs,
        }


def count_costs(config: SpectraConfig) -> CostReport:
    """Parameter and MAC counts per layer (one MAC = one multiply-accumulate)."""
    config.validate()
    C, K, k, D, H = config.C, config.K, config.k, config.D, config.H
    L, F = config.n_frames, config.n_bins

    stft_macs = C * L * 2 * F * config.n_fft
    entries: list[tuple[str, int, int]] = []
    entries.append(("sepconv.depthwise", C * k * k, L * F * C * k * k))
    entries.append(("sepconv.pointwise", F * D, L * C * F * D))
    entries.append(("sepconv.bn", 2 * D, L * C * D))
    if config.use_channel_attention:
        entries.append(("attn", 3 * D * D + 1, L * (3 * C * D * D + 2 * C * C * D)))
    if config.use_gru:
        entries.append(("gru.projection", C * D * H, L * C * D * H))
        entries.append(("gru", 2 * 3 * (H * H + H * H + H), 2 * L * 3 * (H * H + H * H)))
        entries.append(("pool", 2 * H, 2 * L * 2 * H))
    din = config.pooled_dim
    entries.append(("clf", K * din + K, K * din))

    total_params = sum(p for _, p, _ in entries)
    nn_macs = sum(m for _, _, m in entries)
    return CostReport(entries, stft_macs, total_params, nn_macs)
