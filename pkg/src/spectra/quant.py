"""Post-training INT8 affine quantization and the quantized inference path.

Per-tensor asymmetric parameters come from min/max observed during
calibration.  Dense multiplies (convolutions, projections, attention
q/k/v maps, pooling scores, classifier) run in integer arithmetic with
int64 accumulation; the GRU recurrence, BatchNorm, softmax, and the STFT
front-end stay in real arithmetic (the fallback set).  Rounding is
half-away-from-zero for cross-platform reproducibility.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers, serialize
from .errors import DataError, UsageError
from .model import ModelParams, forward
from .stft import stft_filterbank_batch
from .tensor import Tensor, softmax_rows

QMIN, QMAX = -128, 127

#: operators that stay in real arithmetic under INT8 inference
FALLBACK_OPS = ("stft", "batchnorm", "relu", "softmax", "gru_recurrence",
                "attention_affinity", "attention_pooling_mix")


def round_half_away(x: Tensor) -> Tensor:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class QuantParams:
    """Affine (scale, zero_point) pair for one tensor."""

    scale: float
    zero_point: int

    @classmethod
    def from_min_max(cls, lo: float, hi: float) -> "QuantParams":
        if hi > lo:
            scale = (hi - lo) / 255.0
            zp = int(np.clip(round_half_away(np.float64(-128.0 - lo / scale)), QMIN, QMAX))
            return cls(scale, zp)
        # degenerate range: symmetric around zero so constants round-trip
        scale = max(abs(hi), 1e-8) / 127.0
        return cls(scale, 0)

    @classmethod
    def from_tensor(cls, x: Tensor) -> "QuantParams":
        return cls.from_min_max(float(np.min(x)), float(np.max(x)))

    def quantize(self, x: Tensor) -> np.ndarray:
        q = round_half_away(np.asarray(x, dtype=np.float64) / self.scale) + self.zero_point
        return np.clip(q, QMIN, QMAX).astype(np.int8)

    def dequantize(self, q: np.ndarray) -> Tensor:
        return (q.astype(np.float64) - self.zero_point) * self.scale


@dataclass
class QuantizedModel:
    """Base parameters plus INT8 payloads and calibration statistics."""

    base: ModelParams
    mode: str  # "full" (weights + activations) or "weights_only"
    weights: dict[str, tuple[np.ndarray, QuantParams]] = field(default_factory=dict)
    acts: dict[str, QuantParams] = field(default_factory=dict)
    fallback_ops: tuple[str, ...] = FALLBACK_OPS

    def dequantized_weight(self, name: str) -> Tensor:
        q, qp = self.weights[name]
        return qp.dequantize(q)


def eligible_weight_names(model: ModelParams) -> list[str]:
    cfg = model.config
    names = ["sepconv.depthwise", "sepconv.pointwise"]
    if cfg.use_channel_attention:
        names += ["attn.wq", "attn.wk", "attn.wv"]
    if cfg.use_gru:
        names += ["gru.p", "pool.w"]
    names.append("clf.w")
    return names


def _observe_sites(model: ModelParams, x: Tensor) -> dict[str, Tensor]:
    """One eval-mode forward, returning the arrays at each activation site."""
    _, caches = forward(model, x, training=False, with_cache=True)
    cfg = model.config
    sites = {
        "stft_mag": caches["sepconv"]["mp"],
        "sepconv_dw": caches["sepconv"]["ut"],
        "clf_in": caches["clf"]["sd"],
    }
    if cfg.use_channel_attention:
        sites["attn_in"] = caches["attn"]["x"]
    if cfg.use_gru:
        sites["proj_in"] = caches["gru"]["z"]
        sites["pool_in"] = caches["pool"]["h"]
    return sites


def calibrate(model: ModelParams, windows: Tensor, mode: str = "full",
              batch_size: int = 64) -> QuantizedModel:
    """Derive per-tensor (scale, zero_point) pairs from calibration data.

    windows: (N, T, C) normalized input windows.  Activation ranges are
    global min/max over all calibration forward passes; weight ranges come
    straight from the stored tensors.
    """
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 3 or windows.shape[0] == 0:
        raise DataError("calibration set must be a nonempty (N, T, C) array")
    if mode not in ("full", "weights_only"):
        raise UsageError(f"unknown quantization mode {mode!r}")

    lo: dict[str, float] = {}
    hi: dict[str, float] = {}
    for start in range(0, windows.shape[0], batch_size):
        for site, arr in _observe_sites(model, windows[start : start + batch_size]).items():
            lo[site] = min(lo.get(site, np.inf), float(arr.min()))
            hi[site] = max(hi.get(site, -np.inf), float(arr.max()))
    acts = {site: QuantParams.from_min_max(lo[site], hi[site]) for site in lo}

    weights = {}
    for name in eligible_weight_names(model):
        w = model.tensors[name]
        qp = QuantParams.from_tensor(w)
        weights[name] = (qp.quantize(w), qp)
    return QuantizedModel(base=model.copy(), mode=mode, weights=weights, acts=acts)


def _int_mix(qx: np.ndarray, x_qp: QuantParams, qw: np.ndarray,
             w_qp: QuantParams, spec: str) -> Tensor:
    """Integer einsum with zero points removed, rescaled to reals."""
    acc = np.einsum(spec, qx.astype(np.int64) - x_qp.zero_point,
                    qw.astype(np.int64) - w_qp.zero_point)
    return acc.astype(np.float64) * (x_qp.scale * w_qp.scale)


def quantized_forward(qmodel: QuantizedModel, x: Tensor) -> Tensor:
    """INT8 inference on a (B, T, C) batch -> probabilities (B, K).

    Eligible multiplies run on int8 operands with int64 accumulation;
    fallback ops consume dequantized reals.  Eval mode only (no dropout,
    running BatchNorm statistics).
    """
    if not qmodel.weights:
        raise UsageError("model has not been calibrated")
    cfg = qmodel.base.config
    mags = stft_filterbank_batch(np.asarray(x, dtype=np.float64), cfg.stft_plan())
    return quantized_forward_from_mags(qmodel, mags)


def quantized_forward_from_mags(qmodel: QuantizedModel, mags: Tensor) -> Tensor:
    """INT8 backbone on precomputed STFT magnitudes (B, L, F, C)."""
    if not qmodel.weights:
        raise UsageError("model has not been calibrated")
    base = qmodel.base
    cfg = base.config
    weights_only = qmodel.mode == "weights_only"

    def wq(name):
        return qmodel.weights[name]

    B, L, F, C = mags.shape
    k = cfg.k
    pad = k // 2

    # depthwise conv
    q_dw, dw_qp = wq("sepconv.depthwise")
    if weights_only:
        mp = np.pad(mags, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
        dw = dw_qp.dequantize(q_dw)
        ut = np.zeros((B, L, F, C))
        for i in range(k):
            for j in range(k):
                ut += mp[:, i : i + L, j : j + F, :] * dw[:, i, j]
    else:
        m_qp = qmodel.acts["stft_mag"]
        qm = m_qp.quantize(mags).astype(np.int64) - m_qp.zero_point
        qm = np.pad(qm, ((0, 0), (pad, pad), (pad, pad), (0, 0)))  # pad = real zero
        qk = q_dw.astype(np.int64) - dw_qp.zero_point
        acc = np.zeros((B, L, F, C), dtype=np.int64)
        for i in range(k):
            for j in range(k):
                acc += qm[:, i : i + L, j : j + F, :] * qk[:, i, j]
        ut = acc.astype(np.float64) * (m_qp.scale * dw_qp.scale)

    # pointwise projection
    q_pw, pw_qp = wq("sepconv.pointwise")
    if weights_only:
        y = np.einsum("blfc,fd->blcd", ut, pw_qp.dequantize(q_pw))
    else:
        ut_qp = qmodel.acts["sepconv_dw"]
        y = _int_mix(ut_qp.quantize(ut), ut_qp, q_pw, pw_qp, "blfc,fd->blcd")

    # BatchNorm (running stats) + optional residual + ReLU: fallback
    t = base.tensors
    inv = 1.0 / np.sqrt(t["sepconv.bn_running_var"] + 1e-5)
    pre = t["sepconv.bn_gamma"] * (y - t["sepconv.bn_running_mean"]) * inv \
        + t["sepconv.bn_beta"]
    if cfg.D == F:
        pre = pre + ut.transpose(0, 1, 3, 2)
    out = np.maximum(pre, 0.0)

    if cfg.use_channel_attention:
        gamma = t["attn.gamma"]
        if weights_only:
            q = np.einsum("blcd,de->blce", out, qmodel.dequantized_weight("attn.wq"))
            kk = np.einsum("blcd,de->blce", out, qmodel.dequantized_weight("attn.wk"))
            v = np.einsum("blcd,de->blce", out, qmodel.dequantized_weight("attn.wv"))
        else:
            x_qp = qmodel.acts["attn_in"]
            qx = x_qp.quantize(out)
            q = _int_mix(qx, x_qp, wq("attn.wq")[0], wq("attn.wq")[1], "blcd,de->blce")
            kk = _int_mix(qx, x_qp, wq("attn.wk")[0], wq("attn.wk")[1], "blcd,de->blce")
            v = _int_mix(qx, x_qp, wq("attn.wv")[0], wq("attn.wv")[1], "blcd,de->blce")
        scores = np.einsum("blce,blfe->blcf", q, kk) / np.sqrt(cfg.D)
        a = softmax_rows(scores)
        out = out + gamma * np.einsum("blcf,blfd->blcd", a, v)

    if cfg.use_gru:
        z = out.reshape(B, L, cfg.C * cfg.D)
        q_p, p_qp = wq("gru.p")
        q_p = q_p.reshape(cfg.C * cfg.D, cfg.H)
        if weights_only:
            u = np.einsum("blk,kh->blh", z, p_qp.dequantize(q_p))
        else:
            z_qp = qmodel.acts["proj_in"]
            u = _int_mix(z_qp.quantize(z), z_qp, q_p, p_qp, "blk,kh->blh")
        gru_params = {
            "fwd": {g: t[f"gru.fwd.{g}"] for g in
                    ("wz", "wr", "wn", "uz", "ur", "un", "bz", "br", "bn")},
            "bwd": {g: t[f"gru.bwd.{g}"] for g in
                    ("wz", "wr", "wn", "uz", "ur", "un", "bz", "br", "bn")},
        }
        h_f, _ = layers._gru_direction_forward(u, gru_params["fwd"], reverse=False)
        h_b, _ = layers._gru_direction_forward(u, gru_params["bwd"], reverse=True)
        h = np.concatenate([h_f, h_b], axis=-1)

        q_w, pw_pool_qp = wq("pool.w")
        if weights_only:
            e = np.einsum("blh,h->bl", h, pw_pool_qp.dequantize(q_w))
        else:
            h_qp = qmodel.acts["pool_in"]
            e = _int_mix(h_qp.quantize(h), h_qp, q_w, pw_pool_qp, "blh,h->bl")
        alpha = softmax_rows(e)
        s = np.einsum("bl,blh->bh", alpha, h)
    else:
        s = out.reshape(B, L, cfg.C * cfg.D).mean(axis=1)

    q_wc, wc_qp = wq("clf.w")
    q_wc = q_wc.reshape(cfg.K, cfg.pooled_dim)
    if weights_only:
        logits = s @ wc_qp.dequantize(q_wc).T + t["clf.b"]
    else:
        s_qp = qmodel.acts["clf_in"]
        logits = _int_mix(s_qp.quantize(s), s_qp, q_wc, wc_qp, "bk,ck->bc") + t["clf.b"]
    return softmax_rows(logits)


# ---------------------------------------------------------------------------
# Serialization: SPCT version 2
# ---------------------------------------------------------------------------

def save_quantized(qmodel: QuantizedModel, path: str) -> None:
    weight_entries = [
        (name, qp.scale, qp.zero_point, q.reshape(-1))
        for name, (q, qp) in qmodel.weights.items()
    ]
    act_entries = [(site, qp.scale, qp.zero_point) for site, qp in qmodel.acts.items()]
    block = serialize.quant_block_bytes(qmodel.mode, weight_entries, act_entries)
    serialize.save_model(qmodel.base, path, version=serialize.VERSION_QUANT,
                         quant_block=block)


def load_quantized(path: str) -> QuantizedModel:
    r = serialize._open_checked(path, (serialize.VERSION_QUANT,))
    config = serialize._structural(r, serialize._read_config)
    tensors = serialize._structural(r, serialize._read_tensor_table)
    mode, raw_weights, raw_acts = serialize._structural(
        r, serialize.read_quant_block)
    serialize._finish_load(r)
    base = ModelParams(config, tensors)
    weights = {
        name: (payload.reshape(tensors[name].shape), QuantParams(scale, zp))
        for name, (scale, zp, payload) in raw_weights.items()
    }
    acts = {site: QuantParams(scale, zp) for site, (scale, zp) in raw_acts.items()}
    return QuantizedModel(base=base, mode=mode, weights=weights, acts=acts)
