"""Forward and backward passes for every learnable block.

All functions operate on batched arrays (leading B axis) and are pure:
parameters come in as plain arrays, gradients go out as dicts keyed the
same way.  Each forward returns a cache that the matching backward
consumes; backward with a foreign or missing cache raises UsageError.

Shape conventions (single window): spectrogram (L, F, C) -> separable conv
(L, C, D) -> channel attention (L, C, D) -> projection + Bi-GRU (L, 2H)
-> attention pooling (2H,) -> classifier (K,).
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError, UsageError
from .tensor import Rng, Tensor, softmax_rows


def _require_cache(cache, kind: str):
    if not isinstance(cache, dict) or cache.get("kind") != kind:
        raise UsageError(f"backward needs the cache from a matching {kind} forward call")


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# Depthwise separable conv + BatchNorm + ReLU
# ---------------------------------------------------------------------------

def sepconv_cost(C: int, k: int, D: int):
    """Parameter counts of separable vs standard conv and their ratio."""
    separable = k * C + C * D
    standard = k * C * D
    return separable, standard, standard / separable


def sepconv_forward(m: Tensor, params: dict, training: bool,
                    residual: bool | None = None):
    """Depthwise (k x k over frames/bins, per channel) + pointwise (F -> D),
    BatchNorm over the feature axis, ReLU.

    m: (B, L, F, C).  Returns (out (B, L, C, D), cache).  In training mode
    the cache carries updated BatchNorm running statistics under
    'new_running_mean' / 'new_running_var'.

    residual: None enables the identity shortcut exactly when D == F
    (widths match); pass False to force it off.
    """
    dw, pw = params["depthwise"], params["pointwise"]
    gamma, beta = params["bn_gamma"], params["bn_beta"]
    run_mean, run_var = params["bn_running_mean"], params["bn_running_var"]
    eps = params.get("bn_eps", 1e-5)
    momentum = params.get("bn_momentum", 0.1)

    if m.ndim != 4:
        raise ShapeError(f"sepconv expects (B, L, F, C), got {m.shape}")
    B, L, F, C = m.shape
    Ck, k, k2 = dw.shape
    if Ck != C or k != k2:
        raise ShapeError(f"depthwise kernel {dw.shape} does not match C={C}")
    if pw.shape[0] != F:
        raise ShapeError(f"pointwise {pw.shape} does not match F={F}")
    D = pw.shape[1]
    if residual is None:
        residual = D == F

    pad = k // 2
    mp = np.pad(m, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    ut = np.zeros((B, L, F, C))
    for i in range(k):
        for j in range(k):
            ut += mp[:, i : i + L, j : j + F, :] * dw[:, i, j]

    y = np.einsum("blfc,fd->blcd", ut, pw)

    if training:
        mean = y.mean(axis=(0, 1, 2))
        var = y.var(axis=(0, 1, 2))
        new_rm = (1.0 - momentum) * run_mean + momentum * mean
        new_rv = (1.0 - momentum) * run_var + momentum * var
    else:
        mean, var = run_mean, run_var
        new_rm, new_rv = run_mean, run_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (y - mean) * inv_std
    pre = gamma * xhat + beta
    if residual:
        pre = pre + ut.transpose(0, 1, 3, 2)
    out = np.maximum(pre, 0.0)

    cache = {
        "kind": "sepconv", "mp": mp, "ut": ut, "xhat": xhat,
        "inv_std": inv_std, "gamma": gamma, "pw": pw, "dw": dw,
        "pre": pre, "pad": pad, "shape": (B, L, F, C, D, k),
        "training": training, "residual": residual,
        "new_running_mean": new_rm, "new_running_var": new_rv,
    }
    return out, cache


def sepconv_backward(dout: Tensor, cache: dict):
    """Gradients of the separable conv block.

    Returns ({depthwise, pointwise, bn_gamma, bn_beta}, d_input)."""
    _require_cache(cache, "sepconv")
    B, L, F, C, D, k = cache["shape"]
    pad = cache["pad"]
    mp, ut, xhat = cache["mp"], cache["ut"], cache["xhat"]
    inv_std, gamma, pw, dw = cache["inv_std"], cache["gamma"], cache["pw"], cache["dw"]

    drelu = dout * (cache["pre"] > 0)
    d_bnout = drelu
    dgamma = np.einsum("blcd,blcd->d", d_bnout, xhat)
    dbeta = d_bnout.sum(axis=(0, 1, 2))
    dxhat = d_bnout * gamma
    if cache["training"]:
        n = B * L * C
        sum_dxhat = dxhat.sum(axis=(0, 1, 2))
        sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 1, 2))
        dy = (inv_std / n) * (n * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
    else:
        dy = dxhat * inv_std

    dpw = np.einsum("blfc,blcd->fd", ut, dy)
    d_ut = np.einsum("blcd,fd->blfc", dy, pw)
    if cache["residual"]:
        d_ut = d_ut + drelu.transpose(0, 1, 3, 2)

    ddw = np.zeros_like(dw)
    dmp = np.zeros_like(mp)
    for i in range(k):
        for j in range(k):
            patch = mp[:, i : i + L, j : j + F, :]
            ddw[:, i, j] = np.einsum("blfc,blfc->c", patch, d_ut)
            dmp[:, i : i + L, j : j + F, :] += d_ut * dw[:, i, j]
    dm = dmp[:, pad : pad + L, pad : pad + F, :] if pad else dmp

    grads = {"depthwise": ddw, "pointwise": dpw, "bn_gamma": dgamma, "bn_beta": dbeta}
    return grads, dm


# ---------------------------------------------------------------------------
# Channel self-attention
# ---------------------------------------------------------------------------

def channel_attention_forward(x: Tensor, params: dict):
    """Per-frame attention over the channel axis.

    x: (B, L, C, D).  Q = X Wq, K = X Wk, V = X Wv per frame,
    A = softmax(Q K^T / sqrt(D)) rowwise, output X + gamma * A V.
    """
    wq, wk, wv, gamma = params["wq"], params["wk"], params["wv"], params["gamma"]
    if x.ndim != 4:
        raise ShapeError(f"channel attention expects (B, L, C, D), got {x.shape}")
    D = x.shape[-1]
    if wq.shape != (D, D):
        raise ShapeError(f"attention weights {wq.shape} do not match D={D}")
    q = np.einsum("blcd,de->blce", x, wq)
    k = np.einsum("blcd,de->blce", x, wk)
    v = np.einsum("blcd,de->blce", x, wv)
    scores = np.einsum("blce,blfe->blcf", q, k) / np.sqrt(D)
    a = softmax_rows(scores)
    av = np.einsum("blcf,blfd->blcd", a, v)
    out = x + gamma * av
    cache = {"kind": "chattn", "x": x, "q": q, "k": k, "v": v, "a": a,
             "av": av, "wq": wq, "wk": wk, "wv": wv, "gamma": gamma, "D": D}
    return out, cache


def channel_attention_backward(dout: Tensor, cache: dict):
    """Returns ({wq, wk, wv, gamma}, dx)."""
    _require_cache(cache, "chattn")
    x, q, k, v, a = cache["x"], cache["q"], cache["k"], cache["v"], cache["a"]
    gamma, D = cache["gamma"], cache["D"]

    dx = dout.copy()
    dgamma = np.sum(dout * cache["av"]) * np.ones_like(np.atleast_1d(gamma))
    dav = gamma * dout
    da = np.einsum("blcd,blfd->blcf", dav, v)
    dv = np.einsum("blcf,blcd->blfd", a, dav)
    dscores = a * (da - (a * da).sum(axis=-1, keepdims=True))
    dscores /= np.sqrt(D)
    dq = np.einsum("blcf,blfe->blce", dscores, k)
    dk = np.einsum("blcf,blce->blfe", dscores, q)

    dwq = np.einsum("blcd,blce->de", x, dq)
    dwk = np.einsum("blcd,blce->de", x, dk)
    dwv = np.einsum("blcd,blce->de", x, dv)
    dx += np.einsum("blce,de->blcd", dq, cache["wq"])
    dx += np.einsum("blce,de->blcd", dk, cache["wk"])
    dx += np.einsum("blce,de->blcd", dv, cache["wv"])
    grads = {"wq": dwq, "wk": dwk, "wv": dwv, "gamma": dgamma}
    return grads, dx


# ---------------------------------------------------------------------------
# Projection + bidirectional GRU
# ---------------------------------------------------------------------------

def _gru_direction_forward(u: Tensor, p: dict, reverse: bool):
    """One GRU direction over (B, L, H) inputs; zero initial state.

    Gate order: update z, reset r, candidate n with a reset-gated
    recurrent term n = tanh(Wn u + r * (Un h_prev) + bn).
    """
    B, L, H = u.shape
    order = range(L - 1, -1, -1) if reverse else range(L)
    h_prev = np.zeros((B, H))
    h_out = np.zeros((B, L, H))
    steps = []
    for t in order:
        ut = u[:, t, :]
        z = sigmoid(ut @ p["wz"].T + h_prev @ p["uz"].T + p["bz"])
        r = sigmoid(ut @ p["wr"].T + h_prev @ p["ur"].T + p["br"])
        qn = h_prev @ p["un"].T
        n = np.tanh(ut @ p["wn"].T + r * qn + p["bn"])
        h = (1.0 - z) * n + z * h_prev
        steps.append({"t": t, "u": ut, "h_prev": h_prev, "z": z, "r": r, "q": qn, "n": n})
        h_out[:, t, :] = h
        h_prev = h
    return h_out, steps


def _gru_direction_backward(dh_out: Tensor, steps: list, p: dict):
    """BPTT through one direction.  Returns (param grads, du (B, L, H))."""
    B, L, H = dh_out.shape
    grads = {name: np.zeros_like(p[name]) for name in
             ("wz", "wr", "wn", "uz", "ur", "un", "bz", "br", "bn")}
    du = np.zeros((B, L, H))
    dh_carry = np.zeros((B, H))
    for step in reversed(steps):
        t = step["t"]
        dh = dh_out[:, t, :] + dh_carry
        z, r, qn, n, h_prev, ut = (step["z"], step["r"], step["q"],
                                   step["n"], step["h_prev"], step["u"])
        dn = dh * (1.0 - z)
        dz = dh * (h_prev - n)
        dh_prev = dh * z

        dpre_n = dn * (1.0 - n * n)
        grads["wn"] += dpre_n.T @ ut
        grads["bn"] += dpre_n.sum(axis=0)
        dr = dpre_n * qn
        dq = dpre_n * r
        grads["un"] += dq.T @ h_prev
        dh_prev += dq @ p["un"]
        du_t = dpre_n @ p["wn"]

        dpre_r = dr * r * (1.0 - r)
        grads["wr"] += dpre_r.T @ ut
        grads["ur"] += dpre_r.T @ h_prev
        grads["br"] += dpre_r.sum(axis=0)
        dh_prev += dpre_r @ p["ur"]
        du_t += dpre_r @ p["wr"]

        dpre_z = dz * z * (1.0 - z)
        grads["wz"] += dpre_z.T @ ut
        grads["uz"] += dpre_z.T @ h_prev
        grads["bz"] += dpre_z.sum(axis=0)
        dh_prev += dpre_z @ p["uz"]
        du_t += dpre_z @ p["wz"]

        du[:, t, :] = du_t
        dh_carry = dh_prev
    return grads, du


def bigru_forward(x: Tensor, params: dict):
    """Flatten (C, D) per frame, project with P, run both GRU directions.

    x: (B, L, C, D) -> (B, L, 2H), forward states first in the concat.
    """
    if x.ndim != 4:
        raise ShapeError(f"bigru expects (B, L, C, D), got {x.shape}")
    B, L, C, D = x.shape
    if L < 1:
        raise ShapeError("bigru: empty sequence")
    z = x.reshape(B, L, C * D)
    u = np.einsum("blk,kh->blh", z, params["p"])
    h_f, steps_f = _gru_direction_forward(u, params["fwd"], reverse=False)
    h_b, steps_b = _gru_direction_forward(u, params["bwd"], reverse=True)
    h = np.concatenate([h_f, h_b], axis=-1)
    cache = {"kind": "bigru", "z": z, "u": u, "steps_f": steps_f,
             "steps_b": steps_b, "params": params, "shape": (B, L, C, D)}
    return h, cache


def bigru_backward(dh: Tensor, cache: dict):
    """Returns ({p, fwd.*, bwd.*}, dx (B, L, C, D))."""
    _require_cache(cache, "bigru")
    B, L, C, D = cache["shape"]
    params = cache["params"]
    H = params["p"].shape[1]
    g_f, du_f = _gru_direction_backward(dh[..., :H], cache["steps_f"], params["fwd"])
    g_b, du_b = _gru_direction_backward(dh[..., H:], cache["steps_b"], params["bwd"])
    du = du_f + du_b
    dp = np.einsum("blk,blh->kh", cache["z"], du)
    dz = np.einsum("blh,kh->blk", du, params["p"])
    grads = {"p": dp, "fwd": g_f, "bwd": g_b}
    return grads, dz.reshape(B, L, C, D)


# ---------------------------------------------------------------------------
# Attention pooling, mean pooling, classifier
# ---------------------------------------------------------------------------

def attn_pool_forward(h: Tensor, w: Tensor):
    """Softmax-weighted pooling over frames.

    h: (B, L, 2H) -> (s (B, 2H), alpha (B, L), cache)."""
    if h.ndim != 3:
        raise ShapeError(f"attention pooling expects (B, L, 2H), got {h.shape}")
    e = np.einsum("blh,h->bl", h, w)
    alpha = softmax_rows(e)
    s = np.einsum("bl,blh->bh", alpha, h)
    cache = {"kind": "attnpool", "h": h, "alpha": alpha, "w": w}
    return s, alpha, cache


def attn_pool_backward(ds: Tensor, cache: dict):
    """Returns (dw, dh)."""
    _require_cache(cache, "attnpool")
    h, alpha, w = cache["h"], cache["alpha"], cache["w"]
    dalpha = np.einsum("bh,blh->bl", ds, h)
    dh = alpha[..., None] * ds[:, None, :]
    de = alpha * (dalpha - (alpha * dalpha).sum(axis=-1, keepdims=True))
    dw = np.einsum("bl,blh->h", de, h)
    dh += de[..., None] * w
    return dw, dh


def mean_pool_forward(x: Tensor):
    """Frame-mean fallback head used when the GRU is ablated.

    x: (B, L, C, D) -> (s (B, C*D), cache)."""
    B, L, C, D = x.shape
    z = x.reshape(B, L, C * D)
    s = z.mean(axis=1)
    cache = {"kind": "meanpool", "shape": (B, L, C, D)}
    return s, cache


def mean_pool_backward(ds: Tensor, cache: dict):
    _require_cache(cache, "meanpool")
    B, L, C, D = cache["shape"]
    dz = np.repeat(ds[:, None, :] / L, L, axis=1)
    return dz.reshape(B, L, C, D)


def classifier_forward(s: Tensor, params: dict, rng: Rng | None,
                       training: bool, dropout_p: float):
    """Inverted dropout (training only) then softmax(Wc s + bc).

    s: (B, Din) -> probabilities (B, K)."""
    wc, bc = params["w"], params["b"]
    if s.ndim != 2 or s.shape[1] != wc.shape[1]:
        raise ShapeError(f"classifier input {s.shape} does not match weights {wc.shape}")
    if training and dropout_p > 0.0:
        if rng is None:
            raise UsageError("training-mode dropout needs an Rng")
        mask = rng.bernoulli(s.shape, 1.0 - dropout_p) / (1.0 - dropout_p)
    else:
        mask = np.ones_like(s)
    sd = s * mask
    logits = sd @ wc.T + bc
    probs = softmax_rows(logits)
    cache = {"kind": "classifier", "sd": sd, "mask": mask, "probs": probs, "wc": wc}
    return probs, cache


def classifier_backward_logits(dlogits: Tensor, cache: dict):
    """Backward from a gradient w.r.t. the logits (the fused path used with
    cross-entropy, where dlogits = (probs - onehot) / B).

    Returns ({w, b}, ds)."""
    _require_cache(cache, "classifier")
    dwc = dlogits.T @ cache["sd"]
    dbc = dlogits.sum(axis=0)
    dsd = dlogits @ cache["wc"]
    ds = dsd * cache["mask"]
    return {"w": dwc, "b": dbc}, ds


def classifier_backward(dprobs: Tensor, cache: dict):
    """Backward from a gradient w.r.t. the output probabilities."""
    _require_cache(cache, "classifier")
    probs = cache["probs"]
    dlogits = probs * (dprobs - (probs * dprobs).sum(axis=-1, keepdims=True))
    return classifier_backward_logits(dlogits, cache)
