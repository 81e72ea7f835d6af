"""STFT magnitude front-end.

Two interchangeable realizations are provided: a direct one built on an
in-module radix-2 FFT, and a strided convolution filter bank whose kernels
are Hann-windowed cosines/sines.  The filter bank is the deployment path
(no FFT operator required) and must agree with the direct path to 1e-9.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, as_tensor


def hann_window(n_fft: int) -> Tensor:
    """Periodic Hann taper w[t] = 0.5 * (1 - cos(2*pi*t / n_fft))."""
    if n_fft < 2:
        raise ConfigError(f"hann_window: n_fft must be >= 2, got {n_fft}")
    t = np.arange(n_fft, dtype=np.float64)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * t / n_fft))


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass
class StftPlan:
    """Frame geometry and window for a fixed analysis configuration."""

    n_fft: int
    hop: int
    n_samples: int
    window: Tensor = field(init=False)
    n_bins: int = field(init=False)
    n_frames: int = field(init=False)

    def __post_init__(self):
        if not _is_pow2(self.n_fft):
            raise ConfigError(f"n_fft must be a power of two, got {self.n_fft}")
        if self.n_fft < 2:
            raise ConfigError(f"n_fft must be >= 2, got {self.n_fft}")
        if self.hop < 1:
            raise ConfigError(f"hop must be >= 1, got {self.hop}")
        if self.n_samples < self.n_fft:
            raise ShapeError(
                f"window of {self.n_samples} samples is shorter than n_fft={self.n_fft}"
            )
        self.window = hann_window(self.n_fft)
        self.n_bins = self.n_fft // 2 + 1
        self.n_frames = (self.n_samples - self.n_fft) // self.hop + 1


def fft_radix2(x: np.ndarray) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT over the last axis.

    Length must be a power of two.  Returns complex128.
    """
    n = x.shape[-1]
    if not _is_pow2(n):
        raise ConfigError(f"fft_radix2: length must be a power of two, got {n}")
    # Bit-reversal permutation.
    levels = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(levels):
        rev |= ((idx >> b) & 1) << (levels - 1 - b)
    out = np.asarray(x, dtype=np.complex128)[..., rev].copy()
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = out.reshape(*out.shape[:-1], n // size, size)
        even = blocks[..., :half].copy()
        odd = blocks[..., half:] * tw
        blocks[..., :half] = even + odd
        blocks[..., half:] = even - odd
        size *= 2
    return out


def _frames(x: Tensor, plan: StftPlan) -> Tensor:
    """Slice (T, C) input into (L, n_fft, C) hopping frames (no padding)."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"expected a (T, C) window, got shape {x.shape}")
    if x.shape[0] < plan.n_fft:
        raise ShapeError(f"T={x.shape[0]} is shorter than n_fft={plan.n_fft}")
    starts = np.arange(plan.n_frames) * plan.hop
    return np.stack([x[s : s + plan.n_fft] for s in starts], axis=0)


def stft_direct(x: Tensor, plan: StftPlan) -> Tensor:
    """Per-channel STFT magnitudes of a (T, C) window, shape (L, F, C).

    Each Hann-windowed frame goes through the in-module radix-2 FFT;
    only the first F = n_fft/2 + 1 bins are kept and phase is discarded.
    """
    frames = _frames(x, plan)  # (L, n_fft, C)
    windowed = frames * plan.window[None, :, None]
    spectra = fft_radix2(np.moveaxis(windowed, 1, -1))  # (L, C, n_fft)
    mags = np.abs(spectra[..., : plan.n_bins])  # (L, C, F)
    return np.ascontiguousarray(np.moveaxis(mags, 1, 2))  # (L, F, C)


def filterbank_kernels(plan: StftPlan) -> tuple[Tensor, Tensor]:
    """Hann-windowed cosine/sine kernels, each of shape (F, n_fft)."""
    t = np.arange(plan.n_fft, dtype=np.float64)
    f = np.arange(plan.n_bins, dtype=np.float64)[:, None]
    phase = 2.0 * np.pi * f * t[None, :] / plan.n_fft
    return plan.window * np.cos(phase), plan.window * np.sin(phase)


def stft_filterbank(x: Tensor, plan: StftPlan) -> Tensor:
    """STFT magnitudes via 2F strided 1-D correlations per channel.

    Deployment-equivalent path: real/imaginary parts come from cosine and
    sine kernel banks with stride = hop, then magnitude = sqrt(re^2 + im^2).
    Agrees with stft_direct to well under 1e-9.
    """
    frames = _frames(x, plan)  # (L, n_fft, C)
    cos_k, sin_k = filterbank_kernels(plan)
    re = np.einsum("ltc,ft->lfc", frames, cos_k)
    im = np.einsum("ltc,ft->lfc", frames, sin_k)
    return np.sqrt(re * re + im * im)


def stft_filterbank_batch(x: Tensor, plan: StftPlan) -> Tensor:
    """Filter-bank STFT of a (B, T, C) batch, shape (B, L, F, C)."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"expected a (B, T, C) batch, got shape {x.shape}")
    if x.shape[1] < plan.n_fft:
        raise ShapeError(f"T={x.shape[1]} is shorter than n_fft={plan.n_fft}")
    starts = np.arange(plan.n_frames) * plan.hop
    frames = np.stack([x[:, s : s + plan.n_fft, :] for s in starts], axis=1)
    cos_k, sin_k = filterbank_kernels(plan)
    re = np.einsum("bltc,ft->blfc", frames, cos_k)
    im = np.einsum("bltc,ft->blfc", frames, sin_k)
    return np.sqrt(re * re + im * im)
