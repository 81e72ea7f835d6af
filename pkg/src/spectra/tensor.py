"""Dense float64 array primitives and deterministic random initialization.

Arrays are plain numpy ndarrays in float64 (compute precision; 32-bit only
appears on disk and in the INT8 dequant path).  Functions here never mutate
their inputs.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

Tensor = np.ndarray


def as_tensor(values) -> Tensor:
    """Coerce to a float64 array, validating finiteness is left to callers."""
    return np.asarray(values, dtype=np.float64)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with an explicit inner-dimension check.

    Accumulation is numpy's row-major left-to-right order, which is
    bit-stable across runs on one platform.
    """
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax with per-row max subtraction for stability."""
    x = as_tensor(x)
    if np.isnan(x).any():
        raise NumericError("softmax_rows: NaN in input")
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


class Rng:
    """Deterministic pseudo-random stream (PCG64 behind numpy's Generator).

    The same seed yields the same scalar stream on every platform; all
    stochastic behaviour in the package flows through instances of this
    class so runs are reproducible end to end.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, shape, mean: float = 0.0, std: float = 1.0) -> Tensor:
        if std < 0:
            raise ConfigError(f"normal: std must be >= 0, got {std}")
        return self._gen.normal(mean, std, size=shape) if std > 0 else np.full(shape, float(mean))

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> Tensor:
        return self._gen.uniform(low, high, size=shape)

    def glorot_uniform(self, shape, fan_in: int, fan_out: int) -> Tensor:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return self._gen.uniform(-limit, limit, size=shape)

    def bernoulli(self, shape, p: float) -> Tensor:
        """0/1 mask where each entry is 1 with probability p."""
        return (self._gen.random(size=shape) < p).astype(np.float64)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int) -> int:
        return int(self._gen.integers(low, high))

    def spawn(self, offset: int) -> "Rng":
        """Independent child stream derived from the seed and an offset."""
        return Rng((self.seed * 0x9E3779B97F4A7C15 + offset) % (2**63))


def rng_normal(rng: Rng, shape, mean: float = 0.0, std: float = 1.0) -> Tensor:
    """Deterministic normal draws; kept as a free function for symmetry."""
    return rng.normal(shape, mean, std)
