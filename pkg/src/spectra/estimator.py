"""scikit-learn style wrappers so the engine composes with sklearn pipelines."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import DataError
from .model import SpectraConfig, build_model
from .stft import StftPlan, stft_filterbank_batch
from .train import TrainConfig, evaluate, predict, train_epochs


def check_windows(X, T: int | None = None, C: int | None = None) -> np.ndarray:
    """Validate a (n_windows, T, C) float array of sensor windows."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise DataError(f"expected windows of shape (n, T, C), got {X.shape}")
    if not np.isfinite(X).all():
        raise DataError("windows contain non-finite values")
    if T is not None and X.shape[1] != T:
        raise DataError(f"windows have T={X.shape[1]}, expected {T}")
    if C is not None and X.shape[2] != C:
        raise DataError(f"windows have C={X.shape[2]}, expected {C}")
    return X


class SpectrogramTransformer(BaseEstimator, TransformerMixin):
    """Stateless STFT-magnitude feature extractor.

    transform maps (n, T, C) windows to (n, L, F, C) magnitudes.
    """

    def __init__(self, n_fft: int = 16, hop: int = 8):
        self.n_fft = n_fft
        self.hop = hop

    def fit(self, X, y=None):
        X = check_windows(X)
        self.plan_ = StftPlan(n_fft=self.n_fft, hop=self.hop, n_samples=X.shape[1])
        return self

    def transform(self, X):
        check_is_fitted(self, "plan_")
        X = check_windows(X, T=self.plan_.n_samples)
        return stft_filterbank_batch(X, self.plan_)


class SpectraClassifier(BaseEstimator, ClassifierMixin):
    """Estimator facade over the full spectral-temporal network.

    Window length, channel count, and class count are inferred from the
    data at fit time; everything else is a constructor parameter.
    """

    def __init__(self, n_fft: int = 16, hop: int = 8, kernel_size: int = 3,
                 conv_features: int = 16, hidden_size: int = 32,
                 dropout: float = 0.2, use_channel_attention: bool = True,
                 use_gru: bool = True, epochs: int = 15, batch_size: int = 32,
                 learning_rate: float = 1e-3, seed: int = 0):
        self.n_fft = n_fft
        self.hop = hop
        self.kernel_size = kernel_size
        self.conv_features = conv_features
        self.hidden_size = hidden_size
        self.dropout = dropout
        self.use_channel_attention = use_channel_attention
        self.use_gru = use_gru
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed

    def _config(self, T: int, C: int, K: int) -> SpectraConfig:
        return SpectraConfig(
            T=T, C=C, K=K, n_fft=self.n_fft, hop=self.hop,
            k=self.kernel_size, D=self.conv_features, H=self.hidden_size,
            dropout_p=self.dropout,
            use_channel_attention=self.use_channel_attention,
            use_gru=self.use_gru, seed=self.seed)

    def fit(self, X, y):
        X = check_windows(X)
        y = np.asarray(y)
        if len(y) != X.shape[0]:
            raise DataError("X and y have different lengths")
        self.classes_, encoded = np.unique(y, return_inverse=True)
        config = self._config(X.shape[1], X.shape[2], len(self.classes_))
        self.model_ = build_model(config)
        tc = TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                         learning_rate=self.learning_rate, seed=self.seed)
        _, self.history_ = train_epochs(self.model_, X, encoded, tc)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        cfg = self.model_.config
        X = check_windows(X, T=cfg.T, C=cfg.C)
        return predict(self.model_, X)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def macro_f1(self, X, y) -> float:
        check_is_fitted(self, "model_")
        encoded = np.searchsorted(self.classes_, np.asarray(y))
        return evaluate(self.model_, check_windows(X), encoded).macro_f1
