"""Mini-batch training with cross-entropy and Adam, plus evaluation metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, LabelError
from .model import ModelParams, backward, forward
from .tensor import Rng, Tensor


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise DataError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise DataError(f"learning_rate must be >= 0, got {self.learning_rate}")


@dataclass
class Metrics:
    accuracy: float
    macro_f1: float
    per_class_precision: list[float]
    per_class_recall: list[float]
    per_class_f1: list[float]
    loss: float

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "per_class_precision": self.per_class_precision,
            "per_class_recall": self.per_class_recall,
            "per_class_f1": self.per_class_f1,
            "loss": self.loss,
        }


def cross_entropy(y_hat: Tensor, labels) -> float:
    """Mean of -log(y_hat[label]) with probabilities clamped at 1e-12."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    K = y_hat.shape[1]
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= K:
        raise LabelError(f"labels must lie in [0, {K}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    picked = y_hat[np.arange(len(labels)), labels]
    return float(-np.log(np.maximum(picked, 1e-12)).mean())


def cross_entropy_grad_logits(probs: Tensor, labels) -> Tensor:
    """Gradient of mean cross-entropy w.r.t. the logits: (y_hat - y) / B."""
    labels = np.asarray(labels, dtype=np.int64)
    g = probs.copy()
    g[np.arange(len(labels)), labels] -= 1.0
    return g / len(labels)


class Adam:
    """Adaptive-moment optimizer over a named parameter dict."""

    def __init__(self, tc: TrainConfig):
        self.tc = tc
        self.t = 0
        self.m: dict[str, Tensor] = {}
        self.v: dict[str, Tensor] = {}

    def step(self, params: dict[str, Tensor], grads: dict[str, Tensor]) -> None:
        tc = self.tc
        self.t += 1
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])
            self.m[name] = tc.beta1 * self.m[name] + (1 - tc.beta1) * g
            self.v[name] = tc.beta2 * self.v[name] + (1 - tc.beta2) * g * g
            m_hat = self.m[name] / (1 - tc.beta1 ** self.t)
            v_hat = self.v[name] / (1 - tc.beta2 ** self.t)
            update = tc.learning_rate * m_hat / (np.sqrt(v_hat) + tc.eps)
            if tc.learning_rate != 0.0:
                params[name] = params[name] - update


def train_step(model: ModelParams, optimizer: Adam, x: Tensor, labels,
               rng: Rng) -> float:
    """One forward/backward/update on a batch; returns the batch loss."""
    probs, caches = forward(model, x, training=True, rng=rng, with_cache=True)
    loss = cross_entropy(probs, labels)
    dlogits = cross_entropy_grad_logits(probs, labels)
    grads = backward(model, caches, dlogits)
    optimizer.step(model.tensors, grads)
    return loss


def train_epochs(model: ModelParams, windows: Tensor, labels, tc: TrainConfig,
                 eval_windows: Tensor | None = None, eval_labels=None,
                 verbose: bool = False):
    """Train in place for tc.epochs; returns (model, history).

    history rows: dicts with epoch, train_loss and, when an eval split is
    given, eval_acc / eval_macro_f1.  Deterministic for a fixed seed
    (shuffling and dropout are both seeded).
    """
    windows = np.asarray(windows, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if windows.ndim != 3 or windows.shape[0] == 0:
        raise DataError("training data must be a nonempty (N, T, C) array")
    if len(labels) != windows.shape[0]:
        raise DataError("labels length does not match window count")

    n = windows.shape[0]
    optimizer = Adam(tc)
    shuffle_rng = Rng(tc.seed)
    dropout_rng = shuffle_rng.spawn(1)
    history: list[dict] = []
    for epoch in range(tc.epochs):
        order = shuffle_rng.permutation(n) if tc.shuffle else np.arange(n)
        losses = []
        for start in range(0, n, tc.batch_size):
            idx = order[start : start + tc.batch_size]
            losses.append(train_step(model, optimizer, windows[idx],
                                     labels[idx], dropout_rng))
        row = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if eval_windows is not None:
            m = evaluate(model, eval_windows, eval_labels)
            row["eval_acc"] = m.accuracy
            row["eval_macro_f1"] = m.macro_f1
        history.append(row)
        if verbose:
            print("  " + "  ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}"
                                   for k, v in row.items()))
    return model, history


def predict(model: ModelParams, windows: Tensor, batch_size: int = 256) -> np.ndarray:
    """Eval-mode probabilities for a (N, T, C) array, batched for memory."""
    windows = np.asarray(windows, dtype=np.float64)
    chunks = [forward(model, windows[s : s + batch_size])
              for s in range(0, windows.shape[0], batch_size)]
    return np.concatenate(chunks, axis=0)


def metrics_from_predictions(probs: Tensor, labels, loss: float | None = None) -> Metrics:
    """Argmax predictions (lowest-index tie-break) -> accuracy and macro F1.

    Classes with zero precision+recall denominators contribute F1 = 0.
    """
    labels = np.asarray(labels, dtype=np.int64)
    preds = np.argmax(probs, axis=1)  # argmax takes the first maximum
    K = probs.shape[1]
    precision, recall, f1 = [], [], []
    for c in range(K):
        tp = int(np.sum((preds == c) & (labels == c)))
        fp = int(np.sum((preds == c) & (labels != c)))
        fn = int(np.sum((preds != c) & (labels == c)))
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        precision.append(p)
        recall.append(r)
        f1.append(2 * p * r / (p + r) if p + r else 0.0)
    acc = float(np.mean(preds == labels))
    if loss is None:
        loss = cross_entropy(probs, labels)
    return Metrics(accuracy=acc, macro_f1=float(np.mean(f1)),
                   per_class_precision=precision, per_class_recall=recall,
                   per_class_f1=f1, loss=loss)


def evaluate(model: ModelParams, windows: Tensor, labels) -> Metrics:
    windows = np.asarray(windows, dtype=np.float64)
    if windows.shape[0] == 0:
        raise DataError("evaluation data is empty")
    probs = predict(model, windows)
    return metrics_from_predictions(probs, labels)


def write_history_csv(history: list[dict], path: str) -> None:
    fields = ["epoch", "train_loss", "eval_acc", "eval_macro_f1"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in history:
            writer.writerow({f: row.get(f, "") for f in fields})
