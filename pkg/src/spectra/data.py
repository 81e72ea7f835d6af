"""IMU data pipeline: resampling, windowing, normalization, a synthetic
rhythmic-activity dataset, and the CSV interchange format.

CSV contract: header ``t,c0,...,c{C-1}[,label]``, ``t`` in seconds,
decimal point ``.``, optional integer label column, rows time-sorted.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .tensor import Rng, Tensor

SAMPLE_RATE_HZ = 50.0


@dataclass
class Recording:
    """A multichannel stream with timestamps and optional per-sample labels."""

    timestamps: Tensor            # (N,) seconds, strictly increasing
    samples: Tensor               # (N, C)
    labels: np.ndarray | None = None  # (N,) ints or None

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or len(self.timestamps) != len(self.samples):
            raise DataError("samples must be (N, C) with matching timestamps")
        if np.any(np.diff(self.timestamps) <= 0):
            raise DataError("timestamps must be strictly increasing")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if len(self.labels) != len(self.samples):
                raise DataError("labels length does not match sample count")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[1]


@dataclass
class WindowBatch:
    """Fixed-length windows ready for the model."""

    windows: Tensor               # (B, T, C)
    labels: np.ndarray            # (B,)
    norm_stats: tuple[Tensor, Tensor] | None = None  # per-channel (mean, std)
    degenerate_channels: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.int64))


def resample_50hz(rec: Recording) -> Recording:
    """Linear interpolation onto a uniform 50 Hz grid over [t0, t_last].

    Labels are carried over from the nearest original sample.
    """
    if len(rec.timestamps) < 2:
        raise DataError("resampling needs at least 2 samples")
    t0, t1 = rec.timestamps[0], rec.timestamps[-1]
    n_out = int(np.floor((t1 - t0) * SAMPLE_RATE_HZ + 1e-9)) + 1
    grid = t0 + np.arange(n_out) / SAMPLE_RATE_HZ
    out = np.column_stack([
        np.interp(grid, rec.timestamps, rec.samples[:, c])
        for c in range(rec.n_channels)
    ])
    labels = None
    if rec.labels is not None:
        nearest = np.searchsorted(rec.timestamps, grid)
        nearest = np.clip(nearest, 1, len(rec.timestamps) - 1)
        left_closer = (grid - rec.timestamps[nearest - 1]) <= (rec.timestamps[nearest] - grid)
        nearest = np.where(left_closer, nearest - 1, nearest)
        labels = rec.labels[nearest]
    return Recording(grid, out, labels)


def make_windows(rec: Recording, T: int = 100, overlap: float = 0.5) -> WindowBatch:
    """Segment into length-T windows with the given overlap fraction.

    hop = T * (1 - overlap); a partial tail is dropped.  Window labels come
    from a majority vote over per-sample labels (lowest index on ties).
    """
    n = len(rec.samples)
    if n < T:
        raise DataError(f"recording of {n} samples is shorter than T={T}")
    hop = int(round(T * (1.0 - overlap)))
    if hop < 1:
        raise DataError(f"overlap={overlap} leaves a hop of < 1 sample")
    count = (n - T) // hop + 1
    starts = np.arange(count) * hop
    windows = np.stack([rec.samples[s : s + T] for s in starts])
    if rec.labels is not None:
        labels = np.array([
            np.bincount(rec.labels[s : s + T]).argmax() for s in starts
        ], dtype=np.int64)
    else:
        labels = np.full(count, -1, dtype=np.int64)
    return WindowBatch(windows, labels)


def channel_stats(windows: Tensor) -> tuple[Tensor, Tensor]:
    """Per-channel mean/std pooled over all windows and samples."""
    mean = windows.mean(axis=(0, 1))
    std = windows.std(axis=(0, 1))
    return mean, std


def normalize(batch: WindowBatch,
              stats: tuple[Tensor, Tensor] | None = None) -> WindowBatch:
    """Z-normalize each channel.

    Without stats this is a training split: per-channel statistics are
    pooled over the whole batch.  Eval splits should pass the training
    stats back in.  Zero-variance channels fall back to std = 1 and are
    flagged in degenerate_channels.
    """
    if stats is None:
        mean, std = channel_stats(batch.windows)
    else:
        mean, std = np.asarray(stats[0], dtype=np.float64), np.asarray(stats[1], dtype=np.float64)
    degenerate = np.flatnonzero(std <= 0)
    safe_std = np.where(std > 0, std, 1.0)
    return WindowBatch(
        windows=(batch.windows - mean) / safe_std,
        labels=batch.labels,
        norm_stats=(mean, safe_std),
        degenerate_channels=degenerate,
    )


def denormalize(windows: Tensor, stats: tuple[Tensor, Tensor]) -> Tensor:
    mean, std = stats
    return windows * std + mean


def synth_dataset(n_classes: int, seconds_per_class: float, seed: int,
                  n_channels: int = 6, noise_std: float = 0.3):
    """Labeled synthetic rhythmic signals standing in for public HAR sets.

    Class c has fundamental f_c = 1.0 + 0.8 c Hz; channel j carries
    harmonic (j mod 3) + 1 at amplitude 1 / (1 + j), plus Gaussian noise.
    Each contiguous class segment gets an independent random phase.
    Returns (train, test) Recordings with an 80/20 contiguous split per class.
    """
    if n_classes < 2:
        raise DataError(f"need at least 2 classes, got {n_classes}")
    rng = Rng(seed)
    train_parts, test_parts = [], []
    for c in range(n_classes):
        f_c = 1.0 + 0.8 * c
        n = int(round(seconds_per_class * SAMPLE_RATE_HZ))
        t = np.arange(n) / SAMPLE_RATE_HZ
        n_train = int(round(0.8 * n))
        for part, sl in ((train_parts, slice(0, n_train)),
                         (test_parts, slice(n_train, n))):
            tt = t[sl]
            phase = rng.uniform((n_channels,), 0.0, 2.0 * np.pi)
            sig = np.column_stack([
                np.sin(2.0 * np.pi * f_c * ((j % 3) + 1) * tt + phase[j]) / (1 + j)
                for j in range(n_channels)
            ])
            if noise_std > 0:
                sig = sig + rng.normal(sig.shape, 0.0, noise_std)
            part.append((sig, np.full(len(tt), c, dtype=np.int64)))

    def _assemble(parts):
        samples = np.concatenate([p[0] for p in parts])
        labels = np.concatenate([p[1] for p in parts])
        ts = np.arange(len(samples)) / SAMPLE_RATE_HZ
        return Recording(ts, samples, labels)

    return _assemble(train_parts), _assemble(test_parts)


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------

def save_recording_csv(rec: Recording, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["t"] + [f"c{i}" for i in range(rec.n_channels)]
        if rec.labels is not None:
            header.append("label")
        writer.writerow(header)
        for i in range(len(rec.samples)):
            row = [repr(float(rec.timestamps[i]))] + [
                repr(float(v)) for v in rec.samples[i]]
            if rec.labels is not None:
                row.append(int(rec.labels[i]))
            writer.writerow(row)


def load_recording_csv(path: str) -> Recording:
    """Parse the documented CSV format, rejecting unsorted timestamps."""
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        has_label = header and header[-1] == "label"
        channel_cols = header[1:-1] if has_label else header[1:]
        if not header or header[0] != "t" or any(
                h != f"c{i}" for i, h in enumerate(channel_cols)):
            raise DataError(f"{path}: header must be t,c0,...,c{{C-1}}[,label], got {header}")
        ts, rows, labels = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                ts.append(float(row[0]))
                rows.append([float(v) for v in row[1 : 1 + len(channel_cols)]])
                if has_label:
                    labels.append(int(row[-1]))
            except (ValueError, IndexError):
                raise DataError(f"{path}:{lineno}: malformed row {row}") from None
    if len(ts) < 1:
        raise DataError(f"{path}: no data rows")
    ts = np.asarray(ts)
    if np.any(np.diff(ts) <= 0):
        raise DataError(f"{path}: rows are not strictly time-sorted")
    return Recording(ts, np.asarray(rows), np.asarray(labels) if has_label else None)


def load_split(data_dir: str, T: int = 100, overlap: float = 0.5):
    """Load train.csv/test.csv from a directory, window and normalize.

    Eval windows reuse the training normalization statistics.
    Returns (train_batch, test_batch).
    """
    import os

    train_rec = load_recording_csv(os.path.join(data_dir, "train.csv"))
    test_rec = load_recording_csv(os.path.join(data_dir, "test.csv"))
    train = normalize(make_windows(train_rec, T=T, overlap=overlap))
    test = normalize(make_windows(test_rec, T=T, overlap=overlap), train.norm_stats)
    return train, test
