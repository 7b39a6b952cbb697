"""Datasets: CSV ingestion, synthetic waveforms, normalization and splits.

CSV rows are ``label,v0,v1,...,v{N-1}`` for single-channel signals.  Labels
are integers or one of the beat letters N, L, R, A, V.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, LengthMismatch

LETTER_LABELS = {"N": 0, "L": 1, "R": 2, "A": 3, "V": 4}
BEAT_CLASSES = ["N", "L", "R", "A", "V"]
SYNTH_CLASSES = ["bump", "double_bump", "square", "sawtooth", "chirp"]
SYNTH_LENGTH = 128
VAR_FLOOR = 1e-12


@dataclass
class Dataset:
    signals: np.ndarray  # (n, c, N)
    labels: np.ndarray  # (n,) int
    class_names: list = field(default_factory=lambda: list(BEAT_CLASSES))

    def __post_init__(self):
        self.signals = np.asarray(self.signals, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.signals.ndim != 3 or len(self.signals) != len(self.labels):
            raise ValueError("signals must be (n, c, N) with one label per signal")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise ValueError("label out of range for class_names")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        return Dataset(self.signals[idx], self.labels[idx], list(self.class_names))


def _parse_label(tok, row_no):
    tok = tok.strip()
    if tok in LETTER_LABELS:
        return LETTER_LABELS[tok]
    try:
        value = float(tok)
    except ValueError:
        raise FormatError(f"row {row_no}: label {tok!r} is neither an integer nor one of N/L/R/A/V") from None
    if value != int(value) or not 0 <= value < 5:
        raise FormatError(f"row {row_no}: label {tok!r} outside 0..4")
    return int(value)


def load_csv(path) -> Dataset:
    labels, rows = [], []
    with open(path, newline="") as fh:
        for row_no, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not t.strip() for t in row):
                continue
            if row_no == 1 and row[0].strip().lower() == "label":
                continue
            if len(row) < 2:
                raise FormatError(f"row {row_no}: expected a label and at least one value")
            labels.append(_parse_label(row[0], row_no))
            try:
                values = [float(t) for t in row[1:]]
            except ValueError:
                raise FormatError(f"row {row_no}: non-numeric sample value") from None
            if not np.all(np.isfinite(values)):
                raise FormatError(f"row {row_no}: non-finite sample value")
            if rows and len(values) != len(rows[0]):
                raise LengthMismatch(f"row {row_no}: {len(values)} samples, expected {len(rows[0])}")
            rows.append(values)
    if not rows:
        raise FormatError(f"{path}: no data rows")
    return Dataset(np.array(rows)[:, None, :], labels, list(BEAT_CLASSES))


def write_csv(ds: Dataset, path):
    if ds.signals.shape[1] != 1:
        raise ValueError("CSV output supports single-channel signals only")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for label, sig in zip(ds.labels, ds.signals[:, 0, :]):
            w.writerow([int(label)] + [repr(float(v)) for v in sig])


# ------------------------------------------------------------------ synthetic waves

def _bump(t, center, width):
    return np.exp(-0.5 * ((t - center) / width) ** 2)


def _wave(cls, t, rng):
    n = len(t)
    amp = rng.uniform(0.8, 1.2)
    if cls == 0:
        return amp * _bump(t, rng.uniform(0.45, 0.55) * n, rng.uniform(7, 10))
    if cls == 1:
        c, d, w = rng.uniform(0.45, 0.55) * n, rng.uniform(18, 24), rng.uniform(5, 7)
        return amp * (_bump(t, c - d, w) + _bump(t, c + d, w))
    if cls == 2:
        width = rng.uniform(40, 52)
        start = rng.uniform(0.45, 0.55) * n - width / 2
        return amp * ((t >= start) & (t < start + width)).astype(float)
    if cls == 3:
        period = rng.uniform(28, 36)
        phase = rng.uniform(0, 0.1 * period)
        return amp * (((t + phase) % period) / period - 0.5) * 2.0
    f0, f1 = rng.uniform(0.01, 0.02), rng.uniform(0.08, 0.1)
    k = (f1 - f0) / n
    return amp * np.sin(2 * np.pi * (f0 * t + 0.5 * k * t ** 2) + rng.uniform(-0.3, 0.3))


def synth(n: int, seed: int, noise=0.05, length=SYNTH_LENGTH) -> Dataset:
    """Balanced 5-class single-channel waveforms: bump, double bump, square, sawtooth, chirp.

    Sample ``i`` has class ``i % 5``; amplitude and position are jittered and
    Gaussian noise with standard deviation ``noise`` is added.
    """
    if n < 5:
        raise ValueError("n must be at least 5")
    rng = np.random.default_rng(seed)
    t = np.arange(length, dtype=np.float64)
    labels = np.arange(n) % 5
    sigs = np.stack([_wave(c, t, rng) + noise * rng.normal(size=length) for c in labels])
    return Dataset(sigs[:, None, :], labels, list(SYNTH_CLASSES))


# ------------------------------------------------------------------ preprocessing

def fit_normalization(ds: Dataset) -> dict:
    mean = float(ds.signals.mean())
    std = float(np.sqrt(max(float(ds.signals.var()), VAR_FLOOR)))
    return {"mean": mean, "std": std}


def normalize(ds: Dataset, stats=None) -> Dataset:
    """Affine map to zero mean / unit variance; pass ``stats`` from the train split for test data."""
    stats = fit_normalization(ds) if stats is None else stats
    return Dataset((ds.signals - stats["mean"]) / stats["std"], ds.labels, list(ds.class_names))


def split(ds: Dataset, fraction: float, seed: int):
    """Stratified seeded split; returns ``(first, second)`` with ``fraction`` of each class first."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    first, second = [], []
    for c in np.unique(ds.labels):
        idx = np.flatnonzero(ds.labels == c)
        rng.shuffle(idx)
        cut = int(round(fraction * len(idx)))
        first.append(idx[:cut])
        second.append(idx[cut:])
    a = np.sort(np.concatenate(first))
    b = np.sort(np.concatenate(second))
    return ds.subset(a), ds.subset(b)


def read_dataset(path) -> Dataset:
    return load_csv(Path(path))
