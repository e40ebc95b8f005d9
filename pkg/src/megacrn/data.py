"""Dataset ingestion, chronological splitting, z-score normalization and windowing.

Supported dataset files (chosen by extension):

* ``.csv`` / ``.tsv`` / ``.txt``: a header row ``timestamp,<node_1>,...,<node_N>``
  followed by one row per timestep. The first column holds timestamps (any
  string, kept verbatim); leave it empty if there are none. Missing
  observations are written as ``0``.
* ``.npz``: arrays ``values`` (T, N) float, ``interval_minutes`` scalar int,
  optionally ``timestamps`` (T,) str and ``node_ids`` (N,) str.
"""
import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, EmptyDatasetError

STD_FLOOR = 1e-8
TEXT_SUFFIXES = {".csv": ",", ".tsv": "\t", ".txt": ","}


@dataclass
class TimeMatrix:
    values: np.ndarray
    interval_minutes: int = 5
    timestamps: Optional[Sequence[str]] = None
    node_ids: Optional[Sequence[str]] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"values must be T x N, got shape {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise ValueError("values contain NaN/Inf; encode missing observations as 0")
        if self.interval_minutes < 1:
            raise ValueError("interval_minutes must be positive")
        if self.timestamps is not None and len(self.timestamps) != self.values.shape[0]:
            raise ValueError("timestamps length does not match number of rows")
        if self.node_ids is None:
            self.node_ids = [str(i) for i in range(self.values.shape[1])]

    @property
    def n_steps(self):
        return self.values.shape[0]

    @property
    def n_nodes(self):
        return self.values.shape[1]

    def slice(self, start, stop):
        ts = None if self.timestamps is None else list(self.timestamps[start:stop])
        return TimeMatrix(self.values[start:stop], self.interval_minutes, ts, self.node_ids)


def default_window(interval_minutes):
    """Lookback/horizon giving a one-hour lead time: 12 at 5 min, 6 at 10 min."""
    return max(1, 60 // interval_minutes)


# ---------------------------------------------------------------- splitting

def chronological_split(tm, ratios=(0.7, 0.1, 0.2), min_length=0):
    """Contiguous train / val / test slices; train and val take ``floor(T * ratio)``."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ConfigError(f"split ratios must be three positive numbers summing to 1, got {ratios}")
    T = tm.n_steps
    # the epsilon keeps e.g. 100 * 0.7 from flooring to 69
    n_train = int(math.floor(T * ratios[0] + 1e-9))
    n_val = int(math.floor(T * ratios[1] + 1e-9))
    bounds = (0, n_train, n_train + n_val, T)
    parts = [tm.slice(bounds[i], bounds[i + 1]) for i in range(3)]
    for name, part in zip(("train", "val", "test"), parts):
        if part.n_steps < min_length:
            raise ConfigError(f"{name} split has {part.n_steps} steps, need at least {min_length}")
    return tuple(parts)


def split_by_timestamps(tm, val_start, test_start, min_length=0):
    """Split at the first rows whose timestamps are >= ``val_start`` / ``test_start``.

    Timestamps are compared as strings, so ISO-8601 values order correctly.
    """
    if tm.timestamps is None:
        raise ConfigError("dataset has no timestamps; use ratio splitting")
    ts = list(tm.timestamps)
    i_val = next((i for i, t in enumerate(ts) if t >= val_start), len(ts))
    i_test = next((i for i, t in enumerate(ts) if t >= test_start), len(ts))
    if not 0 < i_val <= i_test < len(ts):
        raise ConfigError(f"boundaries {val_start!r}/{test_start!r} do not produce three ordered splits")
    parts = (tm.slice(0, i_val), tm.slice(i_val, i_test), tm.slice(i_test, len(ts)))
    for name, part in zip(("train", "val", "test"), parts):
        if part.n_steps < min_length:
            raise ConfigError(f"{name} split has {part.n_steps} steps, need at least {min_length}")
    return parts


# ---------------------------------------------------------------- normalization

@dataclass
class Normalizer:
    mean: float
    std: float

    def transform(self, x):
        return (x - self.mean) / self.std

    def inverse_transform(self, x):
        return x * self.std + self.mean

    def to_dict(self):
        return {"mean": float(self.mean), "std": float(self.std)}


def fit_normalizer(train, include_zeros=True):
    values = train.values if isinstance(train, TimeMatrix) else np.asarray(train, dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot fit a normalizer on an empty split")
    if not include_zeros:
        values = values[values != 0]
        if values.size == 0:
            raise ValueError("training split has no non-zero entries")
    return Normalizer(mean=float(values.mean()), std=max(float(values.std()), STD_FLOOR))


# ---------------------------------------------------------------- windowing

def window_count(n_steps, lookback, horizon):
    return n_steps - lookback - horizon + 1


def make_windows(values, lookback, horizon):
    """Stride-1 windows over a (T, N) array.

    Returns ``(inputs, targets)`` shaped (S, lookback, N) and (S, horizon, N),
    S = T - lookback - horizon + 1. Both are read-only views into ``values``.
    """
    values = values.values if isinstance(values, TimeMatrix) else np.asarray(values)
    T = values.shape[0]
    if lookback < 1 or horizon < 1:
        raise ValueError("lookback and horizon must be positive")
    if T < lookback + horizon:
        raise EmptyDatasetError(f"{T} steps cannot hold a window of {lookback}+{horizon}")
    win = np.lib.stride_tricks.sliding_window_view(values, lookback + horizon, axis=0)
    win = np.moveaxis(win, -1, 1)  # (S, lookback+horizon, N)
    return win[:, :lookback], win[:, lookback:]


@dataclass
class ForecastBatch:
    """inputs normalized (B, alpha, N, C); targets in original units (B, beta, N, C)."""

    inputs: np.ndarray
    targets: np.ndarray


@dataclass
class WindowedSplit:
    """All windows of one split, inputs already normalized."""

    inputs: np.ndarray
    targets: np.ndarray

    def __len__(self):
        return self.inputs.shape[0]

    def batches(self, batch_size, shuffle=False, rng=None):
        n = len(self)
        order = np.arange(n)
        if shuffle:
            rng = rng if rng is not None else np.random.default_rng()
            order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            yield ForecastBatch(self.inputs[idx, ..., None], self.targets[idx, ..., None])


def build_split(tm, normalizer, lookback, horizon):
    normed = normalizer.transform(tm.values)
    x, _ = make_windows(normed, lookback, horizon)
    _, y = make_windows(tm.values, lookback, horizon)
    return WindowedSplit(np.ascontiguousarray(x), np.ascontiguousarray(y))


@dataclass
class PreparedData:
    normalizer: Normalizer
    train: WindowedSplit
    val: WindowedSplit
    test: WindowedSplit
    raw: dict = field(default_factory=dict)

    def split(self, name):
        if name not in ("train", "val", "test"):
            raise ConfigError(f"unknown split {name!r}")
        return getattr(self, name)


def prepare(tm, lookback, horizon, ratios=(0.7, 0.1, 0.2), include_zeros=True, boundaries=None):
    """Split, fit the normalizer on train only, and window every split."""
    need = lookback + horizon
    if boundaries is not None:
        parts = split_by_timestamps(tm, *boundaries, min_length=need)
    else:
        parts = chronological_split(tm, ratios, min_length=need)
    norm = fit_normalizer(parts[0], include_zeros=include_zeros)
    splits = [build_split(p, norm, lookback, horizon) for p in parts]
    return PreparedData(norm, *splits, raw=dict(zip(("train", "val", "test"), parts)))


# ---------------------------------------------------------------- file I/O

def load_dataset(path, interval_minutes=None):
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".npz":
        with np.load(path, allow_pickle=False) as z:
            values = z["values"]
            interval = int(z["interval_minutes"]) if "interval_minutes" in z else 5
            ts = [str(t) for t in z["timestamps"]] if "timestamps" in z else None
            nodes = [str(n) for n in z["node_ids"]] if "node_ids" in z else None
    elif suffix in TEXT_SUFFIXES:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh, delimiter=TEXT_SUFFIXES[suffix]))
        if len(rows) < 2:
            raise ValueError(f"{path}: expected a header and at least one data row")
        nodes = rows[0][1:]
        ts = [r[0] for r in rows[1:]]
        try:
            values = np.array([[float(v) if v.strip() else 0.0 for v in r[1:]] for r in rows[1:]])
        except ValueError as exc:
            raise ValueError(f"{path}: non-numeric value ({exc})") from None
        if values.ndim != 2 or values.shape[1] != len(nodes):
            raise ValueError(f"{path}: ragged rows, header has {len(nodes)} node columns")
        if all(t == "" for t in ts):
            ts = None
        interval = 5
    else:
        raise ValueError(f"unsupported dataset extension {suffix!r}; use .csv, .tsv, .txt or .npz")
    if interval_minutes is not None:
        interval = interval_minutes
    return TimeMatrix(values, interval, ts, nodes)


def save_dataset(tm, path):
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".npz":
        arrays = {"values": tm.values, "interval_minutes": np.int64(tm.interval_minutes),
                  "node_ids": np.array(tm.node_ids, dtype=str)}
        if tm.timestamps is not None:
            arrays["timestamps"] = np.array(tm.timestamps, dtype=str)
        with path.open("wb") as fh:
            np.savez(fh, **arrays)
    elif suffix in TEXT_SUFFIXES:
        ts = tm.timestamps if tm.timestamps is not None else [""] * tm.n_steps
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, delimiter=TEXT_SUFFIXES[suffix])
            w.writerow(["timestamp", *tm.node_ids])
            for t, row in zip(ts, tm.values):
                w.writerow([t, *(repr(float(v)) for v in row)])
    else:
        raise ValueError(f"unsupported dataset extension {suffix!r}")
    return path


def load_adjacency(path, n_nodes=None):
    """Read and validate a pre-defined N x N adjacency matrix (delimited text or .npy)."""
    path = Path(path)
    if path.suffix.lower() == ".npy":
        adj = np.load(path)
    else:
        adj = np.loadtxt(path, delimiter=TEXT_SUFFIXES.get(path.suffix.lower(), ","), ndmin=2)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError(f"adjacency must be square, got {adj.shape}")
    if not np.isfinite(adj).all() or (adj < 0).any():
        raise ValueError("adjacency entries must be finite and non-negative")
    if n_nodes is not None and adj.shape[0] != n_nodes:
        raise ValueError(f"adjacency is {adj.shape[0]} x {adj.shape[0]}, dataset has {n_nodes} nodes")
    return adj


def fingerprint(path):
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
