"""Sliding windows and the block-Hankel training matrix.

Windows are flattened channel-major: rows ``k*w .. k*w + w - 1`` of a column
hold channel ``k`` oldest to newest. At stride 1, neighboring columns are
the same samples shifted by one row inside every channel block.

Binary layout of a saved ``TrainingMatrix`` (all little-endian)::

    offset  size  content
    0       8     magic b"HKWTM\\x00\\x01\\x00"
    8       4     uint32 header length H
    12      H     UTF-8 JSON header {rows, cols, w, c, stride, channels}
    12+H    8*rows*cols   float64 X, column after column
    ...     8*cols        float64 column end times
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import DegenerateColumnError, FormatError, InsufficientDataError, ParameterError

MAGIC = b"HKWTM\x00\x01\x00"


@dataclass(frozen=True, eq=False)
class FeatureWindow:
    data: NDArray
    t_end: float


@dataclass(frozen=True, eq=False)
class TrainingMatrix:
    X: NDArray
    column_times: NDArray
    w: int
    channels: tuple[str, ...]
    stride: int = 1

    @property
    def c(self) -> int:
        return len(self.channels)

    @property
    def shape(self) -> tuple[int, int]:
        return self.X.shape

    def column(self, j: int) -> FeatureWindow:
        return FeatureWindow(self.X[:, j], float(self.column_times[j]))

    def subset(self, columns) -> "TrainingMatrix":
        columns = np.asarray(columns)
        return TrainingMatrix(self.X[:, columns], self.column_times[columns], self.w,
                              self.channels, self.stride)


def flatten_window(window: NDArray) -> NDArray:
    """``(w, c)`` samples -> length ``w*c`` vector, channel-major."""
    return np.asarray(window, dtype=float).T.reshape(-1)


def slide_windows(features: NDArray, channels: Sequence[str], w: int = 20, stride: int = 1,
                  t: NDArray | None = None, select: Sequence[str] | None = None) -> TrainingMatrix:
    """Stack windows ``[j*stride, j*stride + w)`` of an ``(N, c)`` feature array.

    ``select`` picks a subset of ``channels`` by name (default all).
    """
    features = np.asarray(features, dtype=float)
    if features.ndim == 1:
        features = features[:, None]
    channels = tuple(channels)
    if features.shape[1] != len(channels):
        raise ParameterError(f"{features.shape[1]} feature columns, {len(channels)} names")
    if select is not None:
        idx = [channels.index(name) for name in select]
        features, channels = features[:, idx], tuple(select)
    if w < 2:
        raise ParameterError(f"window width must be at least 2, got {w}")
    if stride < 1:
        raise ParameterError(f"stride must be at least 1, got {stride}")
    n = len(features)
    if n < w:
        raise InsufficientDataError(f"trace of {n} samples is shorter than the window ({w})")
    if t is None:
        t = np.arange(n, dtype=float)
    starts = np.arange(0, n - w + 1, stride)
    # (cols, w, c) view -> (c, w, cols) -> rows channel-major
    view = np.lib.stride_tricks.sliding_window_view(features, w, axis=0)[starts]  # (cols, c, w)
    X = np.ascontiguousarray(view.reshape(len(starts), -1).T)
    return TrainingMatrix(X, np.asarray(t, dtype=float)[starts + w - 1], w, channels, stride)


def recover_trace(tm: TrainingMatrix) -> NDArray:
    """Invert ``slide_windows`` at stride 1: ``(N, c)`` from the first row of
    each channel block plus the last column."""
    if tm.stride != 1:
        raise ParameterError("trace recovery needs stride 1")
    w, c = tm.w, tm.c
    blocks = tm.X.reshape(c, w, -1)
    head = blocks[:, 0, :].T               # sample j of every column j
    tail = blocks[:, 1:, -1].T             # remaining samples of the last window
    return np.vstack([head, tail])


def normalize_columns(X) -> tuple[NDArray, NDArray]:
    """Scale every column to unit Euclidean norm; returns ``(X_unit, norms)``."""
    if isinstance(X, TrainingMatrix):
        X = X.X
    X = np.asarray(X, dtype=float)
    norms = np.linalg.norm(X, axis=0)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise DegenerateColumnError(int(zero[0]))
    return X / norms, norms


@dataclass(frozen=True)
class Standardizer:
    """Per-channel affine scaling fitted on training features."""

    mean: tuple[float, ...]
    std: tuple[float, ...]

    @classmethod
    def fit(cls, features: NDArray) -> "Standardizer":
        features = np.atleast_2d(np.asarray(features, dtype=float))
        std = features.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        return cls(tuple(features.mean(axis=0).tolist()), tuple(std.tolist()))

    def __call__(self, features: NDArray) -> NDArray:
        return (np.asarray(features, dtype=float) - np.asarray(self.mean)) / np.asarray(self.std)


def embed(features: NDArray, channels: Sequence[str], standardizer: Standardizer,
          w: int, stride: int = 1, t: NDArray | None = None) -> TrainingMatrix:
    """Standardize, window, and unit-normalize a feature stream."""
    tm = slide_windows(standardizer(features), channels, w, stride, t)
    Xn, _ = normalize_columns(tm.X)
    return TrainingMatrix(Xn, tm.column_times, tm.w, tm.channels, tm.stride)


def save_training_matrix(tm: TrainingMatrix, path) -> None:
    header = json.dumps({
        "rows": tm.X.shape[0], "cols": tm.X.shape[1], "w": tm.w, "c": tm.c,
        "stride": tm.stride, "channels": list(tm.channels),
    }).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(np.asarray(tm.X, dtype="<f8").tobytes(order="F"))
        fh.write(np.asarray(tm.column_times, dtype="<f8").tobytes())


def load_training_matrix(path) -> TrainingMatrix:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise FormatError(f"{path}: not a training-matrix file")
    (hlen,) = struct.unpack("<I", raw[8:12])
    head = json.loads(raw[12:12 + hlen])
    rows, cols = head["rows"], head["cols"]
    off = 12 + hlen
    X = np.frombuffer(raw, "<f8", rows * cols, off).reshape((rows, cols), order="F")
    times = np.frombuffer(raw, "<f8", cols, off + 8 * rows * cols)
    if rows != head["w"] * head["c"]:
        raise FormatError(f"{path}: header rows {rows} != w*c")
    return TrainingMatrix(X.astype(float), times.astype(float), head["w"],
                          tuple(head["channels"]), head["stride"])
