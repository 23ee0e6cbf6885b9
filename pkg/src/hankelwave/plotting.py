"""PNG figures for reports, drawn on an off-screen Agg canvas."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure
from numpy.typing import NDArray


def _new_figure(rows: int = 1, height: float = 3.0, width: float = 9.0, sharex: bool = True):
    fig = Figure(figsize=(width, height * rows), layout="constrained")
    FigureCanvasAgg(fig)
    axes = fig.subplots(rows, 1, sharex=sharex, squeeze=False)[:, 0]
    return fig, axes


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=110)
    return path


def plot_orientation(t: NDArray, fused: NDArray, accel_angle: NDArray | None = None,
                     gyro_angle: NDArray | None = None, path="orientation.png",
                     name: str = "pitch") -> Path:
    """Fused angle against the raw accelerometer and gyro-integration estimates (degrees)."""
    fig, (ax,) = _new_figure()
    if accel_angle is not None:
        ax.plot(t, np.degrees(accel_angle), lw=0.6, color="0.6", label="accelerometer")
    if gyro_angle is not None:
        ax.plot(t, np.degrees(gyro_angle), lw=0.8, ls="--", color="tab:orange",
                label="gyro integration")
    ax.plot(t, np.degrees(fused), lw=1.2, color="tab:blue", label="fused")
    ax.set_xlabel("time [s]")
    ax.set_ylabel(f"{name} [deg]")
    ax.legend(loc="upper right", fontsize=8)
    return _save(fig, path)


def plot_labels(t: NDArray, features: NDArray, feature_names: Sequence[str], labels: NDArray,
                class_names: Sequence[str], truth: NDArray | None = None,
                path="labels.png") -> Path:
    """Feature channels over time with predicted (and true) label strips underneath."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    if features.shape[0] != len(t):
        features = features.T
    n_feat = features.shape[1]
    fig, axes = _new_figure(rows=n_feat + 1, height=1.8)
    for k in range(n_feat):
        axes[k].plot(t, features[:, k], lw=0.8)
        axes[k].set_ylabel(feature_names[k] if k < len(feature_names) else f"ch{k}")

    ax = axes[-1]
    ax.step(t, labels, where="post", lw=1.0, label="predicted")
    if truth is not None:
        ax.step(t, truth, where="post", lw=1.0, ls="--", color="k", alpha=0.6, label="truth")
        ax.legend(loc="upper right", fontsize=8)
    ax.set_yticks(range(len(class_names)))
    ax.set_yticklabels(class_names, fontsize=7 if len(class_names) > 5 else 9)
    ax.set_ylim(-1.5, len(class_names) - 0.5)
    ax.set_xlabel("time [s]")
    return _save(fig, path)


def plot_confusion(confusion: NDArray, class_names: Sequence[str], path="confusion.png",
                   title: str = "") -> Path:
    cm = np.asarray(confusion)
    size = 2.5 + 0.45 * len(class_names)
    fig, (ax,) = _new_figure(height=size, width=size + 1.0, sharex=False)
    with np.errstate(invalid="ignore", divide="ignore"):
        share = cm / cm.sum(axis=1, keepdims=True)
    im = ax.imshow(np.nan_to_num(share), cmap="Blues", vmin=0, vmax=1)
    for i in range(cm.shape[0]):
        for j in range(cm.shape[1]):
            if cm[i, j]:
                ax.text(j, i, str(cm[i, j]), ha="center", va="center", fontsize=7,
                        color="white" if share[i, j] > 0.5 else "black")
    ticks = range(len(class_names))
    ax.set_xticks(ticks)
    ax.set_xticklabels(class_names, rotation=60, ha="right", fontsize=8)
    ax.set_yticks(ticks)
    ax.set_yticklabels(class_names, fontsize=8)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, shrink=0.8, label="row share")
    return _save(fig, path)


def plot_dictionary(A: NDArray, blocks: Sequence[tuple[int, int, int]],
                    class_names: Sequence[str], path="dictionary.png") -> Path:
    """Dictionary atoms as an image, class blocks marked along the columns."""
    fig, (ax,) = _new_figure(height=4.0, sharex=False)
    lim = float(np.abs(A).max()) or 1.0
    ax.imshow(A, aspect="auto", cmap="RdBu_r", vmin=-lim, vmax=lim, interpolation="nearest")
    for cid, start, stop in blocks:
        ax.axvline(start - 0.5, color="k", lw=0.8)
        ax.text((start + stop - 1) / 2, -1.0, class_names[cid], ha="center", va="bottom",
                fontsize=7, rotation=45)
    ax.set_xlabel("atom")
    ax.set_ylabel("window entry (channel-major)")
    return _save(fig, path)


def plot_objective(history: Sequence[float], path="objective.png", title: str = "") -> Path:
    fig, (ax,) = _new_figure(sharex=False)
    ax.semilogy(np.arange(1, len(history) + 1), history)
    ax.set_xlabel("iteration")
    ax.set_ylabel("objective")
    if title:
        ax.set_title(title)
    return _save(fig, path)
