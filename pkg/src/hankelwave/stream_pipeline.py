"""Real-time loop: per-sample fusion, window assembly, CRC labeling.

Also hosts the training orchestration (traces in, dictionary out), frame
evaluation against ground truth, and the tidy CSV used for plots.
"""

from __future__ import annotations

import csv
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .classifiers import ClassificationResult, ProjectionOperator, crc_classify, crc_precompute
from .config import PipelineConfig
from .errors import ConfigError, ShapeError
from .ingest import LabeledTrace, SignalTrace, load_trace, synthesize_braking_trace, synthesize_posture_trace
from .signal_fusion import (ButterworthLowpass, FilterGains, OrientationFilter,
                            rotate_to_body_array)
from .subspace_trainer import (ClusterPass, LabeledDictionary, TrainingRun, distill_dictionary)

log = logging.getLogger(__name__)

WARMUP = -1


class FeatureExtractor:
    """Turns raw samples into feature rows, carrying filter state across calls."""

    def __init__(self, config: PipelineConfig, channel_names: Sequence[str] | None = None):
        self.config = config
        self.channels = config.channels
        if config.feature_mode == "imu":
            self.orientation = OrientationFilter(FilterGains(config.Kp, config.Ki, config.fs))
            self.lowpass = ButterworthLowpass(config.butterworth_cutoff, config.fs, channels=3)
        self.needs_accel = any(c.startswith("accel_") for c in self.channels)

    def process(self, trace: SignalTrace, full: bool = False) -> NDArray:
        """Feature rows for ``trace``; with ``full`` returns a dict of all IMU features."""
        if self.config.feature_mode == "direct":
            try:
                return np.column_stack([trace.channel(c) for c in self.channels])
            except ValueError:
                raise ConfigError(f"trace lacks feature channels {self.channels}; "
                                  f"has {trace.channel_names}") from None
        if not trace.is_imu:
            raise ConfigError("IMU feature mode needs an ax..gz trace")
        gyro, accel = trace.gyro, trace.accel
        fused = np.empty((len(trace), 2))
        for i in range(len(trace)):
            fused[i] = self.orientation.update(gyro[i], accel[i])
        feats = {"roll": fused[:, 0], "pitch": fused[:, 1], "roll_rate": gyro[:, 0],
                 "pitch_rate": gyro[:, 1], "yaw_rate": gyro[:, 2]}
        if self.needs_accel or full:
            body = rotate_to_body_array(self.lowpass.apply(accel), fused[:, 0], fused[:, 1])
            feats.update(accel_x=body[:, 0], accel_y=body[:, 1], accel_z=body[:, 2])
        if full:
            return feats
        return np.column_stack([feats[c] for c in self.channels])


def extract_features(trace: SignalTrace, config: PipelineConfig) -> NDArray:
    return FeatureExtractor(config).process(trace)


def check_metadata(dictionary: LabeledDictionary, config: PipelineConfig) -> None:
    problems = []
    if dictionary.w != config.w:
        problems.append(f"window {dictionary.w} != {config.w}")
    if tuple(dictionary.channels) != tuple(config.channels):
        problems.append(f"channels {dictionary.channels} != {config.channels}")
    if dictionary.feature_mode != config.feature_mode:
        problems.append(f"feature mode {dictionary.feature_mode} != {config.feature_mode}")
    if abs(dictionary.fs - config.fs) > 1e-9:
        problems.append(f"fs {dictionary.fs} != {config.fs}")
    if problems:
        raise ConfigError("dictionary does not match configuration: " + "; ".join(problems))


class StreamClassifier:
    """One sequential stream: feed chunks, get one label per sample.

    The first ``w - 1`` samples of the stream get the warm-up label -1.
    """

    def __init__(self, dictionary: LabeledDictionary, projection: ProjectionOperator,
                 config: PipelineConfig, keep_results: bool = False):
        check_metadata(dictionary, config)
        if projection.fingerprint != dictionary.fingerprint():
            raise ConfigError("projection operator was built for another dictionary")
        self.dictionary, self.projection, self.config = dictionary, projection, config
        self.extractor = FeatureExtractor(config)
        self.buffer: deque = deque(maxlen=config.w)
        self.mean = np.asarray(dictionary.standardizer.mean)
        self.std = np.asarray(dictionary.standardizer.std)
        self.keep_results = keep_results
        self.results: list[ClassificationResult] = []
        self.t_end: list[float] = []
        self.features: list[NDArray] = []
        self.fs = None

    def window_vector(self) -> NDArray:
        window = (np.asarray(self.buffer) - self.mean) / self.std
        y = window.T.reshape(-1)
        norm = np.linalg.norm(y)
        return y / norm if norm > 0 else y

    def process(self, trace: SignalTrace) -> NDArray:
        if abs(trace.fs - self.config.fs) > 1e-9:
            raise ConfigError(f"trace sampled at {trace.fs} Hz, pipeline configured for {self.config.fs} Hz")
        feats = self.extractor.process(trace)
        labels = np.full(len(trace), WARMUP, dtype=int)
        for i, row in enumerate(feats):
            self.buffer.append(row)
            if len(self.buffer) < self.config.w:
                continue
            res = crc_classify(self.projection, self.dictionary, self.window_vector())
            labels[i] = res.label
            if self.keep_results:
                self.results.append(res)
                self.t_end.append(float(trace.t[i]))
        if self.keep_results:
            self.features.append(feats)
        return labels


def run_stream(trace: SignalTrace, dictionary: LabeledDictionary, P: ProjectionOperator,
               config: PipelineConfig) -> NDArray:
    """Label every sample of ``trace`` as if it arrived in real time."""
    return StreamClassifier(dictionary, P, config).process(trace)


# --------------------------------------------------------------------------
# training


def synthesize_run(run: dict, fs: float):
    """Labeled trace described by a ``training`` entry of the config."""
    if "path" in run:
        return load_trace(run["path"], fs, labeled=run.get("labeled", False))
    if run.get("kind", "braking") == "posture":
        return synthesize_posture_trace(run["script"], run.get("seed", 0), fs)
    return synthesize_braking_trace(run["scenario"], run.get("seed", 0), fs)


def train_dictionary(traces: Sequence[SignalTrace], schedules: Sequence[ClusterPass],
                     config: PipelineConfig) -> LabeledDictionary:
    """Distill a dictionary from unlabeled traces and their clustering schedules."""
    if len(traces) != len(schedules):
        raise ConfigError(f"{len(traces)} traces for {len(schedules)} schedules")
    runs = []
    for i, (trace, sched) in enumerate(zip(traces, schedules)):
        if isinstance(trace, LabeledTrace):
            trace = trace.trace  # labels are never used for training
        runs.append(TrainingRun(extract_features(trace, config), sched, trace.t,
                                name=config.training[i]["name"] if i < len(config.training) else ""))
    return distill_dictionary(runs, config.class_names, config.channels, config.w, config.osc,
                              config.per_class, config.train_stride, config.seed, config.fs,
                              config.feature_mode, n_init=config.kmeans_restarts)


def train_from_config(config: PipelineConfig) -> tuple[LabeledDictionary, ProjectionOperator]:
    traces = [synthesize_run(run, config.fs) for run in config.training]
    d = train_dictionary(traces, config.schedules(), config)
    return d, crc_precompute(d, config.crc_lambda)


# --------------------------------------------------------------------------
# evaluation


@dataclass
class EvaluationReport:
    confusion: NDArray
    lenient_confusion: NDArray
    accuracy: float
    lenient_accuracy: float
    precision: NDArray
    recall: NDArray
    total: int
    misclassified_runs: list = field(default_factory=list)
    class_names: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "total": self.total, "accuracy": self.accuracy,
            "lenient_accuracy": self.lenient_accuracy,
            "confusion": self.confusion.tolist(),
            "lenient_confusion": self.lenient_confusion.tolist(),
            "precision": [None if np.isnan(v) else float(v) for v in self.precision],
            "recall": [None if np.isnan(v) else float(v) for v in self.recall],
            "misclassified_runs": self.misclassified_runs,
            "class_names": list(self.class_names),
        }

    def summary(self) -> str:
        lines = [f"decisions {self.total}  accuracy {self.accuracy:.5f}  "
                 f"lenient {self.lenient_accuracy:.5f}"]
        names = self.class_names or tuple(str(i) for i in range(len(self.confusion)))
        width = max(len(n) for n in names)
        lines.append(" " * (width + 2) + " ".join(f"{n[:8]:>8}" for n in names))
        for name, row in zip(names, self.confusion):
            lines.append(f"{name:>{width}}  " + " ".join(f"{v:8d}" for v in row))
        return "\n".join(lines)


def _precision_recall(cm: NDArray) -> tuple[NDArray, NDArray]:
    tp = np.diag(cm).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = tp / cm.sum(axis=0)
        recall = tp / cm.sum(axis=1)
    return precision, recall


def evaluate(predicted, truth, warmup_excluded: bool = True, boundary: int = 10,
             n_classes: int | None = None, class_names: Sequence[str] = ()) -> EvaluationReport:
    """Frame-level confusion of predicted vs true labels.

    Lenient scoring accepts, for samples within ``boundary`` samples of a
    true-label change, any label the truth takes inside that neighborhood.
    """
    predicted = np.asarray(predicted, dtype=int)
    truth = np.asarray(truth, dtype=int)
    if predicted.shape != truth.shape:
        raise ShapeError(f"{predicted.shape[0]} predictions for {truth.shape[0]} truth labels")
    if n_classes is None:
        n_classes = len(class_names) or int(max(truth.max(), predicted.max()) + 1)
    mask = predicted != WARMUP if warmup_excluded else np.ones(len(truth), bool)

    lenient_pred = predicted.copy()
    change = np.flatnonzero(np.diff(truth) != 0)
    n = len(truth)
    for c in change:
        lo, hi = max(0, c + 1 - boundary), min(n, c + 1 + boundary)
        seg = slice(lo, hi)
        allowed = set(truth[seg].tolist())
        for i in range(lo, hi):
            if predicted[i] in allowed:
                lenient_pred[i] = truth[i]

    def confusion(pred):
        cm = np.zeros((n_classes, n_classes), dtype=int)
        p, t = pred[mask], truth[mask]
        if np.any(p < 0):
            raise ShapeError("warm-up labels present; pass warmup_excluded=True")
        np.add.at(cm, (t, p), 1)
        return cm

    cm, lcm = confusion(predicted), confusion(lenient_pred)
    total = int(mask.sum())
    precision, recall = _precision_recall(cm)

    runs = []
    wrong = mask & (lenient_pred != truth)
    idx = np.flatnonzero(wrong)
    if idx.size:
        starts = idx[np.concatenate([[True], np.diff(idx) > 1])]
        ends = idx[np.concatenate([np.diff(idx) > 1, [True]])]
        for s, e in zip(starts, ends):
            runs.append({"start": int(s), "end": int(e), "true": int(truth[s]),
                         "predicted": int(predicted[s])})
    return EvaluationReport(cm, lcm, float(np.trace(cm) / max(total, 1)),
                            float(np.trace(lcm) / max(total, 1)), precision, recall, total,
                            runs, tuple(class_names))


def combine_reports(reports: Sequence[EvaluationReport]) -> EvaluationReport:
    """Pool reports of independent runs by summing their confusion matrices.

    Misclassified runs gain a ``run`` index pointing into ``reports``.
    """
    if not reports:
        raise ShapeError("nothing to combine")
    cm = sum(r.confusion for r in reports)
    lcm = sum(r.lenient_confusion for r in reports)
    total = int(sum(r.total for r in reports))
    precision, recall = _precision_recall(cm)
    runs = [{"run": i, **m} for i, r in enumerate(reports) for m in r.misclassified_runs]
    return EvaluationReport(cm, lcm, float(np.trace(cm) / max(total, 1)),
                            float(np.trace(lcm) / max(total, 1)), precision, recall, total,
                            runs, reports[0].class_names)


@dataclass
class RunOutcome:
    """Streaming result of one labeled evaluation run."""

    name: str
    trace: LabeledTrace
    labels: NDArray
    report: EvaluationReport


def evaluate_runs(dictionary: LabeledDictionary, P: ProjectionOperator,
                  config: PipelineConfig, runs: Sequence[dict] | None = None
                  ) -> tuple[EvaluationReport, list[RunOutcome]]:
    """Stream every evaluation run and score the pooled decisions."""
    runs = config.evaluation if runs is None else runs
    if not runs:
        raise ConfigError("no evaluation runs configured")
    n_classes = len(config.class_names)
    b = config.boundary_samples
    outcomes = []
    for i, run in enumerate(runs):
        lt = synthesize_run({"labeled": True, **run}, config.fs)
        if not isinstance(lt, LabeledTrace):
            raise ConfigError(f"evaluation run {i} has no ground-truth labels")
        labels = run_stream(lt.trace, dictionary, P, config)
        rep = evaluate(labels, lt.labels, boundary=b, n_classes=n_classes,
                       class_names=config.class_names)
        outcomes.append(RunOutcome(run.get("name", f"run{i}"), lt, labels, rep))
    return combine_reports([o.report for o in outcomes]), outcomes


# --------------------------------------------------------------------------
# plot data


def emit_plot_data(trace: SignalTrace, fused: NDArray | None, labels, path,
                   truth=None) -> Path:
    """Tidy CSV: ``t``, raw channels, fused roll/pitch, label (and truth)."""
    labels = np.asarray(labels)
    n = len(trace)
    if len(labels) != n or (fused is not None and len(fused) != n):
        raise ShapeError("plot data columns have inconsistent lengths")
    header = ["t", *trace.channel_names]
    cols = [trace.t[:, None], trace.data]
    if fused is not None:
        header += ["roll_f", "pitch_f"]
        cols.append(np.asarray(fused, dtype=float).reshape(n, 2))
    table = np.hstack(cols)
    header.append("label")
    if truth is not None:
        header.append("truth")
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(n):
            row = [repr(float(v)) for v in table[i]] + [int(labels[i])]
            if truth is not None:
                row.append(int(truth[i]))
            w.writerow(row)
    return path


def read_plot_data(path) -> dict[str, NDArray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.asarray(rows[1:], dtype=float)
    return {name: body[:, i] for i, name in enumerate(header)}
