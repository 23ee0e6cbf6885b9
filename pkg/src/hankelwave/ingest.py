"""Sensor traces: CSV loading, validation, and synthetic maneuver streams.

CSV layout (no resampling, SI units)::

    t,ax,ay,az,gx,gy,gz[,label]

A header line is optional. Posture traces use the same layout with their
own channel names in the header.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import FormatError, ScenarioError, TimingError
from .signal_fusion import GRAVITY

IMU_CHANNELS = ("ax", "ay", "az", "gx", "gy", "gz")

BRAKING_STATES = ("cruise", "normal", "sudden")
_STATE_ALIASES = {
    "cruise": 0, "cruising": 0,
    "normal": 1, "normal-brake": 1, "normal_brake": 1,
    "sudden": 2, "sudden-brake": 2, "sudden_brake": 2,
}

POSTURE_NAMES = ("straight", "left", "right", "stop", "backward")
GESTURE_NAMES = (
    "straight>left", "left>straight", "straight>right", "right>straight",
    "straight>stop", "stop>straight", "straight>backward", "backward>straight",
)
POSTURE_CLASSES = POSTURE_NAMES + GESTURE_NAMES
POSTURE_CHANNELS = ("px", "py", "pz", "roll", "pitch", "yaw")


@dataclass(frozen=True)
class ImuSample:
    t: float
    accel: tuple[float, float, float]
    gyro: tuple[float, float, float]


@dataclass(frozen=True, eq=False)
class SignalTrace:
    """Uniformly sampled multi-channel recording.

    ``data`` is ``(N, C)``; for IMU traces the channels are
    ``ax, ay, az, gx, gy, gz``.
    """

    t: NDArray
    data: NDArray
    fs: float
    channel_names: tuple[str, ...] = IMU_CHANNELS

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        data = np.asarray(self.data, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        if len(t) < 1:
            raise FormatError("trace is empty")
        if data.shape != (len(t), len(self.channel_names)):
            raise FormatError(
                f"data shape {data.shape} does not match {len(t)} samples x "
                f"{len(self.channel_names)} channels")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(data))):
            row = int(np.argmax(~np.isfinite(np.column_stack([t, data])).all(axis=1)))
            raise FormatError("non-finite value", row=row + 1)
        if not self.fs > 0:
            raise FormatError(f"sampling rate must be positive, got {self.fs}")
        check_uniform(t, self.fs)

    def __len__(self) -> int:
        return len(self.t)

    def channel(self, name: str) -> NDArray:
        return self.data[:, self.channel_names.index(name)]

    @property
    def is_imu(self) -> bool:
        return self.channel_names == IMU_CHANNELS

    @property
    def accel(self) -> NDArray:
        return self.data[:, 0:3]

    @property
    def gyro(self) -> NDArray:
        return self.data[:, 3:6]

    @property
    def samples(self) -> Iterator[ImuSample]:
        for t, row in zip(self.t, self.data):
            yield ImuSample(float(t), tuple(row[0:3]), tuple(row[3:6]))

    def slice(self, start: int, stop: int) -> "SignalTrace":
        return SignalTrace(self.t[start:stop], self.data[start:stop], self.fs, self.channel_names)


@dataclass(frozen=True, eq=False)
class LabeledTrace:
    trace: SignalTrace
    labels: NDArray
    class_names: tuple[str, ...] = BRAKING_STATES

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=int)
        object.__setattr__(self, "labels", labels)
        if len(labels) != len(self.trace):
            raise FormatError(f"{len(labels)} labels for {len(self.trace)} samples")
        if labels.min() < 0 or labels.max() >= len(self.class_names):
            raise FormatError("label id outside the class table")

    def __len__(self) -> int:
        return len(self.labels)


def check_uniform(t: NDArray, fs: float, tolerance: float = 0.01) -> None:
    if len(t) < 2:
        return
    dt = np.diff(t)
    if np.any(dt <= 0):
        i = int(np.argmax(dt <= 0))
        raise TimingError(f"time not strictly increasing at row {i + 2}", float(dt[i]))
    nominal = 1.0 / fs
    dev = np.abs(dt - nominal)
    worst = int(np.argmax(dev))
    if dev[worst] > tolerance * nominal:
        raise TimingError(
            f"non-uniform sampling at row {worst + 2}, expected {nominal:.6g} s spacing",
            float(dt[worst]))


def _read_rows(path: Path) -> tuple[list[str] | None, list[list[float]]]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    header = None
    if rows:
        try:
            float(rows[0][0])
        except ValueError:
            header = [c.strip() for c in rows[0]]
            rows = rows[1:]
    values = []
    first_row = 2 if header else 1
    width = len(header) if header else None
    for i, row in enumerate(rows):
        if width is None:
            width = len(row)
        if len(row) != width:
            raise FormatError(f"expected {width} columns, found {len(row)}", row=i + first_row)
        try:
            values.append([float(c) for c in row])
        except ValueError as exc:
            raise FormatError(str(exc), row=i + first_row) from None
    return header, values


def load_trace(path, fs: float, labeled: bool = False):
    """Read a CSV trace. Returns ``SignalTrace``, or ``LabeledTrace`` if ``labeled``."""
    path = Path(path)
    header, values = _read_rows(path)
    if not values:
        raise FormatError("no samples in file", row=1)
    arr = np.asarray(values, dtype=float)
    n_extra = 1 if labeled else 0
    if header is not None:
        names = tuple(header[1:len(header) - n_extra])
    else:
        if arr.shape[1] != 7 + n_extra:
            raise FormatError(f"expected {7 + n_extra} columns, found {arr.shape[1]}", row=1)
        names = IMU_CHANNELS
    if arr.shape[1] != 1 + len(names) + n_extra or not names:
        raise FormatError(f"unexpected column count {arr.shape[1]}", row=1)
    trace = SignalTrace(arr[:, 0], arr[:, 1:1 + len(names)], fs, names)
    if not labeled:
        return trace
    labels = arr[:, -1]
    if np.any(labels != np.round(labels)):
        raise FormatError("label column must hold integers")
    labels = labels.astype(int)
    classes = BRAKING_STATES if trace.is_imu else POSTURE_CLASSES
    if labels.max() >= len(classes):
        classes = tuple(str(i) for i in range(labels.max() + 1))
    return LabeledTrace(trace, labels, classes)


def save_trace(trace, path) -> None:
    """Write a ``SignalTrace`` or ``LabeledTrace`` as CSV with a header."""
    labels = None
    if isinstance(trace, LabeledTrace):
        trace, labels = trace.trace, trace.labels
    header = ["t", *trace.channel_names] + (["label"] if labels is not None else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(trace)):
            row = [repr(float(trace.t[i]))] + [repr(float(v)) for v in trace.data[i]]
            if labels is not None:
                row.append(str(int(labels[i])))
            w.writerow(row)


# --------------------------------------------------------------------------
# synthesis


@dataclass(frozen=True)
class NoiseModel:
    accel_sigma: float = 0.3
    gyro_sigma: float = 0.02
    gyro_bias_max: float = 0.01


@dataclass(frozen=True)
class BrakingProfile:
    """Shape parameters of the synthetic maneuvers (angles in degrees)."""

    cruise_pitch: float = 3.0
    normal_pitch: float = 7.0
    sudden_pitch: float = 18.0
    normal_decel: float = 0.3
    sudden_decel: float = 0.6
    normal_freq: float = 1.0      # handle-bar rocking while braking, Hz
    sudden_freq: float = 3.0
    lean: float = 0.75            # mean lean-back, in units of the rocking amplitude
    settle: float = 0.4           # quiet tail at the end of each brake segment, s
    min_active: float = 0.5       # shortest signature, as a fraction of the segment
    road_pitch: float = 0.1       # amplitude of handle-bar vibration, deg
    steer_roll: float = 1.5       # slow roll wander, deg
    ramp: float = 0.25            # raised-cosine crossfade between segments, s
    noise: NoiseModel = field(default_factory=NoiseModel)


def parse_scenario(scenario) -> list[tuple[int, float]]:
    """Accept ``[(state, seconds), ...]`` or the JSON form ``[{state, duration_s}]``."""
    if isinstance(scenario, (str, Path)) and Path(scenario).exists():
        scenario = json.loads(Path(scenario).read_text())
    out = []
    for item in scenario:
        if isinstance(item, dict):
            try:
                state, duration = item["state"], item["duration_s"]
            except KeyError as exc:
                raise ScenarioError(f"scenario entry missing {exc}") from None
        else:
            state, duration = item
        if isinstance(state, str):
            if state.lower() not in _STATE_ALIASES:
                raise ScenarioError(f"unknown state {state!r}")
            sid = _STATE_ALIASES[state.lower()]
        else:
            sid = int(state)
            if sid not in (0, 1, 2):
                raise ScenarioError(f"unknown state id {state!r}")
        duration = float(duration)
        if not duration > 0:
            raise ScenarioError(f"segment duration must be positive, got {duration}")
        out.append((sid, duration))
    if not out:
        raise ScenarioError("empty scenario")
    return out


def _raised_cosine_weights(t: NDArray, edges: NDArray, ramp: float) -> NDArray:
    """Partition-of-unity weights, one row per segment, crossfading at edges."""
    n_seg = len(edges) - 1
    W = np.zeros((n_seg, len(t)))
    for k in range(n_seg):
        rise = _smoothstep(t, edges[k], ramp) if k > 0 else np.ones_like(t)
        fall = 1.0 - _smoothstep(t, edges[k + 1], ramp) if k < n_seg - 1 else np.ones_like(t)
        W[k] = rise * fall
    return W


def _smoothstep(t, center, width):
    u = np.clip((t - center) / width + 0.5, 0.0, 1.0)
    return 0.5 - 0.5 * np.cos(np.pi * u)


_OVERSAMPLE = 10


def _brake_shape(state: int, tau: NDArray, active: float, freq: float,
                 lean: float) -> tuple[NDArray, NDArray]:
    """Unit pitch shape and longitudinal deceleration envelope of a brake.

    The rider leans back by ``lean`` (in units of the rocking amplitude)
    while the handle bar rocks at ``freq`` Hz; both fade in and out with
    the braking envelope. Sudden brakes rock faster and harder.
    """
    u = np.clip(tau / active, 0.0, 1.0)
    inside = (tau >= 0) & (tau <= active)
    env = np.sqrt(np.sin(np.pi * u))
    pitch = env * (lean + np.sin(2.0 * np.pi * freq * tau))
    decel = env if state == 1 else np.sqrt(env)
    return np.where(inside, pitch, 0.0), np.where(inside, decel, 0.0)


def gravity_in_device(roll: NDArray, pitch: NDArray) -> NDArray:
    """Specific force of gravity in device axes; inverse of the angle formulas."""
    cp = np.cos(pitch)
    return GRAVITY * np.column_stack([-np.sin(pitch), np.sin(roll) * cp, np.cos(roll) * cp])


def synthesize_braking_trace(scenario, seed: int = 0, fs: float = 20.0,
                             profile: BrakingProfile | None = None,
                             noise: bool = True, return_truth: bool = False):
    """Scripted ride with cruise / normal-brake / sudden-brake segments.

    Returns a ``LabeledTrace``; with ``return_truth`` also a dict holding the
    noise-free roll, pitch (rad) and motion-frame acceleration.
    """
    segments = parse_scenario(scenario)
    p = profile or BrakingProfile()
    rng = np.random.default_rng(seed)

    durations = np.array([d for _, d in segments])
    edges = np.concatenate([[0.0], np.cumsum(durations)])
    n = int(round(edges[-1] * fs))
    t = np.arange(n) / fs
    seg_of = np.clip(np.searchsorted(edges, t, side="right") - 1, 0, len(segments) - 1)
    labels = np.array([s for s, _ in segments], dtype=int)[seg_of]

    # motion is rendered on a finer grid so that differentiated rates stay
    # accurate for the fast rocking of sudden brakes
    tf = np.arange(n * _OVERSAMPLE) / (fs * _OVERSAMPLE)
    nf = len(tf)
    weights = _raised_cosine_weights(tf, edges, p.ramp)
    pitch_off = np.zeros(nf)
    decel = np.zeros(nf)
    for k, (state, dur) in enumerate(segments):
        if state == 0:
            continue
        active = max(dur - p.settle, p.min_active * dur)
        amp = p.normal_pitch if state == 1 else p.sudden_pitch
        acc = p.normal_decel if state == 1 else p.sudden_decel
        # per-maneuver variability of the rider
        amp *= rng.uniform(0.85, 1.15)
        acc *= rng.uniform(0.85, 1.15)
        freq = p.normal_freq if state == 1 else p.sudden_freq
        shape, env = _brake_shape(state, tf - edges[k], active, freq, p.lean)
        pitch_off += weights[k] * amp * shape
        decel += weights[k] * acc * env

    # handle-bar vibration and slow steering wander, present in every state
    road = np.zeros(nf)
    for _ in range(3):
        f = rng.uniform(1.5, 4.0)
        road += rng.uniform(0.5, 1.0) * np.sin(2 * np.pi * f * tf + rng.uniform(0, 2 * np.pi))
    road *= p.road_pitch / 2.0
    wander = np.zeros(nf)
    for _ in range(2):
        f = rng.uniform(0.05, 0.3)
        wander += np.sin(2 * np.pi * f * tf + rng.uniform(0, 2 * np.pi))
    wander *= p.steer_roll / 2.0

    pitch_f = np.deg2rad(p.cruise_pitch + pitch_off + road)
    roll_f = np.deg2rad(wander)
    dt = 1.0 / (fs * _OVERSAMPLE)
    pick = slice(None, None, _OVERSAMPLE)
    pitch, roll, decel = pitch_f[pick], roll_f[pick], decel[pick]
    pitch_rate = np.gradient(pitch_f, dt)[pick]
    roll_rate = np.gradient(roll_f, dt)[pick]

    # Body rates for roll-then-pitch Euler angles with zero yaw rate.
    gyro = np.column_stack([roll_rate, pitch_rate * np.cos(roll), -pitch_rate * np.sin(roll)])
    motion = np.column_stack([-decel, np.zeros(n), np.zeros(n)])
    accel = gravity_in_device(roll, pitch) + _motion_to_device(motion, roll, pitch)

    clean_accel = accel.copy()
    if noise:
        nm = p.noise
        bias = rng.uniform(-nm.gyro_bias_max, nm.gyro_bias_max, size=3)
        accel = accel + rng.normal(0.0, nm.accel_sigma, size=accel.shape)
        gyro = gyro + bias + rng.normal(0.0, nm.gyro_sigma, size=gyro.shape)

    trace = LabeledTrace(SignalTrace(t, np.column_stack([accel, gyro]), fs, IMU_CHANNELS),
                         labels, BRAKING_STATES)
    if return_truth:
        return trace, {"roll": roll, "pitch": pitch, "motion_accel": motion,
                       "clean_accel": clean_accel, "pitch_rate": pitch_rate}
    return trace


def _motion_to_device(motion: NDArray, roll: NDArray, pitch: NDArray) -> NDArray:
    # transpose of the device-to-motion rotation, applied row-wise
    cr, sr, cp, sp = np.cos(roll), np.sin(roll), np.cos(pitch), np.sin(pitch)
    mx, my, mz = motion.T
    # ry^T @ m
    x1 = cp * mx - sp * mz
    z1 = sp * mx + cp * mz
    # rx^T @ (x1, my, z1)
    return np.column_stack([x1, cr * my + sr * z1, -sr * my + cr * z1])


# --------------------------------------------------------------------------
# hand postures and gestures

# Standardized hand pose per posture: position (cm) and orientation (deg).
POSTURE_VECTORS = np.array([
    [0.0, 20.0, 0.0, 0.0, 0.0, 0.0],      # straight
    [-8.0, 19.0, 1.0, -30.0, 5.0, -25.0],  # left
    [8.0, 19.0, 1.0, 30.0, 5.0, 25.0],     # right
    [0.0, 24.0, 5.0, 0.0, -45.0, 0.0],     # stop
    [0.0, 15.0, -4.0, 5.0, 40.0, 180.0 / 6],  # backward
])


# Hand-wave direction of each gesture (rows follow gesture ids 5..12), in
# units of the per-channel posture spread.
GESTURE_DIRECTIONS = np.array([
    [0.13, -0.14, 0.69, 0.11, -0.57, 0.39],
    [0.58, 0.42, -0.31, -0.56, -0.28, 0.02],
    [-0.83, -0.08, -0.44, -0.26, -0.19, -0.11],
    [0.21, 0.54, -0.07, 0.71, -0.35, 0.18],
    [0.57, 0.06, -0.47, -0.58, -0.29, 0.14],
    [-0.81, -0.17, -0.13, 0.43, 0.17, 0.29],
    [-0.24, -0.05, 0.29, 0.56, -0.47, 0.57],
    [0.46, 0.27, 0.09, -0.11, 0.5, 0.67],
])
GESTURE_FREQS = (1.5, 2.5, 3.5, 4.5)  # Hz, cycled over gesture ids
_POSTURE_SPREAD = POSTURE_VECTORS.std(axis=0) + 1.0


def gesture_label(src: int, dst: int) -> int:
    """Class id of the gesture performed between two postures.

    Table (posture ids 0 straight, 1 left, 2 right, 3 stop, 4 backward):

    ========= =============== ==========================================
    from, to  gesture         rule
    ========= =============== ==========================================
    0 -> b    straight>{b}    ids 5, 7, 9, 11 for b = 1, 2, 3, 4
    a -> 0    {a}>straight    ids 6, 8, 10, 12 for a = 1, 2, 3, 4
    a -> b    straight>{b}    a, b both non-straight: entering b counts
                              as the straight>{b} gesture
    ========= =============== ==========================================
    """
    if src == dst:
        raise ScenarioError("a gesture needs two distinct postures")
    if not (0 <= src < 5 and 0 <= dst < 5):
        raise ScenarioError(f"posture id out of range: {src}, {dst}")
    if dst == 0:
        return 5 + 2 * (src - 1) + 1
    return 5 + 2 * (dst - 1)


def synthesize_posture_trace(script: Sequence[int], seed: int = 0, fs: float = 20.0,
                             hold: float | tuple[float, float] = (1.5, 2.5),
                             transition: float = 1.2, noise_sigma: float = 0.3,
                             wave_amplitude: float = 8.0, wave_rise: float = 0.1,
                             settle: float = 0.2) -> LabeledTrace:
    """Piecewise-constant hand poses joined by transition gestures.

    Each posture is held for ``hold`` seconds (or a uniform draw from the
    range). A change takes ``transition`` seconds: the hand follows a
    raised-cosine path with a small lift while waving along the gesture's
    own direction and frequency. The wave ramps up over ``wave_rise``
    seconds and dies out ``settle`` seconds before the next posture.

    Parameters
    ----------
    script : sequence of int
        Posture ids in {0..4}; consecutive ids must differ.
    seed : int
        Seed for hold durations and sensor noise.
    wave_amplitude : float
        Wave amplitude in units of the per-channel posture spread.

    Returns
    -------
    LabeledTrace
        Six pose channels, labeled with posture ids and ``gesture_label``
        ids for the transitions.
    """
    script = [int(s) for s in script]
    if not script:
        raise ScenarioError("empty posture script")
    for s in script:
        if not 0 <= s < 5:
            raise ScenarioError(f"unknown posture id {s}")
    for a, b in zip(script, script[1:]):
        if a == b:
            raise ScenarioError(f"posture {a} repeated consecutively")
    rng = np.random.default_rng(seed)

    n_tr = int(round(transition * fs))
    k = np.arange(n_tr)
    u = (k + 0.5) / n_tr
    progress = 0.5 - 0.5 * np.cos(np.pi * u)
    n_wave = n_tr - int(round(settle * fs))
    rise = max(wave_rise * fs, 1.0)
    envelope = np.clip(np.minimum(k + 1, n_wave - k) / rise, 0.0, 1.0)

    chunks, labels = [], []
    for i, posture in enumerate(script):
        h = hold if np.isscalar(hold) else rng.uniform(*hold)
        n_hold = int(round(h * fs))
        chunks.append(np.tile(POSTURE_VECTORS[posture], (n_hold, 1)))
        labels += [posture] * n_hold
        if i + 1 < len(script):
            nxt = script[i + 1]
            gesture = gesture_label(posture, nxt)
            start, end = POSTURE_VECTORS[posture], POSTURE_VECTORS[nxt]
            path = start + progress[:, None] * (end - start)
            path[:, 2] += 4.0 * np.sin(np.pi * u)  # lift during the move
            freq = GESTURE_FREQS[(gesture - 5) % len(GESTURE_FREQS)]
            wave = envelope * np.cos(2.0 * np.pi * freq * k / fs)
            direction = GESTURE_DIRECTIONS[gesture - 5] * _POSTURE_SPREAD
            path += wave_amplitude * wave[:, None] * direction
            chunks.append(path)
            labels += [gesture] * n_tr
    data = np.vstack(chunks)
    data = data + rng.normal(0.0, noise_sigma, size=data.shape)
    t = np.arange(len(data)) / fs
    return LabeledTrace(SignalTrace(t, data, fs, POSTURE_CHANNELS),
                        np.asarray(labels, dtype=int), POSTURE_CLASSES)
